#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace riskcause {

/// Row-major dense matrix over a caller-chosen scalar (float for training,
/// double for numerical verification).
template <typename S>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<S> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, S(0)) {}

  S* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
  const S* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
  S& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  S at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
  void zero() { std::fill(d.begin(), d.end(), S(0)); }
};

/// Channel-major (c, h, w) feature tensor.
template <typename S>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<S> d;

  Tensor3() = default;
  Tensor3(int channels, int height, int width)
      : c(channels), h(height), w(width), d(static_cast<size_t>(channels) * height * width, S(0)) {}

  size_t plane() const { return static_cast<size_t>(h) * w; }
  S* channel(int ch) { return d.data() + ch * plane(); }
  const S* channel(int ch) const { return d.data() + ch * plane(); }
  S& at(int ch, int y, int x) { return d[ch * plane() + static_cast<size_t>(y) * w + x]; }
  S at(int ch, int y, int x) const { return d[ch * plane() + static_cast<size_t>(y) * w + x]; }
  void zero() { std::fill(d.begin(), d.end(), S(0)); }
};

/// Single-channel binary validity mask, values in {0,1}.
struct MaskPlane {
  int h = 0, w = 0;
  std::vector<uint8_t> d;

  MaskPlane() = default;
  MaskPlane(int height, int width, uint8_t fill = 1)
      : h(height), w(width), d(static_cast<size_t>(height) * width, fill) {}

  uint8_t& at(int y, int x) { return d[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return d[static_cast<size_t>(y) * w + x]; }

  bool all_ones() const {
    for (uint8_t v : d)
      if (v == 0) return false;
    return true;
  }
  bool operator==(const MaskPlane& o) const = default;
};

}  // namespace riskcause

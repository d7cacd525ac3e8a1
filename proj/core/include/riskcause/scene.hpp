#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace riskcause {

/// Axis-aligned box in frame-local pixel coordinates, x2 > x1, y2 > y1.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  BBox shifted(double dx, double dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }

  bool intersects(const BBox& o) const {
    return x1 < o.x2 && o.x1 < x2 && y1 < o.y2 && o.y1 < y2;
  }
  bool operator==(const BBox& o) const = default;
};

enum class ObjectClass { vehicle, pedestrian };

std::string to_string(ObjectClass c);
ObjectClass object_class_from_string(const std::string& s);

/// A tracked object: stable id plus per-frame boxes. An object may be absent
/// on some frames inside the observation window.
struct Tracklet {
  int id = 0;
  ObjectClass cls = ObjectClass::vehicle;
  std::map<int, BBox> boxes;  // frame index -> box

  const BBox* box_at(int frame) const {
    auto it = boxes.find(frame);
    return it == boxes.end() ? nullptr : &it->second;
  }
};

enum class Behavior { go, stop };

std::string to_string(Behavior b);
Behavior behavior_from_string(const std::string& s);

enum class Scenario {
  crossing_vehicle,
  crossing_pedestrian,
  parked_vehicle,
  congestion,
  free_flow,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
inline constexpr int kScenarioCount = 5;

/// RGB image with values in [0,1]. Pixels are stored as 8-bit (what the PNG
/// files hold) and exposed as floats, so a store/load round trip is exact.
class Image {
 public:
  Image() = default;
  Image(int height, int width) : h_(height), w_(width), px_(static_cast<size_t>(height) * width * 3, 0) {}

  int height() const { return h_; }
  int width() const { return w_; }

  float at(int y, int x, int c) const {
    return static_cast<float>(px_[idx(y, x, c)]) * (1.0f / 255.0f);
  }
  void set(int y, int x, int c, float v) {
    if (v < 0.0f) v = 0.0f;
    if (v > 1.0f) v = 1.0f;
    px_[idx(y, x, c)] = static_cast<uint8_t>(v * 255.0f + 0.5f);
  }
  void set_rgb(int y, int x, float r, float g, float b) {
    set(y, x, 0, r);
    set(y, x, 1, g);
    set(y, x, 2, b);
  }

  const std::vector<uint8_t>& raw() const { return px_; }
  std::vector<uint8_t>& raw() { return px_; }

  bool operator==(const Image& o) const = default;

 private:
  size_t idx(int y, int x, int c) const {
    return (static_cast<size_t>(y) * w_ + x) * 3 + c;
  }
  int h_ = 0, w_ = 0;
  std::vector<uint8_t> px_;  // interleaved RGB, row major
};

/// One observation window: T frames, tracklets, behavior label, and (for
/// labeled data) the id of the object that caused a Stop.
struct Episode {
  std::string id;
  std::vector<Image> frames;
  std::vector<Tracklet> tracklets;
  Behavior label = Behavior::go;
  std::optional<int> cause_id;
  Scenario scenario = Scenario::free_flow;

  int height() const { return frames.empty() ? 0 : frames[0].height(); }
  int width() const { return frames.empty() ? 0 : frames[0].width(); }

  const Tracklet* tracklet_by_id(int id) const {
    for (const auto& t : tracklets)
      if (t.id == id) return &t;
    return nullptr;
  }
};

/// Softmax pair over the two driver behaviors.
struct Prediction {
  double s_go = 0.5;
  double s_stop = 0.5;

  Behavior label() const { return s_go < 0.5 ? Behavior::stop : Behavior::go; }
};

/// Per-object `Go' confidence under intervention, plus the un-intervened
/// baseline.
struct RiskScoreTable {
  double baseline_go = 0.0;
  std::map<int, double> go_under_intervention;  // tracklet id -> s_go
};

/// Checks every type invariant and returns human-readable violations.
/// Empty result means the episode is well formed for the given window size.
std::vector<std::string> validate_episode(const Episode& episode, int expected_frames = 3);

}  // namespace riskcause

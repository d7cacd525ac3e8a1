#pragma once

#include <optional>
#include <vector>

#include "riskcause/model.hpp"
#include "riskcause/scene.hpp"
#include "riskcause/tensor.hpp"

namespace riskcause {

/// Per-frame binary masks, zero exactly over the rasterized boxes of the
/// target tracklet (when one is set).
struct InterventionMask {
  std::vector<MaskPlane> masks;   // T x (H,W)
  std::optional<int> target_id;
};

/// Pixel span covered by a float box: [floor(x1), ceil(x2)) x
/// [floor(y1), ceil(y2)), clipped to the frame. Over-covers sub-pixel edges
/// so rendered object pixels are always inside the mask zeros.
struct PixelSpan {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // half-open
  bool contains(int y, int x) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};
PixelSpan rasterize_box(const BBox& box, int height, int width);

/// Masks per Eq-2 semantics: zero on the target's rasterized box on frames
/// where the target is present, all-ones elsewhere. target_id = nullopt
/// yields the no-intervention all-ones masks. Throws DataError for ids not
/// in the episode.
InterventionMask generate_mask(const Episode& episode, std::optional<int> target_id);

/// Copy of the tracklet list without the target; input untouched.
/// Throws DataError for unknown ids.
std::vector<Tracklet> remove_tracklet(const std::vector<Tracklet>& tracklets, int target_id);

/// A fully constructed counterfactual input.
struct InterventionResult {
  std::vector<Image> frames;
  std::vector<MaskPlane> masks;
  std::vector<Tracklet> tracklets;
};

/// Builds the intervened input for the given mask type:
///  - convolution: frames unchanged, Eq-2 masks;
///  - rgb: target pixels zeroed in the frames, all-ones masks.
/// The target is removed from the tracklets in both modes.
InterventionResult intervene(const Episode& episode, int target_id, MaskType mask_type);

template <typename S>
ModelInput<S> intervened_input(const Episode& episode, int target_id, MaskType mask_type);

}  // namespace riskcause

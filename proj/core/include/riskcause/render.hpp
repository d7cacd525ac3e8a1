#pragma once

#include <array>
#include <vector>

#include "riskcause/scene.hpp"
#include "riskcause/synthgen.hpp"

namespace riskcause {

struct Rgb {
  float r = 0, g = 0, b = 0;
};

/// Deterministic id -> color mapping shared by annotated frames and bar
/// charts; avoids the reserved red (ground truth) and green (prediction).
Rgb palette_color(int index);

/// Fills pixels whose centers fall inside the box.
void fill_box(Image& image, const BBox& box, const Rgb& color);

/// 1px outline, thickness grown outward by `thickness`.
void outline_box(Image& image, const BBox& box, const Rgb& color, int thickness = 1);

/// Renders the road layout and ego marker (with intent indicator) only.
Image render_background(const SceneGeometry& geometry, EgoIntent intent);

/// Full frame at time t: background plus every tracklet box present at t.
Image render_frame(const SceneGeometry& geometry, EgoIntent intent,
                   const std::vector<Tracklet>& tracklets, int frame);

/// Horizontal-bar risk-score chart: one bar per (id, score) in the given
/// order, colored by palette index, plus a vertical black line at the
/// baseline score. Scores are clamped to [0,1].
Image render_score_chart(const std::vector<std::pair<int, double>>& scores, double baseline,
                         int width = 320, int row_height = 18);

}  // namespace riskcause

#include "riskcause/render.hpp"

#include <algorithm>
#include <cmath>

namespace riskcause {

namespace {

constexpr Rgb kField{0.13f, 0.16f, 0.13f};
constexpr Rgb kRoad{0.30f, 0.30f, 0.32f};
constexpr Rgb kEgoLane{0.44f, 0.44f, 0.46f};
constexpr Rgb kEdgeLine{0.60f, 0.60f, 0.60f};
constexpr Rgb kCenterLine{0.88f, 0.88f, 0.88f};
constexpr Rgb kEgo{0.20f, 0.40f, 0.90f};
constexpr Rgb kIndicator{0.95f, 0.95f, 0.95f};
constexpr Rgb kVehicle{0.85f, 0.15f, 0.15f};
constexpr Rgb kPedestrian{0.95f, 0.85f, 0.20f};

Rgb class_color(ObjectClass c) { return c == ObjectClass::vehicle ? kVehicle : kPedestrian; }

}  // namespace

Rgb palette_color(int index) {
  // Hues spread over the wheel, skipping the bands around pure red and green.
  static const std::array<Rgb, 8> table = {{
      {0.25f, 0.55f, 0.95f},  // blue
      {0.95f, 0.65f, 0.15f},  // orange
      {0.60f, 0.30f, 0.85f},  // purple
      {0.15f, 0.75f, 0.75f},  // teal
      {0.90f, 0.45f, 0.65f},  // pink
      {0.70f, 0.70f, 0.25f},  // olive
      {0.45f, 0.35f, 0.20f},  // brown
      {0.55f, 0.75f, 0.95f},  // light blue
  }};
  return table[static_cast<size_t>(index) % table.size()];
}

void fill_box(Image& image, const BBox& box, const Rgb& color) {
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1 + 0.5)));
  const int y1 = std::min(image.height(), static_cast<int>(std::ceil(box.y2 - 0.5)));
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1 + 0.5)));
  const int x1 = std::min(image.width(), static_cast<int>(std::ceil(box.x2 - 0.5)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) image.set_rgb(y, x, color.r, color.g, color.b);
}

void outline_box(Image& image, const BBox& box, const Rgb& color, int thickness) {
  for (int k = 0; k < thickness; ++k) {
    const BBox b{box.x1 - k, box.y1 - k, box.x2 + k, box.y2 + k};
    const int y0 = static_cast<int>(std::floor(b.y1));
    const int y1 = static_cast<int>(std::ceil(b.y2)) - 1;
    const int x0 = static_cast<int>(std::floor(b.x1));
    const int x1 = static_cast<int>(std::ceil(b.x2)) - 1;
    auto put = [&](int y, int x) {
      if (y >= 0 && y < image.height() && x >= 0 && x < image.width())
        image.set_rgb(y, x, color.r, color.g, color.b);
    };
    for (int x = x0; x <= x1; ++x) {
      put(y0, x);
      put(y1, x);
    }
    for (int y = y0; y <= y1; ++y) {
      put(y, x0);
      put(y, x1);
    }
  }
}

Image render_background(const SceneGeometry& g, EgoIntent intent) {
  Image img(g.height, g.width);
  fill_box(img, {0, 0, static_cast<double>(g.width), static_cast<double>(g.height)}, kField);

  // Roads; the ego's own lane gets a lighter surface.
  fill_box(img, {g.road_left(), 0, g.road_right(), static_cast<double>(g.height)}, kRoad);
  fill_box(img, {0, g.cross_top(), static_cast<double>(g.width), g.cross_bottom()}, kRoad);
  fill_box(img, {g.ego_lane_left(), 0, g.ego_lane_right(), static_cast<double>(g.height)},
           kEgoLane);

  // Edge lines, then lane dividers on top.
  fill_box(img, {g.road_left() - 1, 0, g.road_left(), static_cast<double>(g.height)}, kEdgeLine);
  fill_box(img, {g.road_right(), 0, g.road_right() + 1, static_cast<double>(g.height)}, kEdgeLine);
  fill_box(img, {0, g.cross_top() - 1, static_cast<double>(g.width), g.cross_top()}, kEdgeLine);
  fill_box(img, {0, g.cross_bottom(), static_cast<double>(g.width), g.cross_bottom() + 1}, kEdgeLine);
  fill_box(img, {g.road_center_x - 0.5, 0, g.road_center_x + 0.5, static_cast<double>(g.height)},
           kCenterLine);
  fill_box(img, {0, g.cross_center_y - 0.5, static_cast<double>(g.width), g.cross_center_y + 0.5},
           kCenterLine);

  // Ego marker with a front indicator showing the intent.
  const BBox ego = g.ego_box();
  fill_box(img, ego, kEgo);
  const double icx = intent == EgoIntent::straight ? ego.cx()
                     : intent == EgoIntent::left_turn ? ego.x1 + 2.0
                                                      : ego.x2 - 2.0;
  fill_box(img, {icx - 2, ego.y1, icx + 2, ego.y1 + 3}, kIndicator);
  return img;
}

Image render_frame(const SceneGeometry& g, EgoIntent intent, const std::vector<Tracklet>& tracklets,
                   int frame) {
  Image img = render_background(g, intent);
  for (const auto& tr : tracklets) {
    if (const BBox* box = tr.box_at(frame)) fill_box(img, *box, class_color(tr.cls));
  }
  // Ego stays on top.
  const BBox ego = g.ego_box();
  fill_box(img, ego, kEgo);
  const double icx = intent == EgoIntent::straight ? ego.cx()
                     : intent == EgoIntent::left_turn ? ego.x1 + 2.0
                                                      : ego.x2 - 2.0;
  fill_box(img, {icx - 2, ego.y1, icx + 2, ego.y1 + 3}, kIndicator);
  return img;
}

Image render_score_chart(const std::vector<std::pair<int, double>>& scores, double baseline,
                         int width, int row_height) {
  const int margin = 6;
  const int rows = std::max<int>(1, static_cast<int>(scores.size()));
  const int height = rows * row_height + 2 * margin;
  Image img(height, width);
  fill_box(img, {0, 0, static_cast<double>(width), static_cast<double>(height)},
           {0.98f, 0.98f, 0.98f});

  const double x0 = margin;
  const double x1 = width - margin;
  auto score_x = [&](double s) {
    s = std::clamp(s, 0.0, 1.0);
    return x0 + s * (x1 - x0);
  };

  for (size_t i = 0; i < scores.size(); ++i) {
    const double top = margin + static_cast<double>(i) * row_height + 3;
    const double bottom = top + row_height - 6;
    fill_box(img, {x0, top, score_x(scores[i].second), bottom},
             palette_color(static_cast<int>(i)));
  }
  // Baseline marker: vertical black line across the chart.
  const double bx = score_x(baseline);
  fill_box(img, {bx - 0.5, static_cast<double>(margin), bx + 0.5,
                 static_cast<double>(height - margin)},
           {0.0f, 0.0f, 0.0f});
  return img;
}

}  // namespace riskcause

#include "riskcause/intervention.hpp"

#include <algorithm>
#include <cmath>

#include "riskcause/errors.hpp"

namespace riskcause {

PixelSpan rasterize_box(const BBox& box, int height, int width) {
  PixelSpan s;
  s.x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  s.y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  s.x1 = std::min(width, static_cast<int>(std::ceil(box.x2)));
  s.y1 = std::min(height, static_cast<int>(std::ceil(box.y2)));
  return s;
}

InterventionMask generate_mask(const Episode& episode, std::optional<int> target_id) {
  const int h = episode.height();
  const int w = episode.width();
  InterventionMask im;
  im.target_id = target_id;
  im.masks.assign(episode.frames.size(), MaskPlane(h, w, 1));
  if (!target_id.has_value()) return im;

  const Tracklet* target = episode.tracklet_by_id(*target_id);
  if (!target) throw DataError("generate_mask: unknown target id " + std::to_string(*target_id));

  for (const auto& [frame, box] : target->boxes) {
    if (frame < 0 || frame >= static_cast<int>(im.masks.size())) continue;
    const PixelSpan span = rasterize_box(box, h, w);
    for (int y = span.y0; y < span.y1; ++y)
      for (int x = span.x0; x < span.x1; ++x) im.masks[frame].at(y, x) = 0;
  }
  return im;
}

std::vector<Tracklet> remove_tracklet(const std::vector<Tracklet>& tracklets, int target_id) {
  bool found = false;
  std::vector<Tracklet> out;
  out.reserve(tracklets.size());
  for (const auto& t : tracklets) {
    if (t.id == target_id) {
      found = true;
      continue;
    }
    out.push_back(t);
  }
  if (!found) throw DataError("remove_tracklet: unknown target id " + std::to_string(target_id));
  return out;
}

InterventionResult intervene(const Episode& episode, int target_id, MaskType mask_type) {
  const Tracklet* target = episode.tracklet_by_id(target_id);
  if (!target) throw DataError("intervene: unknown target id " + std::to_string(target_id));

  InterventionResult out;
  out.tracklets = remove_tracklet(episode.tracklets, target_id);
  out.frames = episode.frames;

  if (mask_type == MaskType::convolution) {
    out.masks = generate_mask(episode, target_id).masks;
  } else {
    // RGB mode: the intervention lives in the pixels, the masks stay open.
    out.masks.assign(episode.frames.size(),
                     MaskPlane(episode.height(), episode.width(), 1));
    for (const auto& [frame, box] : target->boxes) {
      if (frame < 0 || frame >= static_cast<int>(out.frames.size())) continue;
      const PixelSpan span = rasterize_box(box, episode.height(), episode.width());
      for (int y = span.y0; y < span.y1; ++y)
        for (int x = span.x0; x < span.x1; ++x) out.frames[frame].set_rgb(y, x, 0, 0, 0);
    }
  }
  return out;
}

template <typename S>
ModelInput<S> intervened_input(const Episode& episode, int target_id, MaskType mask_type) {
  InterventionResult r = intervene(episode, target_id, mask_type);
  return to_model_input<S>(r.frames, r.masks, r.tracklets);
}

template ModelInput<float> intervened_input(const Episode&, int, MaskType);
template ModelInput<double> intervened_input(const Episode&, int, MaskType);

}  // namespace riskcause

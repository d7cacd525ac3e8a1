#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "riskcause/scene.hpp"

namespace riskcause {

enum class EgoIntent { straight, left_turn, right_turn };

std::string to_string(EgoIntent i);
EgoIntent ego_intent_from_string(const std::string& s);

/// Fixed top-down scene layout: a vertical two-lane road with the ego in the
/// right lane at the bottom, crossed by a horizontal road. All values are
/// pixels or pixels/frame.
struct SceneGeometry {
  int width = 96;
  int height = 96;
  int frames = 3;

  double lane_width = 18.0;     // one lane
  double road_center_x = 48.0;  // divider between ego and oncoming lane
  double cross_center_y = 34.0; // horizontal road center
  double path_margin = 8.0;     // dilation of the ego path polygon
  int lookahead = 6;            // frames the oracle extrapolates

  double ego_width = 11.0;
  double ego_length = 15.0;
  double ego_gap = 4.0;  // distance from ego rear to the bottom edge

  // Ego lane spans [road_center_x, road_center_x + lane_width].
  double ego_lane_left() const { return road_center_x; }
  double ego_lane_right() const { return road_center_x + lane_width; }
  double ego_center_x() const { return road_center_x + 0.5 * lane_width; }
  double ego_front_y() const { return height - ego_gap - ego_length; }
  BBox ego_box() const {
    const double cx = ego_center_x();
    return {cx - 0.5 * ego_width, ego_front_y(), cx + 0.5 * ego_width, height - ego_gap};
  }
  double road_left() const { return road_center_x - lane_width; }
  double road_right() const { return road_center_x + lane_width; }
  double cross_top() const { return cross_center_y - lane_width; }
  double cross_bottom() const { return cross_center_y + lane_width; }
};

struct SpeedRanges {
  double vehicle_min = 3.5, vehicle_max = 7.0;     // crossing vehicles
  double pedestrian_min = 2.0, pedestrian_max = 4.0;
  double ambient_min = 0.5, ambient_max = 2.5;     // distractor motion
};

/// Everything needed to generate one episode deterministically.
struct ScenarioConfig {
  Scenario scenario = Scenario::free_flow;
  int n_distractors = 3;
  EgoIntent ego_intent = EgoIntent::straight;
  SceneGeometry geometry;
  SpeedRanges speeds;
  uint64_t rng_seed = 0;
  /// Whether the episode should contain a causal object. The label itself is
  /// always re-derived by the path oracle after placement.
  bool want_stop = false;
};

/// Throws DataError when ranges are non-positive or the distractor count is
/// outside [0, 12].
void validate_config(const ScenarioConfig& config);

/// Union of axis-aligned rectangles covering where the ego intends to drive.
struct PathRegion {
  std::vector<BBox> rects;

  bool intersects(const BBox& box) const {
    for (const auto& r : rects)
      if (r.intersects(box)) return true;
    return false;
  }
};

PathRegion ego_path_region(const SceneGeometry& geometry, EgoIntent intent);

/// Per-frame velocity estimated from the last two frames the tracklet is
/// present on; zero when only one frame is observed.
struct Velocity {
  double dx = 0, dy = 0;
};
Velocity estimate_velocity(const Tracklet& tracklet);

/// The labeling rule: an object is causal iff its constant-velocity
/// extrapolation from its last observed frame intersects the ego path region
/// at any of the next `lookahead` frame steps (step 0 = current overlap).
bool is_causal(const Tracklet& tracklet, const PathRegion& region, int lookahead);

/// Runs is_causal over all tracklets; in generated data at most one object is
/// causal and it becomes the episode's cause.
std::vector<int> causal_ids(const std::vector<Tracklet>& tracklets, const SceneGeometry& geometry,
                            EgoIntent intent);

/// Renders and labels one episode. Placement is rejection-sampled (up to 100
/// tries per object) to keep boxes in frame, separated, and consistent with
/// want_stop; throws DataError when sampling cannot satisfy the constraints.
Episode generate_episode(const ScenarioConfig& config);

/// Dataset-level knobs. Scenario weights follow the Scenario enum order.
struct GeneratorConfig {
  SceneGeometry geometry;
  SpeedRanges speeds;
  std::array<double, kScenarioCount> scenario_weights{1, 1, 1, 1, 1};
  double stop_rate = 0.625;  // P(causal object placed | non-free-flow scenario)
  int distractors_min = 2;
  int distractors_max = 5;
  EgoIntent ego_intent = EgoIntent::straight;
  uint64_t seed = 0;
};

std::string generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const std::string& text);

struct DatasetCounts {
  int train = 0;
  int test = 0;
};

/// Generates counts.train + counts.test episodes and writes a dataset
/// directory (manifest + per-episode dirs). Test-split Stop episodes always
/// contain exactly one causal object. Fails if out_dir already holds a
/// dataset and force is false.
void generate_dataset(const GeneratorConfig& config, const DatasetCounts& counts,
                      const std::string& out_dir, bool force = false);

}  // namespace riskcause

#include "riskcause/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "nlohmann/json.hpp"
#include "riskcause/errors.hpp"
#include "riskcause/render.hpp"
#include "riskcause/rng.hpp"
#include "riskcause/store.hpp"

namespace riskcause {

using json = nlohmann::ordered_json;

std::string to_string(EgoIntent i) {
  switch (i) {
    case EgoIntent::straight: return "straight";
    case EgoIntent::left_turn: return "left_turn";
    case EgoIntent::right_turn: return "right_turn";
  }
  throw DataError("invalid ego intent enum value");
}

EgoIntent ego_intent_from_string(const std::string& s) {
  if (s == "straight") return EgoIntent::straight;
  if (s == "left_turn") return EgoIntent::left_turn;
  if (s == "right_turn") return EgoIntent::right_turn;
  throw DataError("unknown ego intent: " + s);
}

void validate_config(const ScenarioConfig& c) {
  if (c.n_distractors < 0 || c.n_distractors > 12)
    throw DataError("scenario config: distractor count outside [0, 12]");
  auto positive = [](double lo, double hi) { return lo > 0 && hi >= lo; };
  if (!positive(c.speeds.vehicle_min, c.speeds.vehicle_max) ||
      !positive(c.speeds.pedestrian_min, c.speeds.pedestrian_max) ||
      !positive(c.speeds.ambient_min, c.speeds.ambient_max))
    throw DataError("scenario config: speed ranges must be positive");
  if (c.geometry.width <= 0 || c.geometry.height <= 0 || c.geometry.frames <= 0)
    throw DataError("scenario config: non-positive geometry");
  if (c.geometry.lookahead < 0) throw DataError("scenario config: negative lookahead");
}

PathRegion ego_path_region(const SceneGeometry& g, EgoIntent intent) {
  const double m = g.path_margin;
  PathRegion region;
  // Lane strip ahead of the ego, dilated.
  region.rects.push_back(
      {g.ego_lane_left() - m, 0.0, g.ego_lane_right() + m, g.ego_front_y()});
  if (intent == EgoIntent::left_turn) {
    region.rects.push_back(
        {0.0, g.cross_top() - m, g.ego_lane_right() + m, g.cross_bottom() + m});
  } else if (intent == EgoIntent::right_turn) {
    region.rects.push_back({g.ego_lane_left() - m, g.cross_top() - m,
                            static_cast<double>(g.width), g.cross_bottom() + m});
  }
  return region;
}

Velocity estimate_velocity(const Tracklet& t) {
  if (t.boxes.size() < 2) return {};
  auto last = std::prev(t.boxes.end());
  auto prev = std::prev(last);
  const double dt = last->first - prev->first;
  return {(last->second.x1 - prev->second.x1) / dt, (last->second.y1 - prev->second.y1) / dt};
}

bool is_causal(const Tracklet& t, const PathRegion& region, int lookahead) {
  if (t.boxes.empty()) return false;
  const BBox last = t.boxes.rbegin()->second;
  const Velocity v = estimate_velocity(t);
  for (int step = 0; step <= lookahead; ++step) {
    if (region.intersects(last.shifted(v.dx * step, v.dy * step))) return true;
  }
  return false;
}

std::vector<int> causal_ids(const std::vector<Tracklet>& tracklets, const SceneGeometry& g,
                            EgoIntent intent) {
  const PathRegion region = ego_path_region(g, intent);
  std::vector<int> out;
  for (const auto& t : tracklets)
    if (is_causal(t, region, g.lookahead)) out.push_back(t.id);
  return out;
}

// ---------------------------------------------------------------------------
// Placement
// ---------------------------------------------------------------------------

namespace {

struct MovingObject {
  ObjectClass cls = ObjectClass::vehicle;
  BBox box;  // at frame 0
  double vx = 0, vy = 0;
};

constexpr double kVehicleLong = 18.0;  // along travel direction
constexpr double kVehicleShort = 11.0;
constexpr double kPedSize = 7.0;
constexpr double kEdgeInset = 1.0;   // objects keep this far inside the frame
constexpr double kSeparation = 5.0;  // min gap between any two object boxes
constexpr double kClearance = 4.0;   // benign objects stay this far off the path

Tracklet to_tracklet(const MovingObject& o, int id, int frames) {
  Tracklet t;
  t.id = id;
  t.cls = o.cls;
  for (int f = 0; f < frames; ++f) t.boxes[f] = o.box.shifted(o.vx * f, o.vy * f);
  return t;
}

bool in_frame_all(const MovingObject& o, const SceneGeometry& g) {
  for (int f = 0; f < g.frames; ++f) {
    const BBox b = o.box.shifted(o.vx * f, o.vy * f);
    if (b.x1 < kEdgeInset || b.y1 < kEdgeInset || b.x2 > g.width - kEdgeInset ||
        b.y2 > g.height - kEdgeInset)
      return false;
  }
  return true;
}

bool overlaps_existing(const MovingObject& o, const std::vector<MovingObject>& placed,
                       const SceneGeometry& g) {
  const BBox ego = g.ego_box();
  for (int f = 0; f < g.frames; ++f) {
    const BBox b = o.box.shifted(o.vx * f, o.vy * f);
    const BBox pad{b.x1 - kSeparation, b.y1 - kSeparation, b.x2 + kSeparation, b.y2 + kSeparation};
    if (pad.intersects(ego)) return true;
    for (const auto& other : placed) {
      if (pad.intersects(other.box.shifted(other.vx * f, other.vy * f))) return true;
    }
  }
  return false;
}

BBox box_from_center(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// --- causal templates: one object set on a path-intersecting course ---

MovingObject causal_crosser(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  const bool is_ped = c.scenario == Scenario::crossing_pedestrian;
  const double speed = is_ped ? rng.uniform(c.speeds.pedestrian_min, c.speeds.pedestrian_max)
                              : rng.uniform(c.speeds.vehicle_min, c.speeds.vehicle_max);
  const double ow = is_ped ? kPedSize : kVehicleLong;
  const double oh = is_ped ? kPedSize : kVehicleShort;
  const double band_left = g.ego_lane_left() - g.path_margin;
  const double band_right = g.ego_lane_right() + g.path_margin;
  const double cy = rng.uniform(g.cross_top() + 0.5 * oh + 1, g.cross_bottom() - 0.5 * oh - 1);

  MovingObject o;
  o.cls = is_ped ? ObjectClass::pedestrian : ObjectClass::vehicle;
  o.vy = 0;
  // Arrives at the path band t_hit frames after the last observed frame;
  // arrivals are kept imminent so causal crossers sit visibly close.
  const double t_hit = rng.uniform(0.5, std::min(2.5, static_cast<double>(g.lookahead)));
  if (rng.bernoulli(0.5)) {
    o.vx = speed;  // moving right, approaching from the left
    const double x2_final = band_left - speed * t_hit;
    o.box = {x2_final - ow - o.vx * (g.frames - 1), cy - 0.5 * oh,
             x2_final - o.vx * (g.frames - 1), cy + 0.5 * oh};
  } else {
    o.vx = -speed;  // approaching from the right
    const double x1_final = band_right + speed * t_hit;
    o.box = {x1_final - o.vx * (g.frames - 1), cy - 0.5 * oh,
             x1_final + ow - o.vx * (g.frames - 1), cy + 0.5 * oh};
  }
  return o;
}

MovingObject causal_parked(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  MovingObject o;
  o.cls = ObjectClass::vehicle;
  // Static, straddling the ego lane's outer edge.
  const double x1 = rng.uniform(g.ego_lane_right() - 3.0, g.ego_lane_right() + 3.0);
  const double cy = rng.uniform(10.0 + 0.5 * kVehicleLong, g.ego_front_y() - 14.0 - 0.5 * kVehicleLong);
  o.box = {x1, cy - 0.5 * kVehicleLong, x1 + kVehicleShort, cy + 0.5 * kVehicleLong};
  return o;
}

MovingObject causal_lead(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  MovingObject o;
  o.cls = ObjectClass::vehicle;
  // Stopped in the ego lane ahead.
  const double cx = rng.uniform(g.ego_center_x() - 2.0, g.ego_center_x() + 2.0);
  const double cy = rng.uniform(16.0 + 0.5 * kVehicleLong, g.ego_front_y() - 12.0 - 0.5 * kVehicleLong);
  o.box = box_from_center(cx, cy, kVehicleShort, kVehicleLong);
  return o;
}

MovingObject sample_causal(const ScenarioConfig& c, Rng& rng) {
  switch (c.scenario) {
    case Scenario::crossing_vehicle:
    case Scenario::crossing_pedestrian: return causal_crosser(c, rng);
    case Scenario::parked_vehicle: return causal_parked(c, rng);
    case Scenario::congestion: return causal_lead(c, rng);
    case Scenario::free_flow: break;
  }
  throw DataError("free_flow scenario cannot place a causal object");
}

// --- benign scenario objects and distractors ---

MovingObject benign_crosser(const ScenarioConfig& c, Rng& rng, bool pedestrian) {
  const SceneGeometry& g = c.geometry;
  const double speed = pedestrian ? rng.uniform(c.speeds.pedestrian_min, c.speeds.pedestrian_max)
                                  : rng.uniform(c.speeds.vehicle_min, c.speeds.vehicle_max);
  const double ow = pedestrian ? kPedSize : kVehicleLong;
  const double oh = pedestrian ? kPedSize : kVehicleShort;
  const double band_left = g.ego_lane_left() - g.path_margin;
  const double band_right = g.ego_lane_right() + g.path_margin;
  const double cy = rng.uniform(g.cross_top() + 0.5 * oh + 1, g.cross_bottom() - 0.5 * oh - 1);

  MovingObject o;
  o.cls = pedestrian ? ObjectClass::pedestrian : ObjectClass::vehicle;
  o.vy = 0;
  // Receding traffic keeps a wider berth than arriving causal crossers ever
  // reach, so proximity and heading both separate the two populations. The
  // start position is drawn from the in-frame-feasible slice directly.
  const double near = kClearance + 6.0;
  const double travel = speed * (g.frames - 1);
  const bool left_ok = band_left - near >= kEdgeInset + ow + travel;
  const bool right_ok = band_right + near + ow + travel <= g.width - kEdgeInset;
  if (!left_ok && !right_ok) throw DataError("benign crosser infeasible at this speed");
  const bool go_left = left_ok && (!right_ok || rng.bernoulli(0.5));
  if (go_left) {
    o.vx = -speed;
    const double hi = band_left - near;
    const double lo = std::max(hi - 12.0, kEdgeInset + ow + travel);
    const double x2 = rng.uniform(lo, hi);
    o.box = {x2 - ow, cy - 0.5 * oh, x2, cy + 0.5 * oh};
  } else {
    o.vx = speed;
    const double lo = band_right + near;
    const double hi = std::min(lo + 12.0, g.width - kEdgeInset - ow - travel);
    const double x1 = rng.uniform(lo, hi);
    o.box = {x1, cy - 0.5 * oh, x1 + ow, cy + 0.5 * oh};
  }
  return o;
}

MovingObject benign_parked(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  MovingObject o;
  o.cls = ObjectClass::vehicle;
  const double band_right = g.ego_lane_right() + g.path_margin;
  const double x1 = rng.uniform(band_right + kClearance, g.width - kVehicleShort - 2.0);
  const double cy = rng.uniform(6.0 + 0.5 * kVehicleLong, g.height - 8.0 - 0.5 * kVehicleLong);
  o.box = {x1, cy - 0.5 * kVehicleLong, x1 + kVehicleShort, cy + 0.5 * kVehicleLong};
  return o;
}

MovingObject benign_oncoming_queue(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  MovingObject o;
  o.cls = ObjectClass::vehicle;
  // Static traffic in the far half of the oncoming lane.
  const double band_left = g.ego_lane_left() - g.path_margin;
  const double x2 = rng.uniform(g.road_left() - 2.0, band_left - kClearance);
  const double cy = rng.uniform(10.0 + 0.5 * kVehicleLong, g.height - 14.0 - 0.5 * kVehicleLong);
  o.box = {x2 - kVehicleShort, cy - 0.5 * kVehicleLong, x2, cy + 0.5 * kVehicleLong};
  return o;
}

MovingObject sample_scenario_benign(const ScenarioConfig& c, Rng& rng) {
  switch (c.scenario) {
    case Scenario::crossing_vehicle: return benign_crosser(c, rng, false);
    case Scenario::crossing_pedestrian: return benign_crosser(c, rng, true);
    case Scenario::parked_vehicle: return benign_parked(c, rng);
    case Scenario::congestion: return benign_oncoming_queue(c, rng);
    case Scenario::free_flow: break;
  }
  throw DataError("free_flow scenario has no scenario object");
}

MovingObject sample_distractor(const ScenarioConfig& c, Rng& rng) {
  const SceneGeometry& g = c.geometry;
  const double band_left = g.ego_lane_left() - g.path_margin;
  const double band_right = g.ego_lane_right() + g.path_margin;
  MovingObject o;
  switch (rng.uniform_int(0, 5)) {
    case 0: {  // parked on the right shoulder
      o.cls = ObjectClass::vehicle;
      const double x1 = rng.uniform(band_right + kClearance, g.width - kVehicleShort - 2.0);
      const double cy = rng.uniform(4.0 + 0.5 * kVehicleLong, g.height - 6.0 - 0.5 * kVehicleLong);
      o.box = {x1, cy - 0.5 * kVehicleLong, x1 + kVehicleShort, cy + 0.5 * kVehicleLong};
      break;
    }
    case 1: {  // parked left of the road
      o.cls = ObjectClass::vehicle;
      const double x2 = rng.uniform(kVehicleShort + 2.0, g.road_left() - 2.0);
      const double cy = rng.uniform(4.0 + 0.5 * kVehicleLong, g.height - 6.0 - 0.5 * kVehicleLong);
      o.box = {x2 - kVehicleShort, cy - 0.5 * kVehicleLong, x2, cy + 0.5 * kVehicleLong};
      break;
    }
    case 2: {  // pedestrian on the right sidewalk, walking along the road
      o.cls = ObjectClass::pedestrian;
      const double x1 = rng.uniform(band_right + kClearance, g.width - kPedSize - 2.0);
      const double cy = rng.uniform(8.0, g.height - 10.0);
      o.vy = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(c.speeds.ambient_min, c.speeds.ambient_max);
      o.box = box_from_center(x1 + 0.5 * kPedSize, cy, kPedSize, kPedSize);
      break;
    }
    case 3: {  // pedestrian left of the road
      o.cls = ObjectClass::pedestrian;
      const double x2 = rng.uniform(kPedSize + 2.0, g.road_left() - 2.0);
      const double cy = rng.uniform(8.0, g.height - 10.0);
      o.vy = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(c.speeds.ambient_min, c.speeds.ambient_max);
      o.box = box_from_center(x2 - 0.5 * kPedSize, cy, kPedSize, kPedSize);
      break;
    }
    case 4: {  // receding crosser on the horizontal road
      const bool ped = rng.bernoulli(0.4);
      return benign_crosser(c, rng, ped);
    }
    default: {  // oncoming traffic hugging the far edge, driving towards us
      o.cls = ObjectClass::vehicle;
      const double x2 = rng.uniform(g.road_left() - 2.0, band_left - kClearance);
      const double cy = rng.uniform(10.0, g.height - 18.0);
      o.vy = rng.uniform(c.speeds.ambient_min, c.speeds.ambient_max);
      o.box = {x2 - kVehicleShort, cy - 0.5 * kVehicleLong, x2, cy + 0.5 * kVehicleLong};
      break;
    }
  }
  return o;
}

}  // namespace

Episode generate_episode(const ScenarioConfig& config) {
  validate_config(config);
  const SceneGeometry& g = config.geometry;
  Rng rng(derive_seed(config.rng_seed, 0x5ce9e));
  const PathRegion region = ego_path_region(g, config.ego_intent);

  const bool place_causal = config.want_stop && config.scenario != Scenario::free_flow;
  const bool place_scenario_benign = !config.want_stop && config.scenario != Scenario::free_flow;

  std::vector<MovingObject> placed;
  auto place = [&](auto&& sampler, bool must_be_causal, const char* what) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      MovingObject o;
      try {
        o = sampler(config, rng);
      } catch (const DataError&) {
        continue;  // infeasible draw (e.g. speed too high for the frame); redraw
      }
      if (!in_frame_all(o, g)) continue;
      if (overlaps_existing(o, placed, g)) continue;
      const Tracklet probe = to_tracklet(o, 0, g.frames);
      if (is_causal(probe, region, g.lookahead) != must_be_causal) continue;
      placed.push_back(o);
      return;
    }
    throw DataError(std::string("generate_episode: could not place ") + what +
                    " after 100 tries");
  };

  if (place_causal) place([](const auto& c, Rng& r) { return sample_causal(c, r); }, true, "causal object");
  if (place_scenario_benign)
    place([](const auto& c, Rng& r) { return sample_scenario_benign(c, r); }, false,
          "scenario object");
  for (int i = 0; i < config.n_distractors; ++i)
    place([](const auto& c, Rng& r) { return sample_distractor(c, r); }, false, "distractor");

  // Shuffle id assignment so the causal object's id carries no signal.
  const int n = static_cast<int>(placed.size());
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(ids[i], ids[rng.uniform_int(0, i)]);

  Episode ep;
  ep.scenario = config.scenario;
  for (int i = 0; i < n; ++i) ep.tracklets.push_back(to_tracklet(placed[i], ids[i], g.frames));
  std::sort(ep.tracklets.begin(), ep.tracklets.end(),
            [](const Tracklet& a, const Tracklet& b) { return a.id < b.id; });

  const std::vector<int> causes = causal_ids(ep.tracklets, g, config.ego_intent);
  if (causes.size() > 1)
    throw DataError("generate_episode: multiple causal objects after placement");
  if (causes.empty() != !place_causal)
    throw DataError("generate_episode: oracle label disagrees with requested placement");
  ep.label = causes.empty() ? Behavior::go : Behavior::stop;
  if (!causes.empty()) ep.cause_id = causes.front();

  ep.frames.reserve(g.frames);
  for (int t = 0; t < g.frames; ++t)
    ep.frames.push_back(render_frame(g, config.ego_intent, ep.tracklets, t));
  return ep;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace {

json geometry_to_json(const SceneGeometry& g) {
  return {{"width", g.width},
          {"height", g.height},
          {"frames", g.frames},
          {"lane_width", g.lane_width},
          {"road_center_x", g.road_center_x},
          {"cross_center_y", g.cross_center_y},
          {"path_margin", g.path_margin},
          {"lookahead", g.lookahead},
          {"ego_width", g.ego_width},
          {"ego_length", g.ego_length},
          {"ego_gap", g.ego_gap}};
}

SceneGeometry geometry_from_json(const json& j) {
  SceneGeometry g;
  g.width = j.at("width").get<int>();
  g.height = j.at("height").get<int>();
  g.frames = j.at("frames").get<int>();
  g.lane_width = j.at("lane_width").get<double>();
  g.road_center_x = j.at("road_center_x").get<double>();
  g.cross_center_y = j.at("cross_center_y").get<double>();
  g.path_margin = j.at("path_margin").get<double>();
  g.lookahead = j.at("lookahead").get<int>();
  g.ego_width = j.at("ego_width").get<double>();
  g.ego_length = j.at("ego_length").get<double>();
  g.ego_gap = j.at("ego_gap").get<double>();
  return g;
}

}  // namespace

std::string generator_config_to_json(const GeneratorConfig& c) {
  json j;
  j["geometry"] = geometry_to_json(c.geometry);
  j["speeds"] = {{"vehicle_min", c.speeds.vehicle_min},
                 {"vehicle_max", c.speeds.vehicle_max},
                 {"pedestrian_min", c.speeds.pedestrian_min},
                 {"pedestrian_max", c.speeds.pedestrian_max},
                 {"ambient_min", c.speeds.ambient_min},
                 {"ambient_max", c.speeds.ambient_max}};
  json weights;
  for (int s = 0; s < kScenarioCount; ++s)
    weights[to_string(static_cast<Scenario>(s))] = c.scenario_weights[s];
  j["scenario_weights"] = weights;
  j["stop_rate"] = c.stop_rate;
  j["distractors_min"] = c.distractors_min;
  j["distractors_max"] = c.distractors_max;
  j["ego_intent"] = to_string(c.ego_intent);
  j["seed"] = c.seed;
  return j.dump(2);
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("generator config parse error: ") + e.what());
  }
  GeneratorConfig c;
  try {
    c.geometry = geometry_from_json(j.at("geometry"));
    const auto& sp = j.at("speeds");
    c.speeds.vehicle_min = sp.at("vehicle_min").get<double>();
    c.speeds.vehicle_max = sp.at("vehicle_max").get<double>();
    c.speeds.pedestrian_min = sp.at("pedestrian_min").get<double>();
    c.speeds.pedestrian_max = sp.at("pedestrian_max").get<double>();
    c.speeds.ambient_min = sp.at("ambient_min").get<double>();
    c.speeds.ambient_max = sp.at("ambient_max").get<double>();
    for (int s = 0; s < kScenarioCount; ++s)
      c.scenario_weights[s] = j.at("scenario_weights").at(to_string(static_cast<Scenario>(s))).get<double>();
    c.stop_rate = j.at("stop_rate").get<double>();
    c.distractors_min = j.at("distractors_min").get<int>();
    c.distractors_max = j.at("distractors_max").get<int>();
    c.ego_intent = ego_intent_from_string(j.at("ego_intent").get<std::string>());
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("generator config field error: ") + e.what());
  }
  return c;
}

void generate_dataset(const GeneratorConfig& config, const DatasetCounts& counts,
                      const std::string& out_dir, bool force) {
  if (counts.train < 0 || counts.test < 0) throw DataError("generate_dataset: negative counts");
  if (config.distractors_min < 0 || config.distractors_max < config.distractors_min ||
      config.distractors_max > 12)
    throw DataError("generate_dataset: distractor range invalid");

  double weight_sum = 0;
  for (double w : config.scenario_weights) {
    if (w < 0) throw DataError("generate_dataset: negative scenario weight");
    weight_sum += w;
  }
  if (weight_sum <= 0) throw DataError("generate_dataset: all scenario weights zero");

  Dataset ds;
  ds.manifest.seed = config.seed;
  ds.manifest.generator_config_json = generator_config_to_json(config);

  Rng mix_rng(derive_seed(config.seed, 0xd47a));
  uint64_t episode_counter = 0;

  auto draw_scenario = [&]() {
    double u = mix_rng.uniform() * weight_sum;
    for (int s = 0; s < kScenarioCount; ++s) {
      u -= config.scenario_weights[s];
      if (u < 0) return static_cast<Scenario>(s);
    }
    return Scenario::free_flow;
  };

  auto make_split = [&](const std::string& split, int count, std::vector<std::string>& id_list) {
    for (int i = 0; i < count; ++i) {
      ScenarioConfig sc;
      sc.geometry = config.geometry;
      sc.speeds = config.speeds;
      sc.ego_intent = config.ego_intent;
      sc.scenario = draw_scenario();
      sc.want_stop =
          sc.scenario != Scenario::free_flow && mix_rng.bernoulli(config.stop_rate);
      sc.n_distractors = mix_rng.uniform_int(config.distractors_min, config.distractors_max);
      sc.rng_seed = derive_seed(config.seed, 0xe9150de + episode_counter);
      ++episode_counter;

      Episode ep = generate_episode(sc);
      std::ostringstream id;
      id << split << "_" << std::setw(5) << std::setfill('0') << i;
      ep.id = id.str();
      id_list.push_back(ep.id);
      ds.episodes.emplace(ep.id, std::move(ep));
    }
  };

  make_split("train", counts.train, ds.manifest.train_ids);
  make_split("test", counts.test, ds.manifest.test_ids);

  if (counts.train > 1) {
    bool has_go = false, has_stop = false;
    for (const auto& id : ds.manifest.train_ids) {
      (ds.episodes.at(id).label == Behavior::go ? has_go : has_stop) = true;
    }
    if (!has_go || !has_stop)
      throw DataError("generate_dataset: train split came out single-class; "
                      "increase counts or adjust stop_rate");
  }

  save_dataset(ds, out_dir, force);
}

}  // namespace riskcause

#include "riskcause/scene.hpp"

#include <set>
#include <sstream>

#include "riskcause/errors.hpp"

namespace riskcause {

std::string to_string(ObjectClass c) {
  return c == ObjectClass::vehicle ? "vehicle" : "pedestrian";
}

ObjectClass object_class_from_string(const std::string& s) {
  if (s == "vehicle") return ObjectClass::vehicle;
  if (s == "pedestrian") return ObjectClass::pedestrian;
  throw DataError("unknown object class: " + s);
}

std::string to_string(Behavior b) { return b == Behavior::go ? "go" : "stop"; }

Behavior behavior_from_string(const std::string& s) {
  if (s == "go") return Behavior::go;
  if (s == "stop") return Behavior::stop;
  throw DataError("unknown behavior label: " + s);
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::crossing_vehicle: return "crossing_vehicle";
    case Scenario::crossing_pedestrian: return "crossing_pedestrian";
    case Scenario::parked_vehicle: return "parked_vehicle";
    case Scenario::congestion: return "congestion";
    case Scenario::free_flow: return "free_flow";
  }
  throw DataError("invalid scenario enum value");
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "crossing_vehicle") return Scenario::crossing_vehicle;
  if (s == "crossing_pedestrian") return Scenario::crossing_pedestrian;
  if (s == "parked_vehicle") return Scenario::parked_vehicle;
  if (s == "congestion") return Scenario::congestion;
  if (s == "free_flow") return Scenario::free_flow;
  throw DataError("unknown scenario: " + s);
}

std::vector<std::string> validate_episode(const Episode& episode, int expected_frames) {
  std::vector<std::string> out;
  auto add = [&out](const std::string& m) { out.push_back(m); };

  if (static_cast<int>(episode.frames.size()) != expected_frames) {
    std::ostringstream os;
    os << "frame count " << episode.frames.size() << " != " << expected_frames;
    add(os.str());
  }
  const int h = episode.height();
  const int w = episode.width();
  for (size_t t = 1; t < episode.frames.size(); ++t) {
    if (episode.frames[t].height() != h || episode.frames[t].width() != w) {
      add("frame " + std::to_string(t) + " size differs from frame 0");
    }
  }

  std::set<int> ids;
  for (const auto& tr : episode.tracklets) {
    const std::string tag = "tracklet " + std::to_string(tr.id);
    if (tr.id < 0) add(tag + ": negative id");
    if (!ids.insert(tr.id).second) add(tag + ": duplicate id");
    if (tr.boxes.empty()) add(tag + ": present on no frame");
    for (const auto& [frame, box] : tr.boxes) {
      std::ostringstream os;
      os << tag << " frame " << frame << ": ";
      if (frame < 0 || frame >= static_cast<int>(episode.frames.size())) {
        os << "frame index out of range";
        add(os.str());
        continue;
      }
      if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) {
        os << "degenerate box";
        add(os.str());
      } else if (box.x1 < 0 || box.y1 < 0 || box.x2 > w || box.y2 > h) {
        os << "box outside frame bounds";
        add(os.str());
      }
    }
  }

  if (episode.cause_id.has_value() && episode.tracklet_by_id(*episode.cause_id) == nullptr) {
    add("cause_id " + std::to_string(*episode.cause_id) + " refers to no tracklet");
  }
  if (episode.label == Behavior::stop && !episode.cause_id.has_value()) {
    add("stop label without cause_id");
  }
  return out;
}

}  // namespace riskcause

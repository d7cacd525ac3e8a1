#include "doctest.h"
#include "riskcause/scene.hpp"
#include "test_support.hpp"

using namespace riskcause;

namespace {

Episode well_formed(int frames = 3) {
  Episode ep;
  for (int t = 0; t < frames; ++t) ep.frames.emplace_back(32, 32);
  Tracklet tr;
  tr.id = 0;
  tr.cls = ObjectClass::vehicle;
  for (int t = 0; t < frames; ++t) tr.boxes[t] = BBox{4, 4, 10, 10};
  ep.tracklets.push_back(tr);
  ep.label = Behavior::stop;
  ep.cause_id = 0;
  return ep;
}

}  // namespace

TEST_CASE("validate_episode accepts a consistent episode") {
  CHECK(validate_episode(well_formed()).empty());
}

TEST_CASE("validate_episode reports a frame-count mismatch") {
  Episode ep = well_formed(2);
  ep.tracklets[0].boxes.erase(2);
  const auto v = validate_episode(ep, 3);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("frame count 2 != 3") != std::string::npos);
}

TEST_CASE("validate_episode reports degenerate boxes") {
  Episode ep = well_formed();
  ep.tracklets[0].boxes[1] = BBox{10, 4, 4, 10};  // x2 < x1
  const auto v = validate_episode(ep);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("degenerate box") != std::string::npos);
}

TEST_CASE("validate_episode reports out-of-bounds boxes, duplicate ids, missing cause") {
  Episode ep = well_formed();
  ep.tracklets[0].boxes[0] = BBox{-1, 4, 10, 10};
  Tracklet dup = ep.tracklets[0];
  ep.tracklets.push_back(dup);
  ep.cause_id = 7;
  const auto v = validate_episode(ep);
  bool bounds = false, dup_id = false, cause = false;
  for (const auto& msg : v) {
    if (msg.find("outside frame bounds") != std::string::npos) bounds = true;
    if (msg.find("duplicate id") != std::string::npos) dup_id = true;
    if (msg.find("refers to no tracklet") != std::string::npos) cause = true;
  }
  CHECK(bounds);
  CHECK(dup_id);
  CHECK(cause);
}

TEST_CASE("validate_episode requires a cause for stop labels") {
  Episode ep = well_formed();
  ep.cause_id.reset();
  const auto v = validate_episode(ep);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("stop label without cause_id") != std::string::npos);
}

TEST_CASE("image float access quantizes to 8-bit exactly") {
  Image img(4, 4);
  img.set(1, 2, 0, 0.5f);
  CHECK(img.at(1, 2, 0) == doctest::Approx(128.0 / 255.0));
  // Any stored value reads back within half a step of what was written.
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const float v = static_cast<float>(rng.uniform());
    img.set(0, 0, 1, v);
    CHECK(std::abs(img.at(0, 0, 1) - v) <= 0.5f / 255.0f + 1e-7f);
  }
  img.set(3, 3, 2, 1.7f);  // clamps
  CHECK(img.at(3, 3, 2) == 1.0f);
}

TEST_CASE("prediction label threshold is strict at 0.5") {
  CHECK(Prediction{0.49, 0.51}.label() == Behavior::stop);
  CHECK(Prediction{0.5, 0.5}.label() == Behavior::go);
  CHECK(Prediction{0.51, 0.49}.label() == Behavior::go);
}

TEST_CASE("enum string round trips") {
  for (int s = 0; s < kScenarioCount; ++s) {
    const auto sc = static_cast<Scenario>(s);
    CHECK(scenario_from_string(to_string(sc)) == sc);
  }
  CHECK(behavior_from_string("go") == Behavior::go);
  CHECK(object_class_from_string("pedestrian") == ObjectClass::pedestrian);
}

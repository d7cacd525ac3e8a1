#include <algorithm>

#include "doctest.h"
#include "riskcause/errors.hpp"
#include "riskcause/inference.hpp"
#include "riskcause/synthgen.hpp"
#include "test_support.hpp"

using namespace riskcause;
using riskcause::testing::random_episode;
using riskcause::testing::tiny_config;

TEST_CASE("argmax selection breaks ties towards the lowest id") {
  RiskScoreTable t;
  t.go_under_intervention = {{3, 0.2}, {7, 0.9}};
  CHECK(select_risk_object(t) == 7);
  t.go_under_intervention = {{1, 0.6}, {2, 0.6}};
  CHECK(select_risk_object(t) == 1);
  t.go_under_intervention = {{4, 0.1}};
  CHECK(select_risk_object(t) == 4);
  t.go_under_intervention.clear();
  CHECK_THROWS_AS(select_risk_object(t), DataError);
}

TEST_CASE("risk scores cover exactly the episode's tracklets") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 80);
  DrivingModel<double> model(cfg, params);
  Rng rng(81);
  const Episode ep = random_episode(rng, cfg.height, cfg.width, cfg.frames, 3);
  const RiskScoreTable table = risk_scores(model, ep);
  REQUIRE(table.go_under_intervention.size() == 3);
  for (const auto& t : ep.tracklets) {
    REQUIRE(table.go_under_intervention.count(t.id) == 1);
    const double s = table.go_under_intervention.at(t.id);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  CHECK(table.baseline_go >= 0.0);
  CHECK(table.baseline_go <= 1.0);

  Episode empty = ep;
  empty.tracklets.clear();
  CHECK_THROWS_AS(risk_scores(model, empty), DataError);
}

TEST_CASE("relabeling the objects permutes but preserves the scores") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 82);
  DrivingModel<double> model(cfg, params);
  Rng rng(83);
  Episode ep = random_episode(rng, cfg.height, cfg.width, cfg.frames, 3);
  const RiskScoreTable a = risk_scores(model, ep);

  Episode renamed = ep;
  for (auto& t : renamed.tracklets) t.id += 10;
  const RiskScoreTable b = risk_scores(model, renamed);

  std::vector<double> sa, sb;
  for (const auto& [id, s] : a.go_under_intervention) sa.push_back(s);
  for (const auto& [id, s] : b.go_under_intervention) sb.push_back(s);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  REQUIRE(sa.size() == sb.size());
  for (size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == doctest::Approx(sb[i]).epsilon(1e-12));
}

TEST_CASE("classification threshold and determinism of identification") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 84);
  DrivingModel<double> model(cfg, params);
  Rng rng(85);
  const Episode ep = random_episode(rng, cfg.height, cfg.width, cfg.frames, 4);

  const auto [label, pred] = classify_behavior(model, ep);
  CHECK(label == (pred.s_go < 0.5 ? Behavior::stop : Behavior::go));

  const int a = identify_risk_object(model, ep);
  const int b = identify_risk_object(model, ep);
  CHECK(a == b);
  CHECK(ep.tracklet_by_id(a) != nullptr);
}

TEST_CASE("result records survive a JSONL round trip") {
  ResultRecord r;
  r.episode_id = "test_00012";
  r.method = "causal";
  r.baseline_go = 0.3125;
  r.classified = Behavior::stop;
  r.scores = {{0, 0.25}, {2, 0.875}};
  r.selected = 2;
  r.gt_cause = 2;
  r.scenario = Scenario::crossing_vehicle;

  const ResultRecord back = result_record_from_json(result_record_to_json(r));
  CHECK(back.episode_id == r.episode_id);
  CHECK(back.method == r.method);
  CHECK(back.baseline_go == r.baseline_go);
  CHECK(back.classified == r.classified);
  CHECK(back.scores == r.scores);
  CHECK(back.selected == r.selected);
  CHECK(back.gt_cause == r.gt_cause);
  CHECK(back.scenario == r.scenario);

  ResultRecord sparse;
  sparse.episode_id = "x";
  sparse.method = "random";
  sparse.selected = 4;
  const ResultRecord sback = result_record_from_json(result_record_to_json(sparse));
  CHECK(!sback.baseline_go.has_value());
  CHECK(!sback.classified.has_value());
  CHECK(sback.scores.empty());
  CHECK(sback.selected == 4);
}

#include <cmath>

#include "doctest.h"
#include "riskcause/errors.hpp"
#include "riskcause/eval.hpp"
#include "riskcause/synthgen.hpp"
#include "test_support.hpp"

using namespace riskcause;
using riskcause::testing::tiny_config;

TEST_CASE("iou worked values and symmetry") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{20, 20, 30, 30}) == 0.0);
  // Hand arithmetic: intersection 5x10 = 50, union 100 + 100 - 50 = 150.
  const BBox b{5, 0, 15, 10};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou(b, a) == doctest::Approx(iou(a, b)));
}

TEST_CASE("accuracy uses an inclusive threshold and is non-increasing") {
  std::vector<MatchResult> results = {{1.0, false}, {1.0 / 3.0, false}, {0.5, false}};
  CHECK(accuracy_at(results, 0.5) == doctest::Approx(2.0 / 3.0));  // 0.5 counts at 0.5
  CHECK(accuracy_at({{1.0 / 3.0, false}}, 0.5) == 0.0);
  CHECK(accuracy_at({{1.0, false}, {1.0, false}}, 0.95) == 1.0);

  Rng rng(90);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MatchResult> rs;
    const int n = rng.uniform_int(1, 30);
    for (int i = 0; i < n; ++i) rs.push_back({rng.uniform(), rng.bernoulli(0.1)});
    double prev = 1.0 + 1e-9;
    double lo = 1.0, hi = 0.0;
    for (double t : iou_thresholds()) {
      const double acc = accuracy_at(rs, t);
      CHECK(acc <= prev);
      prev = acc;
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
    }
    const double m = mean_accuracy(rs);
    CHECK(m >= lo - 1e-12);
    CHECK(m <= hi + 1e-12);
    CHECK(m <= accuracy_at(rs, 0.5) + 1e-12);
    // mean_accuracy is exactly the mean of the ten thresholds.
    double sum = 0;
    for (double t : iou_thresholds()) sum += accuracy_at(rs, t);
    CHECK(std::abs(m - sum / 10.0) <= 1e-9);
  }
  CHECK_THROWS_AS(accuracy_at({}, 0.5), DataError);
}

TEST_CASE("perfect and disjoint predictions bound the metric") {
  std::vector<MatchResult> perfect(5, {1.0, false});
  CHECK(mean_accuracy(perfect) == doctest::Approx(1.0));
  std::vector<MatchResult> disjoint(5, {0.0, false});
  CHECK(mean_accuracy(disjoint) == doctest::Approx(0.0));
  std::vector<MatchResult> half = {{1.0, false}, {1.0, false}, {0.0, false}, {0.0, false}};
  CHECK(accuracy_at(half, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("random baseline is uniform over the tracklets") {
  Rng rng(91);
  Episode ep = riskcause::testing::random_episode(rng, 24, 24, 3, 4);
  Rng pick(92);
  std::map<int, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[random_baseline(ep, pick)];
  REQUIRE(counts.size() == 4);
  for (const auto& [id, n] : counts)
    CHECK(std::abs(static_cast<double>(n) / draws - 0.25) <= 0.02);

  Rng a(93), b(93);
  CHECK(random_baseline(ep, a) == random_baseline(ep, b));

  Episode single = ep;
  single.tracklets.resize(1);
  Rng c(94);
  CHECK(random_baseline(single, c) == single.tracklets[0].id);

  Episode empty = ep;
  empty.tracklets.clear();
  CHECK_THROWS_AS(random_baseline(empty, c), DataError);
}

TEST_CASE("attention baseline picks the heaviest object and needs the variant") {
  ModelConfig cfg = tiny_config();
  cfg.attention_pool = true;
  ModelParams params = init_params(cfg, 95);
  DrivingModel<double> model(cfg, params);
  Rng rng(96);
  const Episode ep = riskcause::testing::random_episode(rng, cfg.height, cfg.width, cfg.frames, 1);
  CHECK(attention_baseline(model, ep) == ep.tracklets[0].id);

  const Episode multi = riskcause::testing::random_episode(rng, cfg.height, cfg.width, cfg.frames, 4);
  const int picked = attention_baseline(model, multi);
  CHECK(multi.tracklet_by_id(picked) != nullptr);

  ModelConfig plain_cfg = tiny_config();
  ModelParams plain_params = init_params(plain_cfg, 97);
  DrivingModel<double> plain_model(plain_cfg, plain_params);
  CHECK_THROWS_AS(attention_baseline(plain_model, multi), DataError);
}

TEST_CASE("evaluate joins records with ground truth per scenario") {
  // Two stop episodes with known causes; one record correct, one picking a
  // distractor, one method missing a record entirely.
  std::vector<Episode> eps;
  for (int i = 0; i < 3; ++i) {
    ScenarioConfig sc;
    sc.scenario = i < 2 ? Scenario::crossing_vehicle : Scenario::congestion;
    sc.want_stop = true;
    sc.n_distractors = 2;
    sc.rng_seed = 700 + i;
    eps.push_back(generate_episode(sc));
    eps.back().id = "e" + std::to_string(i);
  }
  std::vector<const Episode*> refs;
  for (const auto& e : eps) refs.push_back(&e);

  auto wrong_id = [&](const Episode& e) {
    for (const auto& t : e.tracklets)
      if (t.id != *e.cause_id) return t.id;
    return -1;
  };

  std::vector<ResultRecord> records;
  for (int i = 0; i < 3; ++i) {
    ResultRecord r;
    r.episode_id = eps[i].id;
    r.method = "causal";
    r.classified = Behavior::stop;
    r.selected = i == 1 ? wrong_id(eps[i]) : *eps[i].cause_id;
    r.gt_cause = eps[i].cause_id;
    r.scenario = eps[i].scenario;
    records.push_back(r);
  }
  // A second method that only covered the first episode.
  ResultRecord partial = records[0];
  partial.method = "random";
  partial.classified.reset();
  records.push_back(partial);

  const EvalReport report = evaluate(records, refs);
  const ReportRow* causal_all = nullptr;
  const ReportRow* random_all = nullptr;
  for (const auto& row : report.rows) {
    if (row.scenario != "all") continue;
    if (row.method == "causal") causal_all = &row;
    if (row.method == "random") random_all = &row;
  }
  REQUIRE(causal_all != nullptr);
  REQUIRE(random_all != nullptr);
  CHECK(causal_all->samples == 3);
  CHECK(causal_all->macc == doctest::Approx(2.0 / 3.0));  // separated objects: iou 0 when wrong
  CHECK(random_all->samples == 3);
  CHECK(random_all->macc == doctest::Approx(1.0 / 3.0));  // two missing records count as misses

  REQUIRE(report.behavior.size() == 1);  // only causal carried classifications
  CHECK(report.behavior[0].method == "causal");
  CHECK(report.behavior[0].accuracy == doctest::Approx(1.0));

  // Records referencing unknown episodes are rejected.
  ResultRecord stray = records[0];
  stray.episode_id = "nope";
  CHECK_THROWS_AS(evaluate({stray}, refs), DataError);
}

TEST_CASE("report serialization carries all ten thresholds") {
  std::vector<MatchResult> rs = {{1.0, false}, {0.6, false}, {0.2, false}};
  ReportRow row;
  row.method = "causal";
  row.scenario = "all";
  row.samples = 3;
  const auto th = iou_thresholds();
  for (int i = 0; i < 10; ++i) row.acc[i] = accuracy_at(rs, th[i]);
  row.acc50 = row.acc[0];
  row.acc75 = row.acc[5];
  row.macc = mean_accuracy(rs);
  EvalReport rep;
  rep.rows.push_back(row);
  const std::string text = report_to_json_lines(rep);
  CHECK(text.find("\"0.50\"") != std::string::npos);
  CHECK(text.find("\"0.95\"") != std::string::npos);
  CHECK(text.find("\"macc\"") != std::string::npos);
}

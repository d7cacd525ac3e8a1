#include <cmath>

#include "doctest.h"
#include "riskcause/errors.hpp"
#include "riskcause/synthgen.hpp"
#include "riskcause/training.hpp"
#include "test_support.hpp"

using namespace riskcause;

namespace {

/// Lightweight model over full-size frames: keeps training tests fast while
/// exercising the real pipeline.
ModelConfig light_config() {
  ModelConfig c;
  c.backbone = {{4, 3, 2, 1}, {6, 3, 2, 1}, {6, 3, 2, 1}};
  c.roi_size = 2;
  c.hidden_dim = 8;
  c.head_widths = {12, 6};
  return c;
}

std::vector<Episode> make_episodes(int n, uint64_t seed) {
  std::vector<Episode> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    ScenarioConfig sc;
    sc.scenario = static_cast<Scenario>(i % 4);
    sc.want_stop = i % 2 == 0;
    sc.n_distractors = 2 + i % 3;
    sc.rng_seed = derive_seed(seed, i);
    out.push_back(generate_episode(sc));
    out.back().id = "ep_" + std::to_string(i);
  }
  return out;
}

std::vector<const Episode*> ptrs(const std::vector<Episode>& eps) {
  std::vector<const Episode*> out;
  for (const auto& e : eps) out.push_back(&e);
  return out;
}

}  // namespace

TEST_CASE("cross entropy worked values") {
  CHECK(cross_entropy({0.5, 0.5}, Behavior::go) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(cross_entropy({0.5, 0.5}, Behavior::stop) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(cross_entropy({1.0, 0.0}, Behavior::go) == doctest::Approx(0.0));
  CHECK(cross_entropy({1.0, 0.0}, Behavior::stop) ==
        doctest::Approx(-std::log(1e-12)).epsilon(1e-6));  // ~27.63 at the clamp
}

TEST_CASE("intervention sampling follows the Algorithm-1 guard") {
  Rng rng(50);
  Episode stop_ep;
  stop_ep.label = Behavior::stop;
  stop_ep.tracklets.resize(4);
  for (int i = 0; i < 4; ++i) stop_ep.tracklets[i].id = i;
  CHECK(!sample_intervention(stop_ep, true, rng).has_value());

  Episode go_single;
  go_single.label = Behavior::go;
  go_single.tracklets.resize(1);
  go_single.tracklets[0].id = 3;
  CHECK(!sample_intervention(go_single, true, rng).has_value());

  Episode go_many = stop_ep;
  go_many.label = Behavior::go;
  CHECK(!sample_intervention(go_many, false, rng).has_value());

  Rng a(51), b(51);
  const auto ta = sample_intervention(go_many, true, a);
  const auto tb = sample_intervention(go_many, true, b);
  REQUIRE(ta.has_value());
  CHECK(ta == tb);  // reproducible under a fixed seed
  bool seen_other = false;
  for (int i = 0; i < 64; ++i) {
    const auto t = sample_intervention(go_many, true, a);
    REQUIRE(t.has_value());
    CHECK(go_many.tracklet_by_id(*t) != nullptr);
    seen_other |= (*t != *ta);
  }
  CHECK(seen_other);
}

TEST_CASE("weight decay alone shrinks parameter norms every step") {
  ModelConfig cfg = riskcause::testing::tiny_config();
  ModelParams params = init_params(cfg, 60);
  AdamW opt(params, 5e-4, 5e-4);
  Grads<float> zero(params);
  for (int step = 0; step < 3; ++step) {
    std::vector<double> before;
    for (const auto& t : params.tensors) {
      double n = 0;
      for (float v : t.v) n += static_cast<double>(v) * v;
      before.push_back(n);
    }
    opt.step(params, zero);
    size_t i = 0;
    for (const auto& t : params.tensors) {
      double n = 0;
      for (float v : t.v) n += static_cast<double>(v) * v;
      if (before[i] > 0) CHECK(n < before[i]);
      ++i;
    }
  }
}

TEST_CASE("training is deterministic given the seed") {
  const auto episodes = make_episodes(8, 70);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.rng_seed = 9;
  tc.val_fraction = 0.25;
  const TrainResult a = train(ptrs(episodes), light_config(), tc);
  const TrainResult b = train(ptrs(episodes), light_config(), tc);
  REQUIRE(a.params.tensors.size() == b.params.tensors.size());
  for (size_t i = 0; i < a.params.tensors.size(); ++i)
    CHECK(a.params.tensors[i].v == b.params.tensors[i].v);  // bitwise
  CHECK(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
  }
}

TEST_CASE("training rejects a single-class split") {
  auto episodes = make_episodes(6, 71);
  for (auto& e : episodes) {
    e.label = Behavior::go;
    e.cause_id.reset();
  }
  TrainConfig tc;
  tc.val_fraction = 0;
  CHECK_THROWS_AS(train(ptrs(episodes), light_config(), tc), DataError);
}

TEST_CASE("ten epochs reduce the held-out loss on every seed" * doctest::skip(false)) {
  // Ten seeded runs at the default architecture; the target is >= 95%, i.e.
  // at most zero failures out of ten.
  const auto episodes = make_episodes(300, 72);
  const ModelConfig mc;  // defaults
  int improved = 0;
  const int runs = 10;
  for (int seed = 0; seed < runs; ++seed) {
    TrainConfig tc;
    tc.epochs = 10;
    tc.rng_seed = 100 + seed;
    const auto all = ptrs(episodes);

    // Loss of the untrained model on the held-out tail.
    const int total = static_cast<int>(all.size());
    const int n_val = static_cast<int>(std::lround(total * tc.val_fraction));
    ModelParams init = init_params(mc, derive_seed(tc.rng_seed, 0));
    DrivingModel<float> untrained(mc, init);
    double loss0 = 0;
    for (int i = total - n_val; i < total; ++i)
      loss0 += cross_entropy(untrained.forward(plain_input<float>(*all[i])).prediction,
                             all[i]->label);
    loss0 /= n_val;

    const TrainResult r = train(all, mc, tc);
    if (r.history.back().val_loss < loss0) ++improved;
  }
  CHECK(improved >= static_cast<int>(std::ceil(0.95 * runs)));
}

TEST_CASE("the intervention stream is separate from shuffling and dropout") {
  // Build a set where the Algorithm-1 guard never fires: Go episodes carry
  // at most one object. Toggling intervention must then be a bitwise no-op,
  // which fails if the streams were shared.
  std::vector<Episode> episodes;
  for (int i = 0; i < 8; ++i) {
    ScenarioConfig sc;
    if (i % 2 == 0) {
      sc.scenario = Scenario::congestion;
      sc.want_stop = true;
      sc.n_distractors = 2;
    } else {
      sc.scenario = Scenario::free_flow;
      sc.n_distractors = 1;
    }
    sc.rng_seed = derive_seed(73, i);
    episodes.push_back(generate_episode(sc));
  }

  TrainConfig on;
  on.epochs = 2;
  on.batch_size = 4;
  on.rng_seed = 5;
  on.val_fraction = 0;
  TrainConfig off = on;
  off.intervention_enabled = false;

  const TrainResult a = train(ptrs(episodes), light_config(), on);
  const TrainResult b = train(ptrs(episodes), light_config(), off);
  for (size_t i = 0; i < a.params.tensors.size(); ++i)
    CHECK(a.params.tensors[i].v == b.params.tensors[i].v);
}

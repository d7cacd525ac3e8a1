// riskcause: generate synthetic driving data, train the manipulable driving
// model, identify risk objects by intervention, evaluate, and plot.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "riskcause/errors.hpp"
#include "riskcause/eval.hpp"
#include "riskcause/inference.hpp"
#include "riskcause/intervention.hpp"
#include "riskcause/model.hpp"
#include "riskcause/render.hpp"
#include "riskcause/rng.hpp"
#include "riskcause/store.hpp"
#include "riskcause/synthgen.hpp"
#include "riskcause/training.hpp"

namespace fs = std::filesystem;
using namespace riskcause;

namespace {

constexpr int kOk = 0;
constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

uint64_t env_seed_default() {
  if (const char* env = std::getenv("RISKCAUSE_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw DataError("RISKCAUSE_SEED is not a valid integer");
    }
  }
  return 0;
}

std::array<double, kScenarioCount> parse_mix(const std::string& text) {
  std::array<double, kScenarioCount> weights{1, 1, 1, 1, 1};
  if (text.empty()) return weights;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DataError("bad --mix entry: " + item);
    const Scenario sc = scenario_from_string(item.substr(0, eq));
    weights[static_cast<int>(sc)] = std::stod(item.substr(eq + 1));
  }
  return weights;
}

std::string color_hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(c.r * 255 + 0.5f),
                static_cast<int>(c.g * 255 + 0.5f), static_cast<int>(c.b * 255 + 0.5f));
  return buf;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  int train_n = 100;
  int test_n = 20;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string mix;
  double stop_rate = 0.625;
  int distractors_min = 2;
  int distractors_max = 5;
  std::string intent = "straight";
  bool force = false;
};

int run_generate(const GenerateArgs& args) {
  GeneratorConfig config;
  config.seed = args.seed_set ? args.seed : env_seed_default();
  config.scenario_weights = parse_mix(args.mix);
  config.stop_rate = args.stop_rate;
  config.distractors_min = args.distractors_min;
  config.distractors_max = args.distractors_max;
  config.ego_intent = ego_intent_from_string(args.intent);

  generate_dataset(config, {args.train_n, args.test_n}, args.out, args.force);

  const Dataset ds = load_dataset(args.out);
  std::map<std::string, std::pair<int, int>> per_scenario;  // scenario -> (go, stop)
  int stops = 0, total = 0;
  for (const auto& [id, ep] : ds.episodes) {
    auto& cell = per_scenario[to_string(ep.scenario)];
    (ep.label == Behavior::stop ? cell.second : cell.first)++;
    if (ep.label == Behavior::stop) ++stops;
    ++total;
  }
  std::cout << "dataset written to " << args.out << "\n"
            << "episodes: " << total << " (train " << ds.manifest.train_ids.size() << ", test "
            << ds.manifest.test_ids.size() << ")\n"
            << "stop fraction: " << (total ? static_cast<double>(stops) / total : 0.0) << "\n";
  for (const auto& [name, cell] : per_scenario)
    std::cout << "  " << name << ": " << (cell.first + cell.second) << " (go " << cell.first
              << ", stop " << cell.second << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string metrics;
  uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 10;
  int batch = 16;
  double lr = 5e-4;
  double wd = 5e-4;
  double intervention_rate = 0.5;
  bool no_intervention = false;
  std::string mask_type = "convolution";
  bool no_object_branch = false;
  bool attention_pool = false;
  int hidden = 64;
  double val_fraction = 0.1;
};

int run_train(const TrainArgs& args) {
  const Dataset dataset = load_dataset(args.data);
  const auto train_split = dataset.split("train");
  if (train_split.empty()) throw DataError("train: dataset has no train episodes");

  ModelConfig mc;
  mc.height = train_split.front()->height();
  mc.width = train_split.front()->width();
  mc.frames = static_cast<int>(train_split.front()->frames.size());
  mc.hidden_dim = args.hidden;
  mc.mask_type = mask_type_from_string(args.mask_type);
  mc.object_branch = !args.no_object_branch;
  mc.attention_pool = args.attention_pool;

  TrainConfig tc;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch;
  tc.learning_rate = args.lr;
  tc.weight_decay = args.wd;
  tc.intervention_enabled = !args.no_intervention;
  tc.intervention_rate = args.intervention_rate;
  tc.val_fraction = args.val_fraction;
  tc.rng_seed = args.seed_set ? args.seed : env_seed_default();

  std::ostringstream metrics;
  const TrainResult result = train(train_split, mc, tc, [&](const EpochMetrics& m) {
    std::ostringstream train_line, val_line;
    train_line << "{\"epoch\":" << m.epoch << ",\"split\":\"train\",\"loss\":" << m.train_loss
               << ",\"accuracy\":" << m.train_accuracy << "}";
    val_line << "{\"epoch\":" << m.epoch << ",\"split\":\"val\",\"loss\":" << m.val_loss
             << ",\"accuracy\":" << m.val_accuracy << "}";
    metrics << train_line.str() << "\n" << val_line.str() << "\n";
    std::cout << train_line.str() << "\n" << val_line.str() << "\n";
  });

  Checkpoint ck;
  ck.config = result.config;
  ck.params = result.params;
  ck.meta.seed = tc.rng_seed;
  ck.meta.epochs = tc.epochs;
  ck.meta.best_epoch = result.best_epoch;
  ck.meta.best_val_accuracy = result.best_val_accuracy;
  ck.meta.train_config_json = train_config_to_json(tc);
  save_checkpoint(args.out, ck);

  const std::string metrics_path =
      args.metrics.empty() ? args.out + ".metrics.jsonl" : args.metrics;
  atomic_write_text(metrics_path, metrics.str());
  std::cout << "checkpoint written to " << args.out << " (best epoch " << result.best_epoch
            << ", val accuracy " << result.best_val_accuracy << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

struct IdentifyArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  std::string method = "causal";
  std::string select = "stop-classified";
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

ResultRecord identify_one(const Episode& ep, const DrivingModel<float>* model,
                          const std::string& method, bool select_all, uint64_t random_seed) {
  ResultRecord r;
  r.episode_id = ep.id;
  r.method = method;
  r.gt_cause = ep.cause_id;
  r.scenario = ep.scenario;

  if (method == "random") {
    Rng rng(derive_seed(random_seed, std::hash<std::string>{}(ep.id)));
    r.selected = random_baseline(ep, rng);
    return r;
  }

  const auto [label, pred] = classify_behavior(*model, ep);
  r.baseline_go = pred.s_go;
  r.classified = label;
  if (!select_all && label != Behavior::stop) return r;

  if (method == "attention") {
    const ForwardResult<float> fwd = model->forward(plain_input<float>(ep));
    for (const auto& [id, w] : fwd.attention_weights) r.scores.emplace_back(id, w);
    r.selected = attention_baseline(*model, ep);
  } else {
    const RiskScoreTable table = risk_scores(*model, ep);
    for (const auto& [id, s] : table.go_under_intervention) r.scores.emplace_back(id, s);
    r.selected = select_risk_object(table);
  }
  return r;
}

int run_identify(const IdentifyArgs& args) {
  if (args.method != "causal" && args.method != "random" && args.method != "attention")
    throw DataError("identify: unknown method " + args.method);
  if (args.select != "stop-classified" && args.select != "all")
    throw DataError("identify: unknown --select mode " + args.select);

  const Dataset dataset = load_dataset(args.data);
  const auto episodes = dataset.split(args.split);
  if (episodes.empty()) throw DataError("identify: split '" + args.split + "' is empty");

  std::optional<Checkpoint> ck;
  std::optional<DrivingModel<float>> model;
  if (args.method != "random") {
    if (args.checkpoint.empty()) throw DataError("identify: --checkpoint is required");
    ck = load_checkpoint(args.checkpoint);
    if (args.method == "attention" && !ck->config.attention_pool)
      throw DataError("identify: checkpoint was not trained with --attention-pool");
    model.emplace(ck->config, ck->params);
  }

  const uint64_t seed = args.seed_set ? args.seed : env_seed_default();
  const bool select_all = args.select == "all";

  // Identification is undefined without objects; such episodes get no record.
  std::vector<const Episode*> eligible;
  for (const Episode* ep : episodes)
    if (!ep->tracklets.empty()) eligible.push_back(ep);

  std::vector<ResultRecord> records(eligible.size());
  const int n_threads = std::max(1, args.threads);
  if (n_threads == 1) {
    for (size_t i = 0; i < eligible.size(); ++i)
      records[i] =
          identify_one(*eligible[i], model ? &*model : nullptr, args.method, select_all, seed);
  } else {
    // Episodes are independent; workers pull indices, records land in order.
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < eligible.size(); i = next.fetch_add(1))
          records[i] =
              identify_one(*eligible[i], model ? &*model : nullptr, args.method, select_all, seed);
      });
    }
    for (auto& th : pool) th.join();
  }

  write_results(args.out, records);
  std::cout << "wrote " << records.size() << " records to " << args.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string data;
  std::vector<std::string> results;
  std::string out;
  std::string split = "test";
  bool verbose = false;
  int min_distractors = 0;
  bool single_cause = false;
};

int run_evaluate(const EvaluateArgs& args) {
  const Dataset dataset = load_dataset(args.data);
  const auto episodes = dataset.split(args.split);

  std::vector<ResultRecord> records;
  for (const auto& path : args.results) {
    auto part = read_results(path);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw DataError("evaluate: no records in the given results files");

  EvalOptions options;
  options.min_distractors = args.min_distractors;
  options.require_single_cause = args.single_cause;
  const EvalReport report = evaluate(records, episodes, options);

  std::cout << report_to_table(report, args.verbose);
  if (!args.out.empty()) atomic_write_text(args.out, report_to_json_lines(report));
  return kOk;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string data;
  std::string results;
  std::string episode;
  std::string out;
  std::string method = "causal";
  bool no_render = false;
};

int run_plot(const PlotArgs& args) {
  const Dataset dataset = load_dataset(args.data);
  const Episode& ep = dataset.at(args.episode);

  const auto records = read_results(args.results);
  const ResultRecord* record = nullptr;
  for (const auto& r : records) {
    if (r.episode_id == args.episode && r.method == args.method) {
      record = &r;
      break;
    }
  }
  if (!record)
    throw DataError("plot: no record for episode " + args.episode + " with method " + args.method);

  fs::create_directories(args.out);
  const fs::path base = fs::path(args.out) / args.episode;
  const double baseline = record->baseline_go ? *record->baseline_go : 0.0;

  // CSV is the contract: one row per object plus the baseline row; colors
  // match the chart and the annotated frame through the shared palette.
  std::ostringstream csv;
  csv << "kind,id,color,score\n";
  const std::vector<std::pair<int, double>>& scores = record->scores;
  for (size_t i = 0; i < scores.size(); ++i) {
    csv << "object," << scores[i].first << "," << color_hex(palette_color(static_cast<int>(i)))
        << "," << scores[i].second << "\n";
  }
  csv << "baseline,,#000000," << baseline << "\n";
  atomic_write_text(base.string() + "_scores.csv", csv.str());

  if (!args.no_render) {
    save_image_png(base.string() + "_scores.png", render_score_chart(scores, baseline));

    // Final frame annotated with per-object palette boxes; ground truth in
    // red, the predicted risk object in green.
    Image frame = ep.frames.back();
    const int final_frame = static_cast<int>(ep.frames.size()) - 1;
    auto frame_box = [&](int id) -> const BBox* {
      const Tracklet* t = ep.tracklet_by_id(id);
      if (!t || t->boxes.empty()) return nullptr;
      if (const BBox* b = t->box_at(final_frame)) return b;
      return &t->boxes.rbegin()->second;
    };
    for (size_t i = 0; i < scores.size(); ++i) {
      if (const BBox* box = frame_box(scores[i].first))
        outline_box(frame, *box, palette_color(static_cast<int>(i)));
    }
    if (ep.cause_id.has_value()) {
      if (const BBox* box = frame_box(*ep.cause_id)) outline_box(frame, *box, {0.9f, 0.05f, 0.05f}, 2);
    }
    if (record->selected.has_value()) {
      if (const BBox* box = frame_box(*record->selected))
        outline_box(frame, *box, {0.05f, 0.9f, 0.05f}, 2);
    }
    save_image_png(base.string() + "_frame.png", frame);
  }
  std::cout << "plot artifacts written under " << args.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"risk object identification by causal intervention on a driving model"};
  app.set_config("--config");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate", "generate a synthetic dataset");
  cmd_gen->add_option("--out", gen.out, "output dataset directory")->required();
  cmd_gen->add_option("--train-n", gen.train_n, "train episode count");
  cmd_gen->add_option("--test-n", gen.test_n, "test episode count");
  auto* gen_seed = cmd_gen->add_option("--seed", gen.seed, "rng seed (RISKCAUSE_SEED fallback)");
  cmd_gen->add_option("--mix", gen.mix, "scenario weights, e.g. crossing_vehicle=2,free_flow=1");
  cmd_gen->add_option("--stop-rate", gen.stop_rate, "P(causal object | non-free-flow scenario)");
  cmd_gen->add_option("--distractors-min", gen.distractors_min, "min distractors per episode");
  cmd_gen->add_option("--distractors-max", gen.distractors_max, "max distractors per episode");
  cmd_gen->add_option("--intent", gen.intent, "ego intent: straight|left_turn|right_turn");
  cmd_gen->add_flag("--force", gen.force, "overwrite an existing dataset");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "train the driving model");
  cmd_tr->add_option("--data", tr.data, "dataset directory")->required();
  cmd_tr->add_option("--out", tr.out, "checkpoint path")->required();
  cmd_tr->add_option("--metrics", tr.metrics, "metrics JSONL path (default <out>.metrics.jsonl)");
  auto* tr_seed = cmd_tr->add_option("--seed", tr.seed, "rng seed (RISKCAUSE_SEED fallback)");
  cmd_tr->add_option("--epochs", tr.epochs, "training epochs");
  cmd_tr->add_option("--batch", tr.batch, "batch size");
  cmd_tr->add_option("--lr", tr.lr, "learning rate");
  cmd_tr->add_option("--wd", tr.wd, "weight decay");
  cmd_tr->add_option("--intervention-rate", tr.intervention_rate,
                     "P(intervene | eligible Go sample)");
  cmd_tr->add_flag("--no-intervention", tr.no_intervention, "disable training interventions");
  cmd_tr->add_option("--mask-type", tr.mask_type, "convolution|rgb");
  cmd_tr->add_flag("--no-object-branch", tr.no_object_branch, "drop the per-object branch");
  cmd_tr->add_flag("--attention-pool", tr.attention_pool, "attention aggregation variant");
  cmd_tr->add_option("--hidden", tr.hidden, "recurrent hidden size");
  cmd_tr->add_option("--val-fraction", tr.val_fraction, "held-out fraction of the train split");

  IdentifyArgs id;
  auto* cmd_id = app.add_subcommand("identify", "run risk-object identification");
  cmd_id->add_option("--data", id.data, "dataset directory")->required();
  cmd_id->add_option("--checkpoint", id.checkpoint, "trained checkpoint");
  cmd_id->add_option("--out", id.out, "results JSONL path")->required();
  cmd_id->add_option("--split", id.split, "dataset split (train|test)");
  cmd_id->add_option("--method", id.method, "causal|random|attention");
  cmd_id->add_option("--select", id.select,
                     "stop-classified: identify only episodes the model classifies Stop; "
                     "all: identify every episode, flagged by classification");
  auto* id_seed = cmd_id->add_option("--seed", id.seed, "rng seed (RISKCAUSE_SEED fallback)");
  cmd_id->add_option("--threads", id.threads, "parallel episodes");

  EvaluateArgs ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "score identification records");
  cmd_ev->add_option("--data", ev.data, "dataset directory")->required();
  cmd_ev->add_option("--results", ev.results, "results JSONL file(s)")->required();
  cmd_ev->add_option("--out", ev.out, "report JSONL path");
  cmd_ev->add_option("--split", ev.split, "dataset split");
  cmd_ev->add_flag("--verbose", ev.verbose, "print all ten IoU thresholds");
  cmd_ev->add_option("--min-distractors", ev.min_distractors,
                     "only ground-truth episodes with at least this many distractors");
  cmd_ev->add_flag("--single-cause", ev.single_cause,
                   "only ground-truth episodes with exactly one causal object");

  PlotArgs pl;
  auto* cmd_pl = app.add_subcommand("plot", "risk-score chart and annotated frame");
  cmd_pl->add_option("--data", pl.data, "dataset directory")->required();
  cmd_pl->add_option("--results", pl.results, "results JSONL path")->required();
  cmd_pl->add_option("--episode", pl.episode, "episode id")->required();
  cmd_pl->add_option("--out", pl.out, "output directory")->required();
  cmd_pl->add_option("--method", pl.method, "record method to plot");
  cmd_pl->add_flag("--no-render", pl.no_render, "CSV only, skip PNGs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  gen.seed_set = gen_seed->count() > 0;
  tr.seed_set = tr_seed->count() > 0;
  id.seed_set = id_seed->count() > 0;

  try {
    if (cmd_gen->parsed()) return run_generate(gen);
    if (cmd_tr->parsed()) return run_train(tr);
    if (cmd_id->parsed()) return run_identify(id);
    if (cmd_ev->parsed()) return run_evaluate(ev);
    if (cmd_pl->parsed()) return run_plot(pl);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}

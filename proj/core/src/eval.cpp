#include "riskcause/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "nlohmann/json.hpp"
#include "riskcause/errors.hpp"

namespace riskcause {

using json = nlohmann::ordered_json;

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

std::array<double, 10> iou_thresholds() {
  std::array<double, 10> t;
  for (int i = 0; i < 10; ++i) t[i] = 0.50 + 0.05 * i;
  return t;
}

double accuracy_at(const std::vector<MatchResult>& results, double threshold) {
  if (results.empty()) throw DataError("accuracy_at: empty result set");
  int correct = 0;
  for (const auto& r : results)
    if (!r.missing && r.iou_value >= threshold) ++correct;
  return static_cast<double>(correct) / static_cast<double>(results.size());
}

double mean_accuracy(const std::vector<MatchResult>& results) {
  double sum = 0;
  for (double t : iou_thresholds()) sum += accuracy_at(results, t);
  return sum / 10.0;
}

int random_baseline(const Episode& episode, Rng& rng) {
  if (episode.tracklets.empty())
    throw DataError("random_baseline: episode " + episode.id + " has no tracklets");
  std::vector<int> ids;
  ids.reserve(episode.tracklets.size());
  for (const auto& t : episode.tracklets) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());
  return ids[rng.uniform_index(ids.size())];
}

template <typename S>
int attention_baseline(const DrivingModel<S>& model, const Episode& episode) {
  if (episode.tracklets.empty())
    throw DataError("attention_baseline: episode " + episode.id + " has no tracklets");
  if (!model.config().attention_pool)
    throw DataError("attention_baseline: checkpoint was not trained with attention pooling");
  const ForwardResult<S> fwd = model.forward(plain_input<S>(episode));
  int best_id = fwd.attention_weights.begin()->first;
  double best = fwd.attention_weights.begin()->second;
  for (const auto& [id, w] : fwd.attention_weights) {
    if (w > best) {
      best = w;
      best_id = id;
    }
  }
  return best_id;
}

template int attention_baseline(const DrivingModel<float>&, const Episode&);
template int attention_baseline(const DrivingModel<double>&, const Episode&);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

const BBox* box_at_decision_frame(const Episode& ep, int id) {
  const Tracklet* t = ep.tracklet_by_id(id);
  if (!t || t->boxes.empty()) return nullptr;
  const int final_frame = static_cast<int>(ep.frames.size()) - 1;
  if (const BBox* b = t->box_at(final_frame)) return b;
  return &t->boxes.rbegin()->second;  // last observed box as fallback
}

ReportRow make_row(const std::string& method, const std::string& scenario,
                   const std::vector<MatchResult>& results) {
  ReportRow row;
  row.method = method;
  row.scenario = scenario;
  row.samples = static_cast<int>(results.size());
  const auto thresholds = iou_thresholds();
  for (int i = 0; i < 10; ++i) row.acc[i] = accuracy_at(results, thresholds[i]);
  row.acc50 = row.acc[0];
  row.acc75 = row.acc[5];
  row.macc = mean_accuracy(results);
  return row;
}

}  // namespace

EvalReport evaluate(const std::vector<ResultRecord>& records,
                    const std::vector<const Episode*>& episodes, const EvalOptions& options) {
  std::map<std::string, const Episode*> by_id;
  for (const Episode* ep : episodes) by_id[ep->id] = ep;

  std::set<std::string> methods;
  std::map<std::pair<std::string, std::string>, const ResultRecord*> by_key;
  for (const auto& r : records) {
    if (!by_id.count(r.episode_id))
      throw DataError("evaluate: record for unknown episode " + r.episode_id);
    methods.insert(r.method);
    by_key[{r.method, r.episode_id}] = &r;
  }

  // Ground-truth set: Stop episodes with a cause, after the filters.
  std::vector<const Episode*> gt;
  for (const Episode* ep : episodes) {
    if (ep->label != Behavior::stop || !ep->cause_id.has_value()) continue;
    if (options.require_single_cause && !ep->cause_id.has_value()) continue;
    const int distractors = static_cast<int>(ep->tracklets.size()) - 1;
    if (distractors < options.min_distractors) continue;
    gt.push_back(ep);
  }

  EvalReport report;
  for (const auto& method : methods) {
    std::map<std::string, std::vector<MatchResult>> per_scenario;
    std::vector<MatchResult> all;
    int behavior_total = 0, behavior_correct = 0;

    for (const Episode* ep : gt) {
      MatchResult mr;
      auto it = by_key.find({method, ep->id});
      if (it == by_key.end() || !it->second->selected.has_value()) {
        mr.missing = true;
      } else {
        const BBox* pred = box_at_decision_frame(*ep, *it->second->selected);
        const BBox* truth = box_at_decision_frame(*ep, *ep->cause_id);
        if (!pred)
          throw DataError("evaluate: selected id " + std::to_string(*it->second->selected) +
                          " not in episode " + ep->id);
        if (!truth)
          throw DataError("evaluate: cause id missing from episode " + ep->id);
        mr.iou_value = iou(*pred, *truth);
      }
      per_scenario[to_string(ep->scenario)].push_back(mr);
      all.push_back(mr);
    }

    // Behavior classification accuracy over every episode with a record.
    for (const Episode* ep : episodes) {
      auto it = by_key.find({method, ep->id});
      if (it == by_key.end() || !it->second->classified.has_value()) continue;
      ++behavior_total;
      if (*it->second->classified == ep->label) ++behavior_correct;
    }

    for (const auto& [scenario, results] : per_scenario)
      report.rows.push_back(make_row(method, scenario, results));
    if (!all.empty()) report.rows.push_back(make_row(method, "all", all));
    if (behavior_total > 0) {
      BehaviorRow br;
      br.method = method;
      br.samples = behavior_total;
      br.accuracy = static_cast<double>(behavior_correct) / behavior_total;
      report.behavior.push_back(br);
    }
  }
  return report;
}

std::string report_to_json_lines(const EvalReport& report) {
  std::ostringstream out;
  for (const auto& row : report.rows) {
    json j;
    j["kind"] = "identification";
    j["method"] = row.method;
    j["scenario"] = row.scenario;
    j["samples"] = row.samples;
    json acc = json::object();
    const auto thresholds = iou_thresholds();
    for (int i = 0; i < 10; ++i) {
      std::ostringstream key;
      key << std::fixed << std::setprecision(2) << thresholds[i];
      acc[key.str()] = row.acc[i];
    }
    j["acc"] = acc;
    j["acc50"] = row.acc50;
    j["acc75"] = row.acc75;
    j["macc"] = row.macc;
    out << j.dump() << "\n";
  }
  for (const auto& row : report.behavior) {
    json j;
    j["kind"] = "behavior";
    j["method"] = row.method;
    j["samples"] = row.samples;
    j["accuracy"] = row.accuracy;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::string report_to_table(const EvalReport& report, bool verbose) {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(11) << "method" << std::setw(21) << "scenario" << std::right
      << std::setw(8) << "n" << std::setw(9) << "Acc@.5" << std::setw(9) << "Acc@.75"
      << std::setw(9) << "mAcc";
  if (verbose) {
    for (double t : iou_thresholds()) out << std::setw(8) << std::setprecision(2) << t;
  }
  out << "\n";
  for (const auto& row : report.rows) {
    out << std::left << std::setw(11) << row.method << std::setw(21) << row.scenario << std::right
        << std::setw(8) << row.samples << std::setw(9) << std::setprecision(1) << row.acc50 * 100
        << std::setw(9) << row.acc75 * 100 << std::setw(9) << row.macc * 100;
    if (verbose) {
      for (double a : row.acc) out << std::setw(8) << std::setprecision(1) << a * 100;
    }
    out << "\n";
  }
  for (const auto& row : report.behavior) {
    out << std::left << std::setw(11) << row.method << std::setw(21) << "go/stop accuracy"
        << std::right << std::setw(8) << row.samples << std::setw(9) << std::setprecision(1)
        << row.accuracy * 100 << "\n";
  }
  return out.str();
}

}  // namespace riskcause

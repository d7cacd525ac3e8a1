#include "riskcause/inference.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "nlohmann/json.hpp"
#include "riskcause/errors.hpp"
#include "riskcause/intervention.hpp"
#include "riskcause/store.hpp"

namespace riskcause {

using json = nlohmann::ordered_json;

template <typename S>
std::pair<Behavior, Prediction> classify_behavior(const DrivingModel<S>& model,
                                                  const Episode& episode) {
  const ForwardResult<S> fwd = model.forward(plain_input<S>(episode));
  return {fwd.prediction.label(), fwd.prediction};
}

template <typename S>
RiskScoreTable risk_scores(const DrivingModel<S>& model, const Episode& episode) {
  if (episode.tracklets.empty())
    throw DataError("risk_scores: episode " + episode.id + " has no tracklets");

  RiskScoreTable table;
  table.baseline_go = model.forward(plain_input<S>(episode)).prediction.s_go;

  std::vector<int> ids;
  ids.reserve(episode.tracklets.size());
  for (const auto& t : episode.tracklets) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());

  for (int id : ids) {
    const ModelInput<S> input = intervened_input<S>(episode, id, model.config().mask_type);
    table.go_under_intervention[id] = model.forward(input).prediction.s_go;
  }
  return table;
}

int select_risk_object(const RiskScoreTable& table) {
  if (table.go_under_intervention.empty())
    throw DataError("select_risk_object: empty score table");
  int best_id = table.go_under_intervention.begin()->first;
  double best = table.go_under_intervention.begin()->second;
  for (const auto& [id, score] : table.go_under_intervention) {
    if (score > best) {  // strict: ties keep the lowest id
      best = score;
      best_id = id;
    }
  }
  return best_id;
}

template <typename S>
int identify_risk_object(const DrivingModel<S>& model, const Episode& episode) {
  return select_risk_object(risk_scores(model, episode));
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

std::string result_record_to_json(const ResultRecord& r) {
  json j;
  j["episode"] = r.episode_id;
  j["method"] = r.method;
  if (r.baseline_go.has_value()) j["baseline_go"] = *r.baseline_go;
  else j["baseline_go"] = nullptr;
  if (r.classified.has_value()) j["classified"] = to_string(*r.classified);
  else j["classified"] = nullptr;
  json scores = json::array();
  for (const auto& [id, s] : r.scores) scores.push_back({{"id", id}, {"score", s}});
  j["scores"] = std::move(scores);
  if (r.selected.has_value()) j["selected"] = *r.selected;
  else j["selected"] = nullptr;
  if (r.gt_cause.has_value()) j["gt_cause"] = *r.gt_cause;
  else j["gt_cause"] = nullptr;
  j["scenario"] = to_string(r.scenario);
  return j.dump();
}

ResultRecord result_record_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("result record parse error: ") + e.what());
  }
  ResultRecord r;
  try {
    r.episode_id = j.at("episode").get<std::string>();
    r.method = j.at("method").get<std::string>();
    if (!j.at("baseline_go").is_null()) r.baseline_go = j.at("baseline_go").get<double>();
    if (!j.at("classified").is_null())
      r.classified = behavior_from_string(j.at("classified").get<std::string>());
    for (const auto& s : j.at("scores"))
      r.scores.emplace_back(s.at("id").get<int>(), s.at("score").get<double>());
    if (!j.at("selected").is_null()) r.selected = j.at("selected").get<int>();
    if (!j.at("gt_cause").is_null()) r.gt_cause = j.at("gt_cause").get<int>();
    r.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("result record field error: ") + e.what());
  }
  return r;
}

void write_results(const std::string& path, const std::vector<ResultRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) out << result_record_to_json(r) << "\n";
  atomic_write_text(path, out.str());
}

std::vector<ResultRecord> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file: " + path);
  std::vector<ResultRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(result_record_from_json(line));
  }
  return out;
}

template std::pair<Behavior, Prediction> classify_behavior(const DrivingModel<float>&,
                                                           const Episode&);
template std::pair<Behavior, Prediction> classify_behavior(const DrivingModel<double>&,
                                                           const Episode&);
template RiskScoreTable risk_scores(const DrivingModel<float>&, const Episode&);
template RiskScoreTable risk_scores(const DrivingModel<double>&, const Episode&);
template int identify_risk_object(const DrivingModel<float>&, const Episode&);
template int identify_risk_object(const DrivingModel<double>&, const Episode&);

}  // namespace riskcause

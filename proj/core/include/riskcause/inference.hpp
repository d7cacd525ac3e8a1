#pragma once

#include <optional>
#include <string>
#include <vector>

#include "riskcause/model.hpp"
#include "riskcause/scene.hpp"

namespace riskcause {

/// Forward pass with no intervention; Stop iff s_go < 0.5 (strict).
template <typename S>
std::pair<Behavior, Prediction> classify_behavior(const DrivingModel<S>& model,
                                                  const Episode& episode);

/// One intervened forward per tracklet plus the un-intervened baseline.
/// Throws DataError on episodes without tracklets.
template <typename S>
RiskScoreTable risk_scores(const DrivingModel<S>& model, const Episode& episode);

/// argmax of s_go under intervention; ties break to the lowest id.
int select_risk_object(const RiskScoreTable& table);

template <typename S>
int identify_risk_object(const DrivingModel<S>& model, const Episode& episode);

/// One per-episode identification record, serializable to JSONL.
struct ResultRecord {
  std::string episode_id;
  std::string method;  // causal | random | attention
  std::optional<double> baseline_go;
  std::optional<Behavior> classified;
  std::vector<std::pair<int, double>> scores;  // id -> s_go under intervention
                                               // (attention weight for the attention method)
  std::optional<int> selected;
  std::optional<int> gt_cause;
  Scenario scenario = Scenario::free_flow;
};

std::string result_record_to_json(const ResultRecord& record);
ResultRecord result_record_from_json(const std::string& line);

void write_results(const std::string& path, const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_results(const std::string& path);

}  // namespace riskcause

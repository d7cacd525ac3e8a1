#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskcause/inference.hpp"
#include "riskcause/model.hpp"
#include "riskcause/rng.hpp"
#include "riskcause/scene.hpp"

namespace riskcause {

/// Intersection over union of two boxes, in [0,1].
double iou(const BBox& a, const BBox& b);

/// The ten evaluation thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> iou_thresholds();

/// One evaluable identification outcome: the predicted and ground-truth
/// boxes at the decision (final) frame. missing=true marks ground-truth
/// samples the method produced no usable prediction for; they count as
/// incorrect at every threshold.
struct MatchResult {
  double iou_value = 0;
  bool missing = false;
};

/// Fraction of results with iou >= threshold. Throws DataError when empty.
double accuracy_at(const std::vector<MatchResult>& results, double threshold);

/// Mean of accuracy_at over the ten thresholds.
double mean_accuracy(const std::vector<MatchResult>& results);

/// Uniformly random tracklet id; the no-information reference method.
int random_baseline(const Episode& episode, Rng& rng);

/// Highest attention weight from one non-intervened forward pass of an
/// attention-pool model; ties break to the lowest id.
template <typename S>
int attention_baseline(const DrivingModel<S>& model, const Episode& episode);

/// Aggregated metrics for one (method, scenario) cell of the report.
struct ReportRow {
  std::string method;
  std::string scenario;  // scenario name or "all"
  int samples = 0;
  std::array<double, 10> acc{};  // per threshold
  double acc50 = 0, acc75 = 0, macc = 0;
};

struct BehaviorRow {
  std::string method;
  int samples = 0;
  double accuracy = 0;  // Go/Stop classification vs ground truth
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<BehaviorRow> behavior;
};

struct EvalOptions {
  /// Keep only ground-truth Stop episodes with exactly one causal object and
  /// at least this many other objects.
  int min_distractors = 0;
  bool require_single_cause = false;
};

/// Joins identification records against dataset ground truth. The ground
/// truth set is every Stop-labeled episode (with a cause) in `episodes` that
/// passes the filters; records for unknown episodes are errors, missing
/// records count as misses. IoU is computed on the final frame.
EvalReport evaluate(const std::vector<ResultRecord>& records,
                    const std::vector<const Episode*>& episodes, const EvalOptions& options = {});

std::string report_to_json_lines(const EvalReport& report);
std::string report_to_table(const EvalReport& report, bool verbose = false);

}  // namespace riskcause

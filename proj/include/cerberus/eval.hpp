#pragma once

// Detection metrics, the normal-frame duplication protocol and the benchmark
// runner that ties a manifest to a cascade run.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cerberus/cascade.hpp"
#include "cerberus/dataset.hpp"

namespace cerberus {

inline constexpr std::string_view kReportSchema = "cerberus-report/1";

// Mann-Whitney: P(score_anomaly > score_normal) + 0.5 * P(tie) over all
// anomaly x normal pairs. Throws SingleClass or LengthMismatch.
double auc(std::span<const double> scores, std::span<const int> labels);

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Precision is 1.0 when nothing is predicted abnormal; recall is 0.0 when
// there are no true anomalies. Throws LengthMismatch.
PrecisionRecall precision_recall(std::span<const Verdict> predicted, std::span<const int> truth);

struct FilteringStats {
  double proportion = 0.0;  // (static + stage-1 normal) / total
  double static_fraction = 0.0;
  double escalated_fraction = 0.0;
  std::optional<double> coarse_recall;  // anomalies reaching stage 2 / true anomalies
  bool valid = true;                    // coarse_recall >= recall target (or unknown)
};

// Frames filtered before the fine stage. Throws EmptyInput on no records.
// With truth labels (frame_id -> label), coarse recall is computed and the
// result flagged invalid below `recall_target`.
FilteringStats filtering_proportion(const std::vector<VerdictRecord>& records,
                                    const std::map<std::string, int, std::less<>>* truth = nullptr,
                                    double recall_target = 0.95);

// Repeats every normal entry floor(m) or ceil(m) times in total (original
// included, extra copies spread evenly in manifest order) so that anomalies
// make up target_ratio of the result. Copies sit right after their original,
// keep its path and seq and get a "#dupN" id suffix. Throws RatioNotReducible
// unless 0 < target_ratio <= current ratio and both classes are present.
DatasetManifest duplicate_normals(const DatasetManifest& manifest, double target_ratio);

struct MetricsReport {
  std::string mode;
  std::size_t frames = 0;
  std::size_t anomalies = 0;
  std::optional<double> auc;
  double precision = 1.0;
  double recall = 0.0;
  FilteringStats filtering;
  double throughput_fps = 0.0;
  double wall_s = 0.0;
  double overhead_s = 0.0;  // sum of per-frame stage timings
  double rho_measured = 0.0;
  // Coarse cost per frame (static frames included), fine cost per escalation.
  double mean_coarse_s = 0.0;
  double mean_fine_s = 0.0;
  std::optional<double> modeled_fps;
};

nlohmann::json to_json(const MetricsReport& report);

// Scores with anomaly_score and final labels against the manifest labels.
// Records whose frame is not in the manifest are ignored.
MetricsReport compute_report(const std::vector<VerdictRecord>& records, const DatasetManifest& manifest,
                             double wall_s, std::string mode, double recall_target = 0.95);

struct BenchmarkResult {
  MetricsReport report;
  StreamResult stream;
};

// Runs the cascade over the manifest and reports on it. Throws EmptyInput for
// an empty manifest.
BenchmarkResult run_benchmark(const DatasetManifest& manifest, Cascade& cascade);

}  // namespace cerberus

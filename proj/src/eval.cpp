#include "cerberus/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cerberus/error.hpp"

namespace cerberus {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of mid-ranks (1-based) of the anomalies.
  double rank_sum = 0.0;
  std::size_t n_anom = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += mid_rank;
        ++n_anom;
      }
    }
    i = j;
  }
  const std::size_t n_norm = scores.size() - n_anom;
  if (n_anom == 0 || n_norm == 0) throw Error(ErrorCode::SingleClass, "AUC needs both classes");
  const double a = static_cast<double>(n_anom);
  return (rank_sum - a * (a + 1.0) / 2.0) / (a * static_cast<double>(n_norm));
}

PrecisionRecall precision_recall(std::span<const Verdict> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "predictions and truth differ in length");
  PrecisionRecall pr;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pos = predicted[i] == Verdict::abnormal;
    const bool actual = truth[i] == 1;
    if (pos && actual) ++pr.tp;
    else if (pos) ++pr.fp;
    else if (actual) ++pr.fn;
  }
  pr.precision = pr.tp + pr.fp == 0 ? 1.0 : static_cast<double>(pr.tp) / static_cast<double>(pr.tp + pr.fp);
  pr.recall = pr.tp + pr.fn == 0 ? 0.0 : static_cast<double>(pr.tp) / static_cast<double>(pr.tp + pr.fn);
  return pr;
}

FilteringStats filtering_proportion(const std::vector<VerdictRecord>& records,
                                    const std::map<std::string, int, std::less<>>* truth, double recall_target) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no verdict records");
  std::size_t still = 0;
  std::size_t cleared = 0;
  std::size_t escalated = 0;
  std::size_t anomalies = 0;
  std::size_t anomalies_escalated = 0;
  for (const auto& r : records) {
    const bool is_static = r.gate == GateState::still && !r.error;
    const bool is_cleared = !is_static && !r.error && !r.stage2 && r.stage1 && !r.stage1->suspicious();
    if (is_static) ++still;
    else if (is_cleared) ++cleared;
    else ++escalated;
    if (truth != nullptr) {
      auto it = truth->find(r.frame_id);
      if (it != truth->end() && it->second == 1) {
        ++anomalies;
        if (!is_static && !is_cleared) ++anomalies_escalated;
      }
    }
  }
  const double n = static_cast<double>(records.size());
  FilteringStats s;
  s.static_fraction = static_cast<double>(still) / n;
  s.proportion = static_cast<double>(still + cleared) / n;
  s.escalated_fraction = static_cast<double>(escalated) / n;
  if (anomalies > 0) {
    s.coarse_recall = static_cast<double>(anomalies_escalated) / static_cast<double>(anomalies);
    s.valid = *s.coarse_recall >= recall_target;
  }
  return s;
}

DatasetManifest duplicate_normals(const DatasetManifest& manifest, double target_ratio) {
  const std::size_t n_anom = manifest.anomaly_count();
  const std::size_t n_norm = manifest.entries.size() - n_anom;
  const double current = manifest.anomaly_ratio();
  if (n_anom == 0 || n_norm == 0) throw Error(ErrorCode::RatioNotReducible, "manifest needs both classes");
  if (!(target_ratio > 0.0) || target_ratio > current + 1e-12) {
    throw Error(ErrorCode::RatioNotReducible, "target ratio must be in (0, " + std::to_string(current) + "]");
  }
  if (std::abs(target_ratio - current) <= 1e-12) return manifest;

  const double a = static_cast<double>(n_anom);
  const auto target_normals = static_cast<std::size_t>(std::llround(a / target_ratio - a));
  if (target_normals <= n_norm) return manifest;
  const double achieved = a / (a + static_cast<double>(target_normals));
  if (std::abs(achieved - target_ratio) > 1e-3) {
    throw Error(ErrorCode::RatioNotReducible, "cannot reach the target ratio within 0.1 percentage points");
  }

  const std::size_t base = target_normals / n_norm;
  const std::size_t extra = target_normals % n_norm;
  DatasetManifest out;
  out.base_dir = manifest.base_dir;
  out.entries.reserve(manifest.entries.size() - n_norm + target_normals);
  std::size_t j = 0;
  for (const auto& e : manifest.entries) {
    out.entries.push_back(e);
    if (e.label == 1) continue;
    // Bresenham spread of the `extra` additional copies over the normals.
    const std::size_t copies = base + ((j + 1) * extra / n_norm - j * extra / n_norm);
    ++j;
    for (std::size_t c = 1; c < copies; ++c) {
      ManifestEntry dup = e;
      dup.frame_id = e.frame_id + std::string(kDuplicateMarker) + std::to_string(c);
      out.entries.push_back(std::move(dup));
    }
  }
  out.validate();
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json filtering = {
      {"proportion", r.filtering.proportion},
      {"static_fraction", r.filtering.static_fraction},
      {"escalated_fraction", r.filtering.escalated_fraction},
      {"valid", r.filtering.valid},
      {"coarse_recall", r.filtering.coarse_recall ? nlohmann::json(*r.filtering.coarse_recall) : nlohmann::json()},
  };
  return {
      {"schema", kReportSchema},
      {"mode", r.mode},
      {"frames", r.frames},
      {"anomalies", r.anomalies},
      {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json()},
      {"precision", r.precision},
      {"recall", r.recall},
      {"filtering", std::move(filtering)},
      {"throughput_fps", r.throughput_fps},
      {"wall_s", r.wall_s},
      {"overhead_s", r.overhead_s},
      {"rho_measured", r.rho_measured},
      {"mean_coarse_s", r.mean_coarse_s},
      {"mean_fine_s", r.mean_fine_s},
      {"modeled_fps", r.modeled_fps ? nlohmann::json(*r.modeled_fps) : nlohmann::json()},
  };
}

MetricsReport compute_report(const std::vector<VerdictRecord>& records, const DatasetManifest& manifest,
                             double wall_s, std::string mode, double recall_target) {
  std::map<std::string, int, std::less<>> truth;
  for (const auto& e : manifest.entries) truth.emplace(e.frame_id, e.label);

  std::vector<VerdictRecord> known;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<Verdict> predicted;
  for (const auto& r : records) {
    auto it = truth.find(r.frame_id);
    if (it == truth.end()) continue;
    known.push_back(r);
    scores.push_back(anomaly_score(r));
    labels.push_back(it->second);
    predicted.push_back(r.final_label);
  }
  if (known.empty()) throw Error(ErrorCode::EmptyInput, "no verdict matches the manifest");

  MetricsReport rep;
  rep.mode = std::move(mode);
  rep.frames = known.size();
  rep.anomalies = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (rep.anomalies > 0 && rep.anomalies < rep.frames) rep.auc = auc(scores, labels);
  const auto pr = precision_recall(predicted, labels);
  rep.precision = pr.precision;
  rep.recall = pr.recall;
  rep.filtering = filtering_proportion(known, &truth, recall_target);
  rep.wall_s = wall_s;
  rep.throughput_fps = wall_s > 0.0 ? static_cast<double>(rep.frames) / wall_s : 0.0;

  double coarse = 0.0;
  double fine = 0.0;
  std::size_t active = 0;
  std::size_t escalated = 0;
  for (const auto& r : known) {
    rep.overhead_s += r.timings.total();
    coarse += r.timings.gate_s + r.timings.stage1_s;
    fine += r.timings.stage2_s;
    if (r.gate == GateState::active && !r.error) ++active;
    if (r.stage2) ++escalated;
  }
  const double n = static_cast<double>(rep.frames);
  rep.rho_measured = active > 0 ? static_cast<double>(escalated) / static_cast<double>(active) : 0.0;
  rep.mean_coarse_s = coarse / n;
  rep.mean_fine_s = escalated > 0 ? fine / static_cast<double>(escalated) : 0.0;
  if (rep.mean_coarse_s > 0.0) {
    rep.modeled_fps = escalated > 0
                          ? model_throughput(rep.mean_coarse_s, rep.mean_fine_s, static_cast<double>(escalated) / n)
                          : 1.0 / rep.mean_coarse_s;
  }
  return rep;
}

BenchmarkResult run_benchmark(const DatasetManifest& manifest, Cascade& cascade) {
  if (manifest.entries.empty()) throw Error(ErrorCode::EmptyInput, "empty manifest");
  BenchmarkResult out;
  out.stream = cascade.process_stream(frames_from_manifest(manifest));
  out.report = compute_report(out.stream.records, manifest, out.stream.wall_s,
                              std::string(to_string(cascade.config().mode)), cascade.config().recall_target);
  return out;
}

}  // namespace cerberus

#include "cerberus/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cerberus/error.hpp"

namespace cerberus {

EmbeddingVector EmbeddingVector::normalized(std::vector<double> raw) {
  double sq = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) throw Error(ErrorCode::MalformedResponse, "embedding has non-finite values");
    sq += v * v;
  }
  if (raw.empty() || sq == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  const double norm = std::sqrt(sq);
  for (double& v : raw) v /= norm;
  EmbeddingVector out;
  out.values_ = std::move(raw);
  return out;
}

EmbeddingMatrix::EmbeddingMatrix(const std::vector<EmbeddingVector>& rows) {
  rows_ = rows.size();
  dim_ = rows.empty() ? 0 : rows.front().dim();
  data_.reserve(rows_ * dim_);
  for (const auto& r : rows) {
    if (r.dim() != dim_) throw Error(ErrorCode::DimensionMismatch, "pool embeddings differ in dimension");
    data_.insert(data_.end(), r.values().begin(), r.values().end());
  }
}

std::string_view to_string(Verdict v) { return v == Verdict::normal ? "normal" : "abnormal"; }

Verdict verdict_from_string(std::string_view s) {
  if (s == "normal") return Verdict::normal;
  if (s == "abnormal") return Verdict::abnormal;
  throw Error(ErrorCode::InvalidArgument, "unknown verdict '" + std::string(s) + "'");
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "vectors differ in dimension");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "vectors differ in dimension");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) { return cosine(u.values(), v.values()); }

std::vector<std::size_t> top_k(std::span<const double> sims, std::size_t k) {
  std::vector<std::size_t> idx(sims.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(k, idx.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), better);
  idx.resize(take);
  return idx;
}

HealthResult health_score(const EmbeddingVector& query, const EmbeddingMatrix& pool, std::span<const int> polarities,
                          std::size_t k) {
  if (pool.rows() == 0) throw Error(ErrorCode::EmptyPool, "candidate pool is empty");
  if (polarities.size() != pool.rows()) throw Error(ErrorCode::LengthMismatch, "polarities do not match pool size");
  if (query.dim() != pool.dim()) throw Error(ErrorCode::DimensionMismatch, "query and pool differ in dimension");
  if (k == 0) throw Error(ErrorCode::BadParams, "k must be >= 1");

  std::vector<double> sims(pool.rows());
  for (std::size_t i = 0; i < pool.rows(); ++i) sims[i] = dot(query.values(), pool.row(i));

  HealthResult result;
  for (std::size_t id : top_k(sims, k)) {
    const int w = polarities[id] > 0 ? +1 : -1;
    result.topk.push_back({id, sims[id], w});
    result.score += w * sims[id];
  }
  return result;
}

Verdict classify(double score, double tau) { return score < tau ? Verdict::abnormal : Verdict::normal; }

double calibrate_tau(std::span<const double> normal_scores, double target_pass_rate) {
  if (normal_scores.size() < 20) {
    throw Error(ErrorCode::InsufficientCalibrationData, "need at least 20 calibration scores");
  }
  if (!(target_pass_rate > 0.0 && target_pass_rate < 1.0)) {
    throw Error(ErrorCode::BadParams, "target pass rate must lie in (0, 1)");
  }
  std::vector<double> sorted(normal_scores.begin(), normal_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double q = 1.0 - target_pass_rate;
  // Small slack absorbs representation error in q*(n-1) (e.g. 0.05*99).
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto index = static_cast<std::size_t>(std::floor(pos + 1e-9));
  return sorted[std::min(index, sorted.size() - 1)];
}

}  // namespace cerberus

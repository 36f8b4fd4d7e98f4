#pragma once

// Health-score kernel shared by both cascade stages: signed sum of the top-k
// cosine similarities between a query embedding and the candidate pool.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace cerberus {

inline constexpr int kDefaultTopK = 5;

// Unit-L2-normalized embedding. Construct via normalized().
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  // Throws ZeroVector for an all-zero input and MalformedResponse for
  // non-finite values.
  static EmbeddingVector normalized(std::vector<double> raw);

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

// Row-major stack of unit vectors with a shared dimension.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(const std::vector<EmbeddingVector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

enum class Verdict { normal, abnormal };

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct ScoredCandidate {
  std::size_t candidate_id = 0;
  double sim = 0.0;
  int weight = -1;

  bool operator==(const ScoredCandidate&) const = default;
};

struct HealthResult {
  double score = 0.0;
  std::vector<ScoredCandidate> topk;
  std::optional<Verdict> verdict;

  bool operator==(const HealthResult&) const = default;
};

// u.v / (|u||v|) clamped to [-1, 1]. Works on raw (unnormalized) vectors.
// Throws DimensionMismatch or ZeroVector.
double cosine(std::span<const double> u, std::span<const double> v);
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

// Plain sequential dot product; equals cosine for unit vectors.
double dot(std::span<const double> u, std::span<const double> v);

// Indices of the k largest sims in descending order; equal sims are ordered
// by ascending index. Returns every index when k exceeds the input size.
std::vector<std::size_t> top_k(std::span<const double> sims, std::size_t k);

// S = sum over top-k of w_t * sim(query, t) with w = +1 for normal polarity and
// -1 otherwise. Throws EmptyPool, DimensionMismatch, LengthMismatch.
HealthResult health_score(const EmbeddingVector& query, const EmbeddingMatrix& pool,
                          std::span<const int> polarities, std::size_t k = kDefaultTopK);

// abnormal iff score < tau.
Verdict classify(double score, double tau);

// Lower-interpolated (1 - target_pass_rate) quantile of normal scores, so at
// least target_pass_rate of them score >= tau. Needs >= 20 scores.
double calibrate_tau(std::span<const double> normal_scores, double target_pass_rate);

}  // namespace cerberus

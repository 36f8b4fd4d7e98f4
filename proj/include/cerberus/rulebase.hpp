#pragma once

// Versioned store of normality rules, perturbed action labels and custom
// anomaly rules, plus the candidate pool every health score is computed over.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cerberus/strings.hpp"

namespace cerberus {

inline constexpr std::string_view kRulebaseSchema = "cerberus-rulebase/1";

inline constexpr std::string_view kNormalTemplatePrefix = "The normal scene depicts ";
inline constexpr std::string_view kSceneTemplatePrefix = "The scene depicts ";

enum class RuleSource { induced, custom, f2c_refined };
enum class RuleKind { anomaly, normal };
enum class CandidateOrigin { normal_rule, perturbed_label, custom_anomaly };

std::string_view to_string(RuleSource s);
RuleSource rule_source_from_string(std::string_view s);

struct Rule {
  std::string text;
  RuleSource source = RuleSource::induced;
  std::int64_t created_version = 1;

  bool operator==(const Rule&) const = default;
};

// Detection thresholds and induction settings carried with the rules.
struct Params {
  int k = 5;
  double tau1 = 0.0;
  double tau2 = 0.0;
  double epsilon_motion = 7e-4;
  double alpha_prompt = 1.2e-3;
  int segment_len = 8;

  bool operator==(const Params&) const = default;

  // Throws Error(BadParams) when k < 1, segment_len < 1 or not 0 <= eps < alpha.
  void validate() const;
};

struct RuleBase {
  std::int64_t version = 1;
  Params params;
  std::vector<Rule> normal_rules;
  std::vector<std::string> perturbed_labels;
  std::vector<Rule> custom_anomaly_rules;

  bool operator==(const RuleBase&) const = default;
};

struct Candidate {
  std::size_t id = 0;
  std::string text;
  int polarity = -1;
  CandidateOrigin origin = CandidateOrigin::perturbed_label;

  bool operator==(const Candidate&) const = default;
};

// Immutable once built; share freely across threads.
struct CandidatePool {
  std::vector<Candidate> candidates;
  std::int64_t rulebase_version = 0;

  std::size_t size() const { return candidates.size(); }
  std::vector<std::string> texts() const;
  std::vector<int> polarities() const;
};

// Lowercase plus whitespace collapse; the identity used for duplicate checks.
std::string normalize_rule_text(std::string_view text);

CandidatePool build_candidate_pool(const RuleBase& rulebase);

// Returns a copy with the rule appended and version bumped by one.
RuleBase add_custom_rule(const RuleBase& rulebase, std::string_view text, RuleKind kind);

// Appends every rule whose normalized text is new to normal_rules, tagging it
// with `source`. The version is bumped exactly once even if nothing was new.
RuleBase merge_normal_rules(const RuleBase& rulebase, const std::vector<std::string>& texts,
                            RuleSource source);

nlohmann::json to_json(const RuleBase& rulebase);
RuleBase rulebase_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CandidatePool& pool);

void save_rulebase(const RuleBase& rulebase, const std::filesystem::path& path);
RuleBase load_rulebase(const std::filesystem::path& path);

// One label per line, '#' starts a comment, blank lines skipped.
std::vector<std::string> parse_label_list(std::string_view content);
std::vector<std::string> load_label_list(const std::filesystem::path& path);

// Single-writer, multi-reader holder. Readers get complete snapshots; the pool
// is rebuilt whenever a mutation lands.
class RuleStore {
 public:
  explicit RuleStore(RuleBase initial);

  std::shared_ptr<const RuleBase> snapshot() const;
  std::shared_ptr<const CandidatePool> pool() const;

  // Serializes `fn(current) -> next`. Throws VersionConflict when the result
  // does not advance the version by exactly one.
  template <typename Fn>
  std::shared_ptr<const RuleBase> update(Fn&& fn) {
    std::lock_guard writer(write_mu_);
    auto current = snapshot();
    RuleBase next = fn(*current);
    return publish(std::move(next), current->version);
  }

  // Replaces the state wholesale without version checks (file reload).
  void reset(RuleBase rulebase);

 private:
  std::shared_ptr<const RuleBase> publish(RuleBase next, std::int64_t previous_version);

  mutable std::mutex read_mu_;
  std::mutex write_mu_;
  std::shared_ptr<const RuleBase> current_;
  std::shared_ptr<const CandidatePool> pool_;
};

}  // namespace cerberus

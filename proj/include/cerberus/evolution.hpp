#pragma once

// Feedback-driven rule refinement. Fine-to-coarse (F2C): frames stage 1
// flagged but stage 2 cleared are re-captioned and folded back into the normal
// rules. User-in-the-loop (UIL): frames finally judged abnormal wait for an
// operator, who may confirm them (optionally adding an anomaly rule) or reject
// them as false positives, which sends them down the F2C path.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cerberus/backends.hpp"
#include "cerberus/cascade.hpp"
#include "cerberus/dataset.hpp"
#include "cerberus/rulebase.hpp"

namespace cerberus {

inline constexpr std::string_view kFeedbackSchema = "cerberus-feedback/1";

enum class FeedbackKind { f2c_candidate, uil_pending };
enum class FeedbackStatus { pending, applied, rejected };
enum class Decision { confirm, reject };

std::string_view to_string(FeedbackKind k);
std::string_view to_string(FeedbackStatus s);
std::string_view to_string(Decision d);
FeedbackKind feedback_kind_from_string(std::string_view s);
FeedbackStatus feedback_status_from_string(std::string_view s);
Decision decision_from_string(std::string_view s);

struct FeedbackEvidence {
  std::string caption;
  std::optional<double> stage1_score;
  std::optional<double> stage2_score;
  double anomaly_score = 0.0;
  std::vector<EvidenceItem> topk;
  std::optional<std::string> prompt_image;

  bool operator==(const FeedbackEvidence&) const = default;
};

struct FeedbackItem {
  std::string id;
  std::string frame_id;
  std::string scene;
  std::int64_t seq = 0;
  FeedbackKind kind = FeedbackKind::f2c_candidate;
  FeedbackEvidence evidence;
  FeedbackStatus status = FeedbackStatus::pending;
  std::int64_t created_at = 0;  // unix milliseconds
  std::optional<Decision> decision;
  std::optional<std::string> rule_text;
  // Rulebase version produced when this item was applied.
  std::optional<std::int64_t> applied_version;
  // For F2C items spawned by a UIL rejection.
  std::optional<std::string> origin_id;

  bool operator==(const FeedbackItem&) const = default;
};

nlohmann::json to_json(const FeedbackItem& item);
FeedbackItem feedback_item_from_json(const nlohmann::json& j);

// Deterministic id, so collecting the same run twice yields the same items.
std::string feedback_id(FeedbackKind kind, std::string_view frame_id, std::int64_t rulebase_version);

// One f2c_candidate per record that stage 1 flagged and stage 2 cleared.
std::vector<FeedbackItem> collect_f2c(const std::vector<VerdictRecord>& records);

// One uil_pending per record whose final label is abnormal.
std::vector<FeedbackItem> enqueue_uil(const std::vector<VerdictRecord>& records);

// Item store backed by a JSONL append log (one full item snapshot per line;
// replay keeps the last snapshot of each id). Thread-safe; without a path it
// lives in memory only.
class FeedbackQueue {
 public:
  FeedbackQueue() = default;
  // Creates the file if missing. Throws CorruptFile on bad lines.
  explicit FeedbackQueue(std::filesystem::path path);

  // Adds items whose id is new; returns the ones added.
  std::vector<FeedbackItem> add(const std::vector<FeedbackItem>& items);
  void put(const FeedbackItem& item);

  std::optional<FeedbackItem> get(std::string_view id) const;
  std::vector<FeedbackItem> list(std::optional<FeedbackKind> kind = std::nullopt,
                                 std::optional<FeedbackStatus> status = std::nullopt) const;
  std::vector<FeedbackItem> pending(FeedbackKind kind) const { return list(kind, FeedbackStatus::pending); }
  std::size_t size() const;

 private:
  void persist(const FeedbackItem& item);

  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::vector<FeedbackItem> items_;
};

// Record-derived F2C items plus pending F2C items already queued (including
// those spawned by UIL rejections), deduplicated by id.
std::vector<FeedbackItem> collect_f2c(const std::vector<VerdictRecord>& records, const FeedbackQueue& queue);

struct F2cOutcome {
  RuleBase rulebase;
  std::vector<std::string> applied_ids;
  std::vector<std::string> new_rules;
};

// Re-captions the frames of the pending items, generalizes the captions and
// merges the rules (source f2c_refined) with one version bump. Without
// pending items the rulebase is returned unchanged. Frames whose captioning
// failed stay pending; BackendUnavailable if none could be captioned or the
// generalizer failed.
F2cOutcome apply_f2c(const RuleBase& rulebase, const std::vector<FeedbackItem>& items, const FrameIndex& frames,
                     const BackendSet& backends, std::size_t max_in_flight = 4);

struct UilOutcome {
  RuleBase rulebase;
  FeedbackItem item;
  std::optional<FeedbackItem> spawned;
};

// confirm + text: add_custom_rule(anomaly), version + 1. confirm without text:
// item applied, rulebase unchanged. reject: item rejected and a pending F2C
// item spawned. Throws AlreadyDecided when the item is not a pending UIL item.
UilOutcome apply_uil(const RuleBase& rulebase, const FeedbackItem& item, Decision decision,
                     std::optional<std::string> rule_text = std::nullopt);

// Couples a rule store, its file and the feedback queue so that every decision
// is durable: the rulebase file is written before the queue records the item.
class FeedbackLoop {
 public:
  FeedbackLoop(RuleStore& store, FeedbackQueue& queue, std::optional<std::filesystem::path> rulebase_path);

  std::vector<FeedbackItem> enqueue(const std::vector<VerdictRecord>& records);

  // Throws UnknownItem, AlreadyDecided, VersionConflict (expected_version
  // stale) and the add_custom_rule errors.
  UilOutcome decide(std::string_view item_id, Decision decision, std::optional<std::string> rule_text = std::nullopt,
                    std::optional<std::int64_t> expected_version = std::nullopt);

  // Operator-authored rule outside the queue.
  std::shared_ptr<const RuleBase> add_rule(std::string_view text, RuleKind kind,
                                           std::optional<std::int64_t> expected_version = std::nullopt);

  F2cOutcome run_f2c(const std::vector<VerdictRecord>& records, const FrameIndex& frames, const BackendSet& backends);

 private:
  void save(const RuleBase& rb);

  RuleStore& store_;
  FeedbackQueue& queue_;
  std::optional<std::filesystem::path> rulebase_path_;
  std::mutex mu_;
};

}  // namespace cerberus

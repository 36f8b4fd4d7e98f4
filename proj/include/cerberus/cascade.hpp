#pragma once

// Online two-stage pipeline. Every frame passes the motion gate; active frames
// are scored against the candidate pool in image-embedding space (stage 1),
// and frames stage 1 finds suspicious are captioned and scored again in
// text-embedding space (stage 2).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cerberus/backends.hpp"
#include "cerberus/dataset.hpp"
#include "cerberus/motion.hpp"
#include "cerberus/rulebase.hpp"
#include "cerberus/scoring.hpp"

namespace cerberus {

inline constexpr std::string_view kVerdictSchema = "cerberus-verdict/1";
inline constexpr std::size_t kDefaultQueueCapacity = 64;

enum class CascadeMode { both, coarse_only, fine_only };

std::string_view to_string(CascadeMode mode);
// Accepts "both", "coarse", "coarse_only", "fine", "fine_only".
CascadeMode cascade_mode_from_string(std::string_view s);

struct CascadeConfig {
  CascadeMode mode = CascadeMode::both;
  Params params;
  // Coarse-stage anomaly recall the filtering report must reach to be valid.
  double recall_target = 0.95;
  double pixel_threshold = kDefaultPixelThreshold;
  int min_region_area = kDefaultMinRegionArea;
  int dilation_radius = kDefaultDilationRadius;

  // false: one frame at a time, start to finish. true: gate, stage 1 and
  // stage 2 run as separate stages joined by bounded queues.
  bool pipelined = false;
  std::size_t queue_capacity = kDefaultQueueCapacity;
  std::size_t stage1_workers = 2;
  std::size_t stage2_in_flight = 4;

  std::optional<std::filesystem::path> dump_prompts;

  // Throws BadParams.
  void validate() const;
  MotionSettings motion() const;
};

// A candidate pool embedded in both spaces. Immutable once built.
struct PoolSnapshot {
  std::shared_ptr<const CandidatePool> pool;
  std::vector<int> polarities;
  std::optional<EmbeddingMatrix> image_space;
  std::optional<EmbeddingMatrix> text_space;

  std::int64_t version() const { return pool->rulebase_version; }
};

// Embeds the pool texts with the image embedder's text tower and with the text
// embedder. Spaces the mode never uses are skipped.
std::shared_ptr<const PoolSnapshot> embed_pool(std::shared_ptr<const CandidatePool> pool, const BackendSet& backends,
                                               CascadeMode mode = CascadeMode::both);

enum class GateState { still, active };

std::string_view to_string(GateState g);

struct EvidenceItem {
  std::size_t candidate_id = 0;
  std::string text;
  double sim = 0.0;
  int weight = -1;

  bool operator==(const EvidenceItem&) const = default;
};

struct Stage1Result {
  std::optional<HealthResult> health;
  double tau = 0.0;
  std::vector<EvidenceItem> evidence;
  // Set when the backend failed; the frame was escalated regardless.
  std::optional<std::string> error;

  bool suspicious() const { return error || (health && health->verdict == Verdict::abnormal); }
  bool operator==(const Stage1Result&) const = default;
};

struct Stage2Result {
  std::string caption;
  std::optional<HealthResult> health;
  double tau = 0.0;
  std::vector<EvidenceItem> evidence;
  // Set when captioning or embedding failed; the frame is flagged abnormal.
  std::optional<std::string> error;

  bool unverified() const { return error.has_value(); }
  bool operator==(const Stage2Result&) const = default;
};

struct StageTimings {
  double gate_s = 0.0;
  double stage1_s = 0.0;
  double stage2_s = 0.0;

  double total() const { return gate_s + stage1_s + stage2_s; }
  bool operator==(const StageTimings&) const = default;
};

struct VerdictRecord {
  std::string frame_id;
  std::string scene;
  std::int64_t seq = 0;
  GateState gate = GateState::still;
  double p = 0.0;
  std::vector<PromptKind> prompts;
  std::optional<std::string> prompt_image;
  std::optional<Stage1Result> stage1;
  std::optional<Stage2Result> stage2;
  Verdict final_label = Verdict::normal;
  double anomaly_score = 0.0;
  std::int64_t rulebase_version = 0;
  // Frame-level failure outside the model stages (e.g. unreadable image).
  std::optional<std::string> error;
  StageTimings timings;

  // Field-wise equality ignoring timings.
  bool same_outcome(const VerdictRecord& other) const;
};

// static -> 0; stage-1 final -> 1 + sigmoid(tau1 - S1); stage-2 final ->
// 2 + sigmoid(tau2 - S2). A failed stage contributes 1 in place of the
// sigmoid term; a frame-level error scores 3.
double anomaly_score(const VerdictRecord& record);

double sigmoid(double x);

// fps = 1 / (T_C + rho * T_F). Throws BadParams unless T_C, T_F > 0 and
// rho in [0, 1].
double model_throughput(double t_coarse, double t_fine, double rho);

nlohmann::json to_json(const VerdictRecord& record);
VerdictRecord verdict_from_json(const nlohmann::json& j);
std::vector<VerdictRecord> parse_verdicts(std::string_view jsonl);
std::vector<VerdictRecord> load_verdicts(const std::filesystem::path& path);
void save_verdicts(const std::vector<VerdictRecord>& records, const std::filesystem::path& path);

// Stage 1: embed the prompted frame, score it against the image-space pool and
// classify against tau1. Backend errors propagate.
Stage1Result stage1(const ImagePayload& prompted, const PoolSnapshot& pool, ImageEmbedder& embedder, std::size_t k,
                    double tau1);

// Stage 2: caption with the describe prompt, embed the caption, score it
// against the text-space pool and classify against tau2. Backend errors
// propagate.
Stage2Result stage2(const ImagePayload& frame, const PoolSnapshot& pool, Captioner& captioner,
                    TextEmbedder& text_embedder, std::size_t k, double tau2);

struct StreamResult {
  std::vector<VerdictRecord> records;
  std::size_t frames = 0;
  std::size_t active = 0;
  std::size_t escalated = 0;
  double rho = 0.0;
  double wall_s = 0.0;

  double fps() const { return wall_s > 0.0 ? static_cast<double>(frames) / wall_s : 0.0; }
};

class Cascade {
 public:
  Cascade(CascadeConfig config, BackendSet backends);

  // Takes effect from the next frame; a frame is scored against one pool.
  void set_pool(std::shared_ptr<const PoolSnapshot> pool);
  std::shared_ptr<const PoolSnapshot> pool() const;

  // Records are handed to `sink` in frame order as they complete, and also
  // returned. Per-frame failures are recorded and the stream continues.
  StreamResult process_stream(const std::vector<Frame>& frames,
                              const std::function<void(const VerdictRecord&)>& sink = {});

  const CascadeConfig& config() const { return config_; }

 private:
  struct Work;
  struct SceneMotion;

  void run_gate(Work& w, std::map<std::string, SceneMotion>& scenes) const;
  void run_stage1(Work& w) const;
  void run_stage2(Work& w) const;
  void finish(Work& w) const;

  StreamResult run_sequential(const std::vector<Frame>& frames, const std::function<void(const VerdictRecord&)>& sink);
  StreamResult run_pipelined(const std::vector<Frame>& frames, const std::function<void(const VerdictRecord&)>& sink);

  CascadeConfig config_;
  BackendSet backends_;
  mutable std::mutex pool_mu_;
  std::shared_ptr<const PoolSnapshot> pool_;
};

}  // namespace cerberus

#include "cerberus/cascade.hpp"

#include <cmath>
#include <map>
#include <thread>

#include "cerberus/concurrency.hpp"
#include "cerberus/error.hpp"
#include "cerberus/fileio.hpp"
#include "cerberus/prompts.hpp"

namespace cerberus {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

PromptKind prompt_kind_from_string(std::string_view s) {
  if (s == "circle") return PromptKind::circle;
  if (s == "square") return PromptKind::square;
  if (s == "none") return PromptKind::none;
  throw Error(ErrorCode::CorruptFile, "unknown prompt kind " + std::string(s));
}

std::string dump_name(std::string_view frame_id) {
  std::string out;
  for (char c : frame_id) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '_' || c == '.';
    out += keep ? c : '_';
  }
  return out + ".png";
}

std::vector<EvidenceItem> evidence_for(const HealthResult& h, const CandidatePool& pool) {
  std::vector<EvidenceItem> out;
  out.reserve(h.topk.size());
  for (const auto& s : h.topk) out.push_back(EvidenceItem{s.candidate_id, pool.candidates.at(s.candidate_id).text, s.sim, s.weight});
  return out;
}

nlohmann::json evidence_json(const std::vector<EvidenceItem>& items) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : items) out.push_back({{"id", e.candidate_id}, {"text", e.text}, {"sim", e.sim}, {"w", e.weight}});
  return out;
}

std::vector<EvidenceItem> evidence_from_json(const nlohmann::json& j) {
  std::vector<EvidenceItem> out;
  for (const auto& e : j) {
    out.push_back(EvidenceItem{e.at("id").get<std::size_t>(), e.value("text", ""), e.at("sim").get<double>(),
                               e.at("w").get<int>()});
  }
  return out;
}

HealthResult health_from_evidence(double score, const std::vector<EvidenceItem>& evidence,
                                  const std::optional<std::string>& verdict) {
  HealthResult h;
  h.score = score;
  for (const auto& e : evidence) h.topk.push_back(ScoredCandidate{e.candidate_id, e.sim, e.weight});
  if (verdict) h.verdict = verdict_from_string(*verdict);
  return h;
}

template <typename StageResult>
nlohmann::json stage_json(const StageResult& s) {
  nlohmann::json j = {{"tau", s.tau}, {"topk", evidence_json(s.evidence)}};
  if (s.health) {
    j["score"] = s.health->score;
    if (s.health->verdict) j["verdict"] = to_string(*s.health->verdict);
  }
  if (s.error) j["error"] = *s.error;
  return j;
}

template <typename StageResult>
void stage_from_json(const nlohmann::json& j, StageResult& s) {
  s.tau = j.at("tau").get<double>();
  s.evidence = evidence_from_json(j.at("topk"));
  if (j.contains("score")) {
    std::optional<std::string> verdict;
    if (j.contains("verdict")) verdict = j.at("verdict").get<std::string>();
    s.health = health_from_evidence(j.at("score").get<double>(), s.evidence, verdict);
  }
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
}

}  // namespace

std::string_view to_string(CascadeMode mode) {
  switch (mode) {
    case CascadeMode::both: return "both";
    case CascadeMode::coarse_only: return "coarse_only";
    case CascadeMode::fine_only: return "fine_only";
  }
  return "both";
}

CascadeMode cascade_mode_from_string(std::string_view s) {
  if (s == "both") return CascadeMode::both;
  if (s == "coarse" || s == "coarse_only") return CascadeMode::coarse_only;
  if (s == "fine" || s == "fine_only") return CascadeMode::fine_only;
  throw Error(ErrorCode::BadParams, "unknown cascade mode " + std::string(s));
}

std::string_view to_string(GateState g) { return g == GateState::still ? "static" : "active"; }

void CascadeConfig::validate() const {
  params.validate();
  if (!(recall_target > 0.0 && recall_target < 1.0)) throw Error(ErrorCode::BadParams, "recall target must be in (0,1)");
  if (queue_capacity < 1 || stage1_workers < 1 || stage2_in_flight < 1) {
    throw Error(ErrorCode::BadParams, "queue capacity and worker counts must be >= 1");
  }
  if (min_region_area < 0 || dilation_radius < 0) throw Error(ErrorCode::BadParams, "negative region settings");
}

MotionSettings CascadeConfig::motion() const {
  return MotionSettings{params.epsilon_motion, params.alpha_prompt, pixel_threshold, min_region_area, dilation_radius};
}

std::shared_ptr<const PoolSnapshot> embed_pool(std::shared_ptr<const CandidatePool> pool, const BackendSet& backends,
                                               CascadeMode mode) {
  if (!pool || pool->size() == 0) throw Error(ErrorCode::EmptyPool, "candidate pool is empty");
  auto snap = std::make_shared<PoolSnapshot>();
  snap->polarities = pool->polarities();
  const auto texts = pool->texts();
  if (mode != CascadeMode::fine_only) {
    if (!backends.image_embedder) throw Error(ErrorCode::BadParams, "image embedder required");
    snap->image_space = EmbeddingMatrix(embed_texts(*backends.image_embedder, texts));
  }
  if (mode != CascadeMode::coarse_only) {
    if (!backends.text_embedder) throw Error(ErrorCode::BadParams, "text embedder required");
    snap->text_space = EmbeddingMatrix(embed_texts(*backends.text_embedder, texts));
  }
  snap->pool = std::move(pool);
  return snap;
}

bool VerdictRecord::same_outcome(const VerdictRecord& other) const {
  auto a = to_json(*this);
  auto b = to_json(other);
  a.erase("timings");
  b.erase("timings");
  return a == b;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double anomaly_score(const VerdictRecord& r) {
  if (r.error) return 3.0;
  if (r.gate == GateState::still) return 0.0;
  if (r.stage2) {
    if (r.stage2->unverified() || !r.stage2->health) return 3.0;
    return 2.0 + sigmoid(r.stage2->tau - r.stage2->health->score);
  }
  if (r.stage1) {
    if (r.stage1->error || !r.stage1->health) return 2.0;
    return 1.0 + sigmoid(r.stage1->tau - r.stage1->health->score);
  }
  return 0.0;
}

double model_throughput(double t_coarse, double t_fine, double rho) {
  if (!(t_coarse > 0.0) || !(t_fine > 0.0) || !(rho >= 0.0 && rho <= 1.0) || !std::isfinite(t_coarse) ||
      !std::isfinite(t_fine)) {
    throw Error(ErrorCode::BadParams, "throughput model needs T_C, T_F > 0 and rho in [0,1]");
  }
  return 1.0 / (t_coarse + rho * t_fine);
}

nlohmann::json to_json(const VerdictRecord& r) {
  nlohmann::json prompts = nlohmann::json::array();
  for (auto k : r.prompts) prompts.push_back(to_string(k));
  nlohmann::json j = {
      {"schema", kVerdictSchema},
      {"frame_id", r.frame_id},
      {"scene", r.scene},
      {"seq", r.seq},
      {"gate", to_string(r.gate)},
      {"p", r.p},
      {"prompts", std::move(prompts)},
      {"final_label", to_string(r.final_label)},
      {"anomaly_score", r.anomaly_score},
      {"rulebase_version", r.rulebase_version},
      {"timings", {{"gate_s", r.timings.gate_s}, {"stage1_s", r.timings.stage1_s}, {"stage2_s", r.timings.stage2_s}}},
  };
  if (r.prompt_image) j["prompt_image"] = *r.prompt_image;
  if (r.stage1) j["stage1"] = stage_json(*r.stage1);
  if (r.stage2) {
    auto s2 = stage_json(*r.stage2);
    s2["caption"] = r.stage2->caption;
    s2["unverified"] = r.stage2->unverified();
    j["stage2"] = std::move(s2);
  }
  if (r.error) j["error"] = *r.error;
  return j;
}

VerdictRecord verdict_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kVerdictSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch, "verdict schema " + j.value("schema", std::string("<missing>")));
  }
  VerdictRecord r;
  try {
    r.frame_id = j.at("frame_id").get<std::string>();
    r.scene = j.at("scene").get<std::string>();
    r.seq = j.at("seq").get<std::int64_t>();
    const auto gate = j.at("gate").get<std::string>();
    if (gate != "static" && gate != "active") throw Error(ErrorCode::CorruptFile, "bad gate " + gate);
    r.gate = gate == "static" ? GateState::still : GateState::active;
    r.p = j.at("p").get<double>();
    for (const auto& k : j.at("prompts")) r.prompts.push_back(prompt_kind_from_string(k.get<std::string>()));
    if (j.contains("prompt_image")) r.prompt_image = j.at("prompt_image").get<std::string>();
    if (j.contains("stage1")) {
      Stage1Result s;
      stage_from_json(j.at("stage1"), s);
      r.stage1 = std::move(s);
    }
    if (j.contains("stage2")) {
      Stage2Result s;
      stage_from_json(j.at("stage2"), s);
      s.caption = j.at("stage2").value("caption", "");
      r.stage2 = std::move(s);
    }
    r.final_label = verdict_from_string(j.at("final_label").get<std::string>());
    r.anomaly_score = j.at("anomaly_score").get<double>();
    r.rulebase_version = j.value("rulebase_version", std::int64_t{0});
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    const auto& t = j.at("timings");
    r.timings = StageTimings{t.value("gate_s", 0.0), t.value("stage1_s", 0.0), t.value("stage2_s", 0.0)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("verdict record: ") + e.what());
  }
  return r;
}

std::vector<VerdictRecord> parse_verdicts(std::string_view jsonl) {
  std::vector<VerdictRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : nonblank_lines(jsonl)) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptFile, "verdict line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(verdict_from_json(j));
  }
  return out;
}

std::vector<VerdictRecord> load_verdicts(const std::filesystem::path& path) {
  return parse_verdicts(read_text_file(path));
}

void save_verdicts(const std::vector<VerdictRecord>& records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  write_file_atomic(path, out);
}

Stage1Result stage1(const ImagePayload& prompted, const PoolSnapshot& pool, ImageEmbedder& embedder, std::size_t k,
                    double tau1) {
  if (!pool.image_space) throw Error(ErrorCode::BadParams, "pool has no image-space embeddings");
  const EmbeddingVector query = embed_image(embedder, prompted);
  Stage1Result out;
  out.tau = tau1;
  out.health = health_score(query, *pool.image_space, pool.polarities, k);
  out.health->verdict = classify(out.health->score, tau1);
  out.evidence = evidence_for(*out.health, *pool.pool);
  return out;
}

Stage2Result stage2(const ImagePayload& frame, const PoolSnapshot& pool, Captioner& captioner,
                    TextEmbedder& text_embedder, std::size_t k, double tau2) {
  if (!pool.text_space) throw Error(ErrorCode::BadParams, "pool has no text-space embeddings");
  Stage2Result out;
  out.tau = tau2;
  const ImagePayload frames[] = {frame};
  out.caption = caption_frame(captioner, frames, kDescribePrompt);
  const std::string texts[] = {out.caption};
  const auto embedded = embed_texts(text_embedder, texts);
  out.health = health_score(embedded.front(), *pool.text_space, pool.polarities, k);
  out.health->verdict = classify(out.health->score, tau2);
  out.evidence = evidence_for(*out.health, *pool.pool);
  return out;
}

// In-flight state of one frame.
struct Cascade::Work {
  std::size_t index = 0;
  const Frame* frame = nullptr;
  std::shared_ptr<const PoolSnapshot> pool;
  VerdictRecord record;
  std::optional<ImagePayload> payload;
  bool done = false;
};

// Per-scene motion state. Entries that share a seq (duplicated frames) reuse
// the analysis of the first one so they see the same predecessor.
struct Cascade::SceneMotion {
  explicit SceneMotion(const MotionSettings& settings) : prompter(settings) {}
  MotionPrompter prompter;
  std::optional<std::int64_t> last_seq;
  FrameMotion last;
};

Cascade::Cascade(CascadeConfig config, BackendSet backends) : config_(std::move(config)), backends_(std::move(backends)) {
  config_.validate();
  if (config_.mode != CascadeMode::fine_only && !backends_.image_embedder) {
    throw Error(ErrorCode::BadParams, "image embedder required for the coarse stage");
  }
  if (config_.mode != CascadeMode::coarse_only && (!backends_.captioner || !backends_.text_embedder)) {
    throw Error(ErrorCode::BadParams, "captioner and text embedder required for the fine stage");
  }
  if (config_.dump_prompts) std::filesystem::create_directories(*config_.dump_prompts);
}

void Cascade::set_pool(std::shared_ptr<const PoolSnapshot> pool) {
  std::lock_guard lock(pool_mu_);
  pool_ = std::move(pool);
}

std::shared_ptr<const PoolSnapshot> Cascade::pool() const {
  std::lock_guard lock(pool_mu_);
  return pool_;
}

void Cascade::run_gate(Work& w, std::map<std::string, SceneMotion>& scenes) const {
  const auto start = Clock::now();
  const Frame& f = *w.frame;
  auto& r = w.record;
  r.frame_id = f.frame_id;
  r.scene = f.scene;
  r.seq = f.seq;
  r.rulebase_version = w.pool ? w.pool->version() : 0;
  try {
    if (!w.pool) throw Error(ErrorCode::EmptyPool, "no candidate pool loaded");
    if (config_.mode == CascadeMode::fine_only) {
      r.gate = GateState::active;
      w.payload = ImagePayload{base_frame_id(f.frame_id), encode_png(f.pixels())};
    } else {
      auto it = scenes.find(f.scene);
      if (it == scenes.end()) it = scenes.emplace(f.scene, SceneMotion(config_.motion())).first;
      SceneMotion& sm = it->second;
      if (!sm.last_seq || *sm.last_seq != f.seq) {
        sm.last = sm.prompter.analyze(f.pixels());
        sm.last_seq = f.seq;
      }
      const FrameMotion& m = sm.last;
      r.p = m.proportion;
      r.gate = m.active ? GateState::active : GateState::still;
      if (m.active) {
        for (const auto& pr : m.prompted.prompts) r.prompts.push_back(pr.kind);
        w.payload = ImagePayload{base_frame_id(f.frame_id), encode_png(m.prompted.rendered)};
        if (config_.dump_prompts) {
          const auto name = dump_name(f.frame_id);
          save_png(m.prompted.rendered, *config_.dump_prompts / name);
          r.prompt_image = name;
        }
      }
    }
  } catch (const std::exception& e) {
    r.error = e.what();
    w.done = true;
  }
  if (r.gate == GateState::still) w.done = true;
  r.timings.gate_s = seconds_since(start);
}

void Cascade::run_stage1(Work& w) const {
  const auto start = Clock::now();
  try {
    w.record.stage1 = stage1(*w.payload, *w.pool, *backends_.image_embedder,
                             static_cast<std::size_t>(config_.params.k), config_.params.tau1);
  } catch (const std::exception& e) {
    Stage1Result failed;
    failed.tau = config_.params.tau1;
    failed.error = e.what();
    w.record.stage1 = std::move(failed);
  }
  w.record.timings.stage1_s = seconds_since(start);
  if (config_.mode == CascadeMode::coarse_only || !w.record.stage1->suspicious()) w.done = true;
}

void Cascade::run_stage2(Work& w) const {
  const auto start = Clock::now();
  try {
    w.record.stage2 = stage2(*w.payload, *w.pool, *backends_.captioner, *backends_.text_embedder,
                             static_cast<std::size_t>(config_.params.k), config_.params.tau2);
  } catch (const std::exception& e) {
    Stage2Result failed;
    failed.tau = config_.params.tau2;
    failed.error = e.what();
    w.record.stage2 = std::move(failed);
  }
  w.record.timings.stage2_s = seconds_since(start);
  w.done = true;
}

void Cascade::finish(Work& w) const {
  auto& r = w.record;
  if (r.error) {
    r.final_label = Verdict::abnormal;
  } else if (r.gate == GateState::still) {
    r.final_label = Verdict::normal;
  } else if (r.stage2) {
    r.final_label = r.stage2->unverified() ? Verdict::abnormal : *r.stage2->health->verdict;
  } else if (r.stage1) {
    r.final_label = r.stage1->suspicious() ? Verdict::abnormal : Verdict::normal;
  }
  r.anomaly_score = anomaly_score(r);
  w.payload.reset();
}

namespace {

void tally(StreamResult& out) {
  out.frames = out.records.size();
  out.active = 0;
  out.escalated = 0;
  for (const auto& r : out.records) {
    if (r.gate == GateState::active && !r.error) ++out.active;
    if (r.stage2) ++out.escalated;
  }
  out.rho = out.active > 0 ? static_cast<double>(out.escalated) / static_cast<double>(out.active) : 0.0;
}

}  // namespace

StreamResult Cascade::process_stream(const std::vector<Frame>& frames,
                                     const std::function<void(const VerdictRecord&)>& sink) {
  return config_.pipelined ? run_pipelined(frames, sink) : run_sequential(frames, sink);
}

StreamResult Cascade::run_sequential(const std::vector<Frame>& frames,
                                     const std::function<void(const VerdictRecord&)>& sink) {
  StreamResult out;
  out.records.reserve(frames.size());
  std::map<std::string, SceneMotion> scenes;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Work w;
    w.index = i;
    w.frame = &frames[i];
    w.pool = pool();
    run_gate(w, scenes);
    if (!w.done && config_.mode != CascadeMode::fine_only) run_stage1(w);
    if (!w.done) run_stage2(w);
    finish(w);
    if (sink) sink(w.record);
    out.records.push_back(std::move(w.record));
  }
  out.wall_s = seconds_since(start);
  tally(out);
  return out;
}

StreamResult Cascade::run_pipelined(const std::vector<Frame>& frames,
                                    const std::function<void(const VerdictRecord&)>& sink) {
  StreamResult out;
  out.records.reserve(frames.size());
  ReorderBuffer<VerdictRecord> reorder([&](VerdictRecord&& r) {
    if (sink) sink(r);
    out.records.push_back(std::move(r));
  });
  BoundedQueue<std::unique_ptr<Work>> to_stage1(config_.queue_capacity);
  BoundedQueue<std::unique_ptr<Work>> to_stage2(config_.queue_capacity);

  auto complete = [&](std::unique_ptr<Work> w) {
    finish(*w);
    reorder.put(w->index, std::move(w->record));
  };

  const auto start = Clock::now();
  {
    std::atomic<std::size_t> stage1_left{config_.stage1_workers};
    std::vector<std::jthread> stage2_threads;
    for (std::size_t t = 0; t < config_.stage2_in_flight; ++t) {
      stage2_threads.emplace_back([&] {
        while (auto w = to_stage2.pop()) {
          run_stage2(**w);
          complete(std::move(*w));
        }
      });
    }
    std::vector<std::jthread> stage1_threads;
    for (std::size_t t = 0; t < config_.stage1_workers; ++t) {
      stage1_threads.emplace_back([&] {
        while (auto w = to_stage1.pop()) {
          if (config_.mode != CascadeMode::fine_only) run_stage1(**w);
          if ((*w)->done) {
            complete(std::move(*w));
          } else {
            to_stage2.push(std::move(*w));
          }
        }
        if (stage1_left.fetch_sub(1) == 1) to_stage2.close();
      });
    }

    // The gate is sequential per stream: each frame needs its predecessor.
    std::map<std::string, SceneMotion> scenes;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      auto w = std::make_unique<Work>();
      w->index = i;
      w->frame = &frames[i];
      w->pool = pool();
      run_gate(*w, scenes);
      if (w->done) {
        complete(std::move(w));
      } else {
        to_stage1.push(std::move(w));
      }
    }
    to_stage1.close();
  }
  out.wall_s = seconds_since(start);
  tally(out);
  return out;
}

}  // namespace cerberus

#include "cerberus/evolution.hpp"

#include <chrono>
#include <set>

#include "cerberus/digest.hpp"
#include "cerberus/error.hpp"
#include "cerberus/fileio.hpp"
#include "cerberus/induction.hpp"
#include "cerberus/strings.hpp"

namespace cerberus {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

FeedbackEvidence evidence_of(const VerdictRecord& r) {
  FeedbackEvidence e;
  e.anomaly_score = r.anomaly_score;
  e.prompt_image = r.prompt_image;
  if (r.stage1 && r.stage1->health) e.stage1_score = r.stage1->health->score;
  if (r.stage2) {
    e.caption = r.stage2->caption;
    if (r.stage2->health) e.stage2_score = r.stage2->health->score;
    e.topk = r.stage2->evidence;
  } else if (r.stage1) {
    e.topk = r.stage1->evidence;
  }
  return e;
}

FeedbackItem item_for(const VerdictRecord& r, FeedbackKind kind) {
  FeedbackItem item;
  item.id = feedback_id(kind, r.frame_id, r.rulebase_version);
  item.frame_id = r.frame_id;
  item.scene = r.scene;
  item.seq = r.seq;
  item.kind = kind;
  item.evidence = evidence_of(r);
  item.created_at = now_ms();
  return item;
}

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

}  // namespace

std::string_view to_string(FeedbackKind k) { return k == FeedbackKind::f2c_candidate ? "f2c_candidate" : "uil_pending"; }

std::string_view to_string(FeedbackStatus s) {
  switch (s) {
    case FeedbackStatus::pending: return "pending";
    case FeedbackStatus::applied: return "applied";
    case FeedbackStatus::rejected: return "rejected";
  }
  return "pending";
}

std::string_view to_string(Decision d) { return d == Decision::confirm ? "confirm" : "reject"; }

FeedbackKind feedback_kind_from_string(std::string_view s) {
  if (s == "f2c_candidate") return FeedbackKind::f2c_candidate;
  if (s == "uil_pending") return FeedbackKind::uil_pending;
  throw Error(ErrorCode::InvalidArgument, "unknown feedback kind " + std::string(s));
}

FeedbackStatus feedback_status_from_string(std::string_view s) {
  if (s == "pending") return FeedbackStatus::pending;
  if (s == "applied") return FeedbackStatus::applied;
  if (s == "rejected") return FeedbackStatus::rejected;
  throw Error(ErrorCode::InvalidArgument, "unknown feedback status " + std::string(s));
}

Decision decision_from_string(std::string_view s) {
  if (s == "confirm") return Decision::confirm;
  if (s == "reject") return Decision::reject;
  throw Error(ErrorCode::InvalidArgument, "decision must be confirm or reject, got " + std::string(s));
}

nlohmann::json to_json(const FeedbackItem& item) {
  nlohmann::json topk = nlohmann::json::array();
  for (const auto& e : item.evidence.topk) {
    topk.push_back({{"id", e.candidate_id}, {"text", e.text}, {"sim", e.sim}, {"w", e.weight}});
  }
  return {
      {"schema", kFeedbackSchema},
      {"id", item.id},
      {"frame_id", item.frame_id},
      {"scene", item.scene},
      {"seq", item.seq},
      {"kind", to_string(item.kind)},
      {"status", to_string(item.status)},
      {"created_at", item.created_at},
      {"evidence",
       {{"caption", item.evidence.caption},
        {"stage1_score", optional_json(item.evidence.stage1_score)},
        {"stage2_score", optional_json(item.evidence.stage2_score)},
        {"anomaly_score", item.evidence.anomaly_score},
        {"topk", std::move(topk)},
        {"prompt_image", optional_json(item.evidence.prompt_image)}}},
      {"decision", item.decision ? nlohmann::json(to_string(*item.decision)) : nlohmann::json()},
      {"rule_text", optional_json(item.rule_text)},
      {"applied_version", optional_json(item.applied_version)},
      {"origin_id", optional_json(item.origin_id)},
  };
}

FeedbackItem feedback_item_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kFeedbackSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch, "feedback schema " + j.value("schema", std::string("<missing>")));
  }
  auto opt_string = [](const nlohmann::json& v) -> std::optional<std::string> {
    if (v.is_null()) return std::nullopt;
    return v.get<std::string>();
  };
  auto opt_double = [](const nlohmann::json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  try {
    FeedbackItem item;
    item.id = j.at("id").get<std::string>();
    item.frame_id = j.at("frame_id").get<std::string>();
    item.scene = j.value("scene", "");
    item.seq = j.value("seq", std::int64_t{0});
    item.kind = feedback_kind_from_string(j.at("kind").get<std::string>());
    item.status = feedback_status_from_string(j.at("status").get<std::string>());
    item.created_at = j.value("created_at", std::int64_t{0});
    const auto& ev = j.at("evidence");
    item.evidence.caption = ev.value("caption", "");
    item.evidence.stage1_score = opt_double(ev.value("stage1_score", nlohmann::json()));
    item.evidence.stage2_score = opt_double(ev.value("stage2_score", nlohmann::json()));
    item.evidence.anomaly_score = ev.value("anomaly_score", 0.0);
    for (const auto& e : ev.value("topk", nlohmann::json::array())) {
      item.evidence.topk.push_back(EvidenceItem{e.at("id").get<std::size_t>(), e.value("text", ""),
                                                e.at("sim").get<double>(), e.at("w").get<int>()});
    }
    item.evidence.prompt_image = opt_string(ev.value("prompt_image", nlohmann::json()));
    if (auto d = opt_string(j.value("decision", nlohmann::json()))) item.decision = decision_from_string(*d);
    item.rule_text = opt_string(j.value("rule_text", nlohmann::json()));
    if (const auto v = j.value("applied_version", nlohmann::json()); !v.is_null()) {
      item.applied_version = v.get<std::int64_t>();
    }
    item.origin_id = opt_string(j.value("origin_id", nlohmann::json()));
    return item;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("feedback item: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::CorruptFile, e.what());
    throw;
  }
}

std::string feedback_id(FeedbackKind kind, std::string_view frame_id, std::int64_t rulebase_version) {
  Sha256Builder h;
  h.field(to_string(kind));
  h.field(frame_id);
  h.field(std::to_string(rulebase_version));
  const std::string prefix = kind == FeedbackKind::f2c_candidate ? "f2c-" : "uil-";
  return prefix + to_hex(h.finish()).substr(0, 12);
}

std::vector<FeedbackItem> collect_f2c(const std::vector<VerdictRecord>& records) {
  std::vector<FeedbackItem> out;
  for (const auto& r : records) {
    const bool flagged = r.stage1 && r.stage1->suspicious();
    const bool cleared = r.stage2 && !r.stage2->unverified() && r.stage2->health &&
                         r.stage2->health->verdict == Verdict::normal;
    if (flagged && cleared) out.push_back(item_for(r, FeedbackKind::f2c_candidate));
  }
  return out;
}

std::vector<FeedbackItem> enqueue_uil(const std::vector<VerdictRecord>& records) {
  std::vector<FeedbackItem> out;
  for (const auto& r : records) {
    if (r.final_label == Verdict::abnormal) out.push_back(item_for(r, FeedbackKind::uil_pending));
  }
  return out;
}

FeedbackQueue::FeedbackQueue(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(*path_)) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    write_file_atomic(*path_, "");
    return;
  }
  std::size_t line_no = 0;
  for (const auto& line : nonblank_lines(read_text_file(*path_))) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptFile, path_->string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    FeedbackItem item = feedback_item_from_json(j);
    auto it = std::find_if(items_.begin(), items_.end(), [&](const FeedbackItem& x) { return x.id == item.id; });
    if (it == items_.end()) items_.push_back(std::move(item));
    else *it = std::move(item);
  }
}

void FeedbackQueue::persist(const FeedbackItem& item) {
  if (path_) append_line(*path_, to_json(item).dump());
}

std::vector<FeedbackItem> FeedbackQueue::add(const std::vector<FeedbackItem>& items) {
  std::lock_guard lock(mu_);
  std::vector<FeedbackItem> added;
  for (const auto& item : items) {
    const bool known =
        std::any_of(items_.begin(), items_.end(), [&](const FeedbackItem& x) { return x.id == item.id; });
    if (known) continue;
    persist(item);
    items_.push_back(item);
    added.push_back(item);
  }
  return added;
}

void FeedbackQueue::put(const FeedbackItem& item) {
  std::lock_guard lock(mu_);
  persist(item);
  auto it = std::find_if(items_.begin(), items_.end(), [&](const FeedbackItem& x) { return x.id == item.id; });
  if (it == items_.end()) items_.push_back(item);
  else *it = item;
}

std::optional<FeedbackItem> FeedbackQueue::get(std::string_view id) const {
  std::lock_guard lock(mu_);
  for (const auto& x : items_) {
    if (x.id == id) return x;
  }
  return std::nullopt;
}

std::vector<FeedbackItem> FeedbackQueue::list(std::optional<FeedbackKind> kind,
                                              std::optional<FeedbackStatus> status) const {
  std::lock_guard lock(mu_);
  std::vector<FeedbackItem> out;
  for (const auto& x : items_) {
    if (kind && x.kind != *kind) continue;
    if (status && x.status != *status) continue;
    out.push_back(x);
  }
  return out;
}

std::size_t FeedbackQueue::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::vector<FeedbackItem> collect_f2c(const std::vector<VerdictRecord>& records, const FeedbackQueue& queue) {
  std::vector<FeedbackItem> out = collect_f2c(records);
  std::set<std::string> ids;
  for (const auto& x : out) ids.insert(x.id);
  for (auto& x : queue.pending(FeedbackKind::f2c_candidate)) {
    if (ids.insert(x.id).second) out.push_back(std::move(x));
  }
  // Items this queue already applied are not offered again.
  std::erase_if(out, [&](const FeedbackItem& x) {
    auto stored = queue.get(x.id);
    return stored && stored->status != FeedbackStatus::pending;
  });
  return out;
}

F2cOutcome apply_f2c(const RuleBase& rulebase, const std::vector<FeedbackItem>& items, const FrameIndex& frames,
                     const BackendSet& backends, std::size_t max_in_flight) {
  F2cOutcome out{rulebase, {}, {}};
  std::vector<const FeedbackItem*> pending;
  for (const auto& x : items) {
    if (x.kind == FeedbackKind::f2c_candidate && x.status == FeedbackStatus::pending && frames.contains(x.frame_id)) {
      pending.push_back(&x);
    }
  }
  if (pending.empty()) return out;
  if (!backends.captioner || !backends.rule_llm) throw Error(ErrorCode::BadParams, "captioner and rule_llm required");

  std::vector<Frame> revisit;
  std::vector<Segment> segments;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const Frame& f = frames.at(pending[i]->frame_id);
    revisit.push_back(f);
    segments.push_back(Segment{f.scene, {i}, {f.frame_id}, 1});
  }
  const auto described = describe_segments(segments, revisit, *backends.captioner, max_in_flight);
  const auto rules = generalize_rules(described.descriptions, *backends.rule_llm);

  std::vector<std::string> texts;
  for (const auto& r : rules) texts.push_back(r.text);
  const auto before = out.rulebase.normal_rules.size();
  out.rulebase = merge_normal_rules(rulebase, texts, RuleSource::f2c_refined);
  for (auto i = before; i < out.rulebase.normal_rules.size(); ++i) out.new_rules.push_back(out.rulebase.normal_rules[i].text);
  for (const auto& d : described.descriptions) out.applied_ids.push_back(pending[d.segment.frame_indices.front()]->id);
  return out;
}

UilOutcome apply_uil(const RuleBase& rulebase, const FeedbackItem& item, Decision decision,
                     std::optional<std::string> rule_text) {
  if (item.kind != FeedbackKind::uil_pending || item.status != FeedbackStatus::pending) {
    throw Error(ErrorCode::AlreadyDecided, "feedback item " + item.id + " was already decided");
  }
  if (rule_text && trim(*rule_text).empty()) rule_text.reset();

  UilOutcome out{rulebase, item, std::nullopt};
  out.item.decision = decision;
  if (decision == Decision::confirm) {
    if (rule_text) {
      out.rulebase = add_custom_rule(rulebase, *rule_text, RuleKind::anomaly);
      out.item.rule_text = trim(*rule_text);
    }
    out.item.status = FeedbackStatus::applied;
    out.item.applied_version = out.rulebase.version;
    return out;
  }
  out.item.status = FeedbackStatus::rejected;
  FeedbackItem spawned = item;
  spawned.id = item.id + "-fp";
  spawned.kind = FeedbackKind::f2c_candidate;
  spawned.status = FeedbackStatus::pending;
  spawned.created_at = now_ms();
  spawned.decision.reset();
  spawned.origin_id = item.id;
  out.spawned = std::move(spawned);
  return out;
}

FeedbackLoop::FeedbackLoop(RuleStore& store, FeedbackQueue& queue, std::optional<std::filesystem::path> rulebase_path)
    : store_(store), queue_(queue), rulebase_path_(std::move(rulebase_path)) {}

void FeedbackLoop::save(const RuleBase& rb) {
  if (rulebase_path_) save_rulebase(rb, *rulebase_path_);
}

std::vector<FeedbackItem> FeedbackLoop::enqueue(const std::vector<VerdictRecord>& records) {
  std::lock_guard lock(mu_);
  return queue_.add(enqueue_uil(records));
}

UilOutcome FeedbackLoop::decide(std::string_view item_id, Decision decision, std::optional<std::string> rule_text,
                                std::optional<std::int64_t> expected_version) {
  std::lock_guard lock(mu_);
  auto item = queue_.get(item_id);
  if (!item) throw Error(ErrorCode::UnknownItem, "no feedback item " + std::string(item_id));
  auto current = store_.snapshot();
  if (expected_version && *expected_version != current->version) {
    throw Error(ErrorCode::VersionConflict, "rulebase is at version " + std::to_string(current->version) +
                                                ", request expected " + std::to_string(*expected_version));
  }
  UilOutcome out = apply_uil(*current, *item, decision, std::move(rule_text));
  if (out.rulebase.version != current->version) {
    store_.update([&](const RuleBase&) { return out.rulebase; });
    save(out.rulebase);
  }
  queue_.put(out.item);
  if (out.spawned) queue_.put(*out.spawned);
  return out;
}

std::shared_ptr<const RuleBase> FeedbackLoop::add_rule(std::string_view text, RuleKind kind,
                                                       std::optional<std::int64_t> expected_version) {
  std::lock_guard lock(mu_);
  auto next = store_.update([&](const RuleBase& current) {
    if (expected_version && *expected_version != current.version) {
      throw Error(ErrorCode::VersionConflict, "rulebase is at version " + std::to_string(current.version));
    }
    return add_custom_rule(current, text, kind);
  });
  save(*next);
  return next;
}

F2cOutcome FeedbackLoop::run_f2c(const std::vector<VerdictRecord>& records, const FrameIndex& frames,
                                 const BackendSet& backends) {
  std::lock_guard lock(mu_);
  queue_.add(collect_f2c(records));
  const auto pending = queue_.pending(FeedbackKind::f2c_candidate);
  auto current = store_.snapshot();
  F2cOutcome out = apply_f2c(*current, pending, frames, backends);
  if (out.applied_ids.empty()) return out;
  store_.update([&](const RuleBase&) { return out.rulebase; });
  save(out.rulebase);
  for (const auto& id : out.applied_ids) {
    auto item = queue_.get(id);
    item->status = FeedbackStatus::applied;
    item->applied_version = out.rulebase.version;
    queue_.put(*item);
  }
  return out;
}

}  // namespace cerberus

#include <gtest/gtest.h>

#include "cerberus/evolution.hpp"
#include "cerberus/fileio.hpp"
#include "testutil.hpp"
#include "world.hpp"

namespace cerberus {
namespace {

using testing::code_of;
using testing::FrameKind;
using testing::TempDir;
using testing::World;

const World& world() {
  static const World w = testing::make_world({.frames = 200, .anomalies = 20, .hard_normals = 10});
  return w;
}

std::vector<VerdictRecord> run_world(const World& w, const RuleBase& rb) {
  auto backends = w.backends();
  CascadeConfig cfg;
  cfg.params = rb.params;
  Cascade cascade(cfg, backends);
  cascade.set_pool(embed_pool(std::make_shared<const CandidatePool>(build_candidate_pool(rb)), backends));
  return cascade.process_stream(w.frames).records;
}

const std::vector<VerdictRecord>& records() {
  static const auto r = run_world(world(), world().rulebase);
  return r;
}

TEST(CollectF2c, MatchesBruteForceScan) {
  const auto items = collect_f2c(records());
  std::vector<std::string> want;
  for (const auto& r : records()) {
    const bool flagged = r.stage1 && r.stage1->health && r.stage1->health->verdict == Verdict::abnormal;
    const bool cleared = r.stage2 && r.stage2->health && r.stage2->health->verdict == Verdict::normal;
    if (flagged && cleared) want.push_back(r.frame_id);
  }
  ASSERT_EQ(items.size(), want.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(items[i].frame_id, want[i]);
    EXPECT_EQ(items[i].kind, FeedbackKind::f2c_candidate);
    EXPECT_EQ(items[i].status, FeedbackStatus::pending);
  }
  EXPECT_EQ(items.size(), world().count(FrameKind::hard) + world().count(FrameKind::uil_target));
  EXPECT_EQ(collect_f2c(records()), items);
}

TEST(CollectF2c, NoEscalationsNoItems) {
  std::vector<VerdictRecord> quiet(records().begin(), records().end());
  for (auto& r : quiet) r.stage2.reset();
  EXPECT_TRUE(collect_f2c(quiet).empty());
}

TEST(EnqueueUil, OnlyFinalAbnormal) {
  const auto items = enqueue_uil(records());
  std::size_t abnormal = 0;
  for (const auto& r : records()) abnormal += r.final_label == Verdict::abnormal;
  EXPECT_EQ(items.size(), abnormal);
  for (const auto& x : items) {
    EXPECT_EQ(x.kind, FeedbackKind::uil_pending);
    EXPECT_EQ(x.id, feedback_id(FeedbackKind::uil_pending, x.frame_id, world().rulebase.version));
    EXPECT_FALSE(x.evidence.caption.empty());
  }
}

TEST(ApplyF2c, NewRuleBumpsOnce) {
  const auto& w = world();
  const auto items = collect_f2c(records());
  const FrameIndex index(w.frames);
  auto backends = w.backends({"- people linger by the kiosk\n- People linger  by the kiosk\n- people walk along the sidewalk"});
  const auto out = apply_f2c(w.rulebase, items, index, backends);
  EXPECT_EQ(out.rulebase.version, w.rulebase.version + 1);
  EXPECT_EQ(out.new_rules, (std::vector<std::string>{"people linger by the kiosk"}));
  EXPECT_EQ(out.rulebase.normal_rules.size(), w.rulebase.normal_rules.size() + 1);
  EXPECT_EQ(out.rulebase.normal_rules.back().source, RuleSource::f2c_refined);
  EXPECT_EQ(out.applied_ids.size(), items.size());
  EXPECT_EQ(backends.captioner->request_count(), items.size());
}

TEST(ApplyF2c, DuplicateRuleStillBumps) {
  const auto& w = world();
  const FrameIndex index(w.frames);
  const auto out = apply_f2c(w.rulebase, collect_f2c(records()), index, w.backends({"- people walk along the sidewalk"}));
  EXPECT_EQ(out.rulebase.version, w.rulebase.version + 1);
  EXPECT_EQ(out.rulebase.normal_rules, w.rulebase.normal_rules);
  EXPECT_TRUE(out.new_rules.empty());
}

TEST(ApplyF2c, FailureKeepsItemsPending) {
  const auto& w = world();
  TempDir dir("f2c_fail");
  RuleStore store(w.rulebase);
  FeedbackQueue queue(dir / "q.jsonl");
  FeedbackLoop loop(store, queue, dir / "rb.json");
  auto backends = w.backends();
  std::static_pointer_cast<ScriptedRuleGeneralizer>(backends.rule_llm)->set_failing(true);
  EXPECT_EQ(code_of([&] { loop.run_f2c(records(), FrameIndex(w.frames), backends); }), ErrorCode::BackendUnavailable);
  EXPECT_EQ(store.snapshot()->version, w.rulebase.version);
  EXPECT_EQ(queue.pending(FeedbackKind::f2c_candidate).size(), collect_f2c(records()).size());
}

TEST(FeedbackLoop, F2cIdempotentReapply) {
  const auto& w = world();
  TempDir dir("f2c_loop");
  RuleStore store(w.rulebase);
  FeedbackQueue queue(dir / "q.jsonl");
  FeedbackLoop loop(store, queue, dir / "rb.json");
  const FrameIndex index(w.frames);
  const auto first = loop.run_f2c(records(), index, w.backends({"- people linger by the kiosk"}));
  EXPECT_EQ(store.snapshot()->version, 2);
  EXPECT_EQ(load_rulebase(dir / "rb.json"), *store.snapshot());
  for (const auto& id : first.applied_ids) {
    EXPECT_EQ(queue.get(id)->status, FeedbackStatus::applied);
    EXPECT_EQ(queue.get(id)->applied_version, 2);
  }
  const auto again = loop.run_f2c(records(), index, w.backends({"- people linger by the kiosk"}));
  EXPECT_TRUE(again.applied_ids.empty());
  EXPECT_EQ(store.snapshot()->version, 2);
  EXPECT_TRUE(collect_f2c(records(), queue).empty());
}

FeedbackItem pending_uil() {
  return enqueue_uil(records()).front();
}

TEST(ApplyUil, ConfirmWithTextAddsAnomalyRule) {
  const auto& w = world();
  const auto out = apply_uil(w.rulebase, pending_uil(), Decision::confirm, w.custom_rule);
  EXPECT_EQ(out.rulebase.version, w.rulebase.version + 1);
  ASSERT_EQ(out.rulebase.custom_anomaly_rules.size(), 1u);
  EXPECT_EQ(out.rulebase.custom_anomaly_rules[0].text, "loitering is anomalous");
  EXPECT_EQ(out.item.status, FeedbackStatus::applied);
  EXPECT_EQ(out.item.applied_version, out.rulebase.version);
  EXPECT_FALSE(out.spawned.has_value());
  EXPECT_EQ(out.rulebase.normal_rules, w.rulebase.normal_rules);
}

TEST(ApplyUil, ConfirmWithoutTextLeavesRules) {
  const auto& w = world();
  const auto out = apply_uil(w.rulebase, pending_uil(), Decision::confirm);
  EXPECT_EQ(out.rulebase, w.rulebase);
  EXPECT_EQ(out.item.status, FeedbackStatus::applied);
}

TEST(ApplyUil, RejectRoutesIntoF2c) {
  const auto& w = world();
  FeedbackQueue queue;
  const auto item = pending_uil();
  queue.add({item});
  const auto out = apply_uil(w.rulebase, item, Decision::reject);
  EXPECT_EQ(out.item.status, FeedbackStatus::rejected);
  ASSERT_TRUE(out.spawned.has_value());
  EXPECT_EQ(out.spawned->kind, FeedbackKind::f2c_candidate);
  EXPECT_EQ(out.spawned->origin_id, item.id);
  queue.put(out.item);
  queue.put(*out.spawned);
  const auto next = collect_f2c(records(), queue);
  EXPECT_TRUE(std::any_of(next.begin(), next.end(), [&](const auto& x) { return x.id == out.spawned->id; }));
  EXPECT_EQ(code_of([&] { apply_uil(w.rulebase, out.item, Decision::confirm); }), ErrorCode::AlreadyDecided);
}

TEST(FeedbackLoop, DecisionsDurableAndGuarded) {
  const auto& w = world();
  TempDir dir("uil_loop");
  std::string id;
  {
    RuleStore store(w.rulebase);
    FeedbackQueue queue(dir / "q.jsonl");
    FeedbackLoop loop(store, queue, dir / "rb.json");
    const auto added = loop.enqueue(records());
    ASSERT_FALSE(added.empty());
    EXPECT_TRUE(loop.enqueue(records()).empty());
    id = added[0].id;
    EXPECT_EQ(code_of([&] { loop.decide("nope", Decision::confirm); }), ErrorCode::UnknownItem);
    EXPECT_EQ(code_of([&] { loop.decide(id, Decision::confirm, w.custom_rule, 7); }), ErrorCode::VersionConflict);
    loop.decide(id, Decision::confirm, w.custom_rule, 1);
    EXPECT_EQ(store.snapshot()->version, 2);
    EXPECT_EQ(code_of([&] { loop.decide(id, Decision::reject); }), ErrorCode::AlreadyDecided);
  }
  FeedbackQueue reopened(dir / "q.jsonl");
  EXPECT_EQ(reopened.get(id)->status, FeedbackStatus::applied);
  EXPECT_EQ(reopened.get(id)->rule_text, w.custom_rule);
  EXPECT_EQ(reopened.pending(FeedbackKind::uil_pending).size(), enqueue_uil(records()).size() - 1);
  EXPECT_EQ(load_rulebase(dir / "rb.json").custom_anomaly_rules.size(), 1u);
}

TEST(FeedbackQueue, ReplayLastWinsAndCorruption) {
  TempDir dir("queue");
  auto item = pending_uil();
  {
    FeedbackQueue q(dir / "q.jsonl");
    q.add({item});
    item.status = FeedbackStatus::rejected;
    q.put(item);
  }
  FeedbackQueue q(dir / "q.jsonl");
  EXPECT_EQ(q.size(), 1u);
  EXPECT_EQ(q.get(item.id)->status, FeedbackStatus::rejected);
  EXPECT_EQ(feedback_item_from_json(to_json(item)), item);
  append_line(dir / "q.jsonl", "{broken");
  EXPECT_EQ(code_of([&] { FeedbackQueue broken(dir / "q.jsonl"); }), ErrorCode::CorruptFile);
}

TEST(Uil, ConfirmedRuleFlipsTargetFrame) {
  const auto& w = world();
  const auto before = run_world(w, w.rulebase);
  const auto out = apply_uil(w.rulebase, pending_uil(), Decision::confirm, w.custom_rule);
  const auto after = run_world(w, out.rulebase);
  std::size_t seen = 0;
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    if (w.frames[i].frame_id != w.uil_target_id) continue;
    ASSERT_TRUE(before[i].stage2 && after[i].stage2);
    EXPECT_EQ(before[i].stage2->health->verdict, Verdict::normal);
    EXPECT_EQ(after[i].stage2->health->verdict, Verdict::abnormal);
    EXPECT_EQ(after[i].rulebase_version, 2);
    ++seen;
  }
  EXPECT_EQ(seen, 1u);
}

}  // namespace
}  // namespace cerberus

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

#include "cerberus/error.hpp"
#include "cerberus/fileio.hpp"
#include "cerberus/rulebase.hpp"
#include "testutil.hpp"
#include "world.hpp"

namespace cerberus {
namespace {

using testing::code_of;
using testing::TempDir;

RuleBase small_rulebase() {
  RuleBase rb;
  rb.normal_rules = {{"pedestrians walk on sidewalks", RuleSource::induced, 1}};
  rb.perturbed_labels = {"running", "jumping"};
  return rb;
}

TEST(CandidatePool, TemplatesAndPolarities) {
  const auto pool = build_candidate_pool(small_rulebase());
  ASSERT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool.candidates[0].text, "The normal scene depicts pedestrians walk on sidewalks.");
  EXPECT_EQ(pool.candidates[1].text, "The scene depicts running.");
  EXPECT_EQ(pool.candidates[2].text, "The scene depicts jumping.");
  EXPECT_EQ(pool.polarities(), (std::vector<int>{+1, -1, -1}));
}

TEST(CandidatePool, SingleLabel) {
  RuleBase rb;
  rb.perturbed_labels = {"running"};
  const auto pool = build_candidate_pool(rb);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(pool.candidates[0].text, "The scene depicts running.");
  EXPECT_EQ(pool.candidates[0].polarity, -1);
  EXPECT_EQ(pool.candidates[0].origin, CandidateOrigin::perturbed_label);
}

TEST(CandidatePool, EmptyLabelsRejected) {
  RuleBase rb;
  rb.normal_rules = {{"people walk", RuleSource::induced, 1}};
  EXPECT_EQ(code_of([&] { build_candidate_pool(rb); }), ErrorCode::EmptyPerturbedSet);
}

TEST(CandidatePool, FixtureScale) {
  RuleBase rb;
  for (const auto& r : testing::fixture_rules()) rb.normal_rules.push_back({r, RuleSource::induced, 1});
  rb.perturbed_labels = testing::fixture_labels();
  ASSERT_EQ(rb.perturbed_labels.size(), 339u);
  EXPECT_EQ(build_candidate_pool(rb).size(), 11u + 339u);
}

TEST(CandidatePool, CustomAnomalyOrderAndPolarity) {
  auto rb = add_custom_rule(small_rulebase(), "walking toward or away from the camera is anomalous", RuleKind::anomaly);
  const auto pool = build_candidate_pool(rb);
  ASSERT_EQ(pool.size(), 4u);
  EXPECT_EQ(pool.candidates[1].origin, CandidateOrigin::custom_anomaly);
  EXPECT_EQ(pool.candidates[1].polarity, -1);
  EXPECT_EQ(pool.candidates[1].text, "The scene depicts walking toward or away from the camera is anomalous.");
  EXPECT_EQ(pool.rulebase_version, 2);
}

TEST(CandidatePool, PropertiesOverRandomRulebases) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    RuleBase rb;
    const int nn = n(rng), nc = n(rng), nl = n(rng) + 1;
    for (int i = 0; i < nn; ++i) rb.normal_rules.push_back({"normal " + std::to_string(i), RuleSource::induced, 1});
    for (int i = 0; i < nc; ++i) rb.custom_anomaly_rules.push_back({"custom " + std::to_string(i), RuleSource::custom, 1});
    for (int i = 0; i < nl; ++i) rb.perturbed_labels.push_back("label " + std::to_string(i));
    const auto pool = build_candidate_pool(rb);
    ASSERT_EQ(pool.size(), static_cast<std::size_t>(nn + nc + nl));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto& c = pool.candidates[i];
      EXPECT_EQ(c.id, i);
      EXPECT_EQ(c.polarity == +1, c.origin == CandidateOrigin::normal_rule);
    }
    EXPECT_EQ(to_json(pool).dump(), to_json(build_candidate_pool(rb)).dump());
  }
}

TEST(AddCustomRule, AppendsAndBumps) {
  const auto rb = small_rulebase();
  const auto next = add_custom_rule(rb, "loitering is anomalous", RuleKind::anomaly);
  EXPECT_EQ(next.version, rb.version + 1);
  ASSERT_EQ(next.custom_anomaly_rules.size(), 1u);
  EXPECT_EQ(next.custom_anomaly_rules[0].source, RuleSource::custom);
  EXPECT_EQ(next.custom_anomaly_rules[0].created_version, 2);
  const auto normal = add_custom_rule(rb, "cyclists ride in the bike lane", RuleKind::normal);
  EXPECT_EQ(normal.normal_rules.size(), 2u);
  EXPECT_EQ(normal.normal_rules.back().source, RuleSource::custom);
}

TEST(AddCustomRule, DuplicateAndEmpty) {
  const auto next = add_custom_rule(small_rulebase(), "loitering is anomalous", RuleKind::anomaly);
  EXPECT_EQ(code_of([&] { add_custom_rule(next, "  Loitering   IS anomalous ", RuleKind::anomaly); }),
            ErrorCode::DuplicateRule);
  EXPECT_EQ(code_of([&] { add_custom_rule(next, "   \t", RuleKind::anomaly); }), ErrorCode::EmptyRuleText);
  EXPECT_EQ(code_of([&] { add_custom_rule(next, "Pedestrians walk  on sidewalks", RuleKind::normal); }),
            ErrorCode::DuplicateRule);
}

TEST(MergeNormalRules, DedupsAndBumpsOnce) {
  const auto rb = small_rulebase();
  const auto next = merge_normal_rules(rb, {"people sit", "PEOPLE  sit", "pedestrians walk on sidewalks", " "},
                                       RuleSource::f2c_refined);
  EXPECT_EQ(next.version, rb.version + 1);
  ASSERT_EQ(next.normal_rules.size(), 2u);
  EXPECT_EQ(next.normal_rules[1].text, "people sit");
  EXPECT_EQ(next.normal_rules[1].source, RuleSource::f2c_refined);
}

TEST(RuleBaseProperty, VersionMonotoneAndListsDeduplicated) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> op(0, 2);
  std::uniform_int_distribution<int> word(0, 9);
  auto rb = small_rulebase();
  for (int step = 0; step < 300; ++step) {
    const auto before = rb.version;
    const std::string text = "rule " + std::to_string(word(rng));
    try {
      switch (op(rng)) {
        case 0: rb = add_custom_rule(rb, text, RuleKind::anomaly); break;
        case 1: rb = add_custom_rule(rb, text, RuleKind::normal); break;
        default: rb = merge_normal_rules(rb, {text, "RULE  " + std::to_string(word(rng))}, RuleSource::f2c_refined);
      }
      EXPECT_EQ(rb.version, before + 1);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DuplicateRule);
      EXPECT_EQ(rb.version, before);
    }
  }
  for (const auto* list : {&rb.normal_rules, &rb.custom_anomaly_rules}) {
    std::set<std::string> seen;
    for (const auto& r : *list) EXPECT_TRUE(seen.insert(normalize_rule_text(r.text)).second) << r.text;
  }
}

TEST(RuleBaseFile, RoundTrip) {
  TempDir dir("rb_roundtrip");
  auto rb = small_rulebase();
  rb = add_custom_rule(rb, "loitering is anomalous", RuleKind::anomaly);
  rb = add_custom_rule(rb, "people queue at the kiosk", RuleKind::normal);
  rb.params.tau1 = -0.125;
  rb.params.tau2 = 0.25;
  rb.params.k = 3;
  save_rulebase(rb, dir / "rb.json");
  EXPECT_EQ(load_rulebase(dir / "rb.json"), rb);
}

TEST(RuleBaseFile, SchemaMismatch) {
  TempDir dir("rb_schema");
  auto j = to_json(small_rulebase());
  j["schema"] = "cerberus-rulebase/99";
  write_file_atomic(dir / "rb.json", j.dump());
  EXPECT_EQ(code_of([&] { load_rulebase(dir / "rb.json"); }), ErrorCode::SchemaVersionMismatch);
  EXPECT_EQ(code_of([&] { load_rulebase(dir / "missing.json"); }), ErrorCode::IoError);
}

TEST(RuleBaseFile, HandEditedVersionKept) {
  TempDir dir("rb_edit");
  save_rulebase(small_rulebase(), dir / "rb.json");
  std::string text = read_text_file(dir / "rb.json");
  const auto pos = text.find("\"version\": 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 12, "\"version\": 42");
  write_file_atomic(dir / "rb.json", text);
  EXPECT_EQ(load_rulebase(dir / "rb.json").version, 42);
}

TEST(LabelList, CommentsAndBlanks) {
  const auto labels = parse_label_list("# header\nrunning\n\n  jumping  # inline\n#only\n");
  EXPECT_EQ(labels, (std::vector<std::string>{"running", "jumping"}));
}

TEST(RuleStore, ReadersSeeCompleteVersions) {
  RuleStore store(small_rulebase());
  std::atomic<bool> done{false};
  std::thread reader([&] {
    while (!done.load()) {
      auto rb = store.snapshot();
      EXPECT_EQ(rb->version, static_cast<std::int64_t>(rb->custom_anomaly_rules.size()) + 1);
    }
  });
  for (int i = 0; i < 100; ++i) {
    store.update([&](const RuleBase& cur) { return add_custom_rule(cur, "rule " + std::to_string(i), RuleKind::anomaly); });
  }
  done = true;
  reader.join();
  EXPECT_EQ(store.snapshot()->version, 101);
  EXPECT_EQ(store.pool()->rulebase_version, 101);
  EXPECT_EQ(store.pool()->size(), 3u + 100u);
  EXPECT_EQ(code_of([&] { store.update([](const RuleBase& cur) { return cur; }); }), ErrorCode::VersionConflict);
}

}  // namespace
}  // namespace cerberus

#include "cerberus/rulebase.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string templated(std::string_view prefix, std::string_view body) {
  std::string out(prefix);
  out += body;
  out += '.';
  return out;
}

bool contains_normalized(const std::vector<Rule>& rules, const std::string& normalized) {
  return std::any_of(rules.begin(), rules.end(), [&](const Rule& r) {
    return normalize_rule_text(r.text) == normalized;
  });
}

nlohmann::json rule_to_json(const Rule& r) {
  return {{"text", r.text}, {"source", to_string(r.source)}, {"created_version", r.created_version}};
}

Rule rule_from_json(const nlohmann::json& j) {
  Rule r;
  r.text = j.at("text").get<std::string>();
  r.source = rule_source_from_string(j.at("source").get<std::string>());
  r.created_version = j.at("created_version").get<std::int64_t>();
  if (trim(r.text).empty()) throw Error(ErrorCode::CorruptFile, "rule with empty text");
  if (r.created_version < 1) throw Error(ErrorCode::CorruptFile, "rule created_version < 1");
  return r;
}

std::string_view to_string(CandidateOrigin o) {
  switch (o) {
    case CandidateOrigin::normal_rule: return "normal_rule";
    case CandidateOrigin::perturbed_label: return "perturbed_label";
    case CandidateOrigin::custom_anomaly: return "custom_anomaly";
  }
  return "perturbed_label";
}

}  // namespace

std::string_view to_string(RuleSource s) {
  switch (s) {
    case RuleSource::induced: return "induced";
    case RuleSource::custom: return "custom";
    case RuleSource::f2c_refined: return "f2c_refined";
  }
  return "induced";
}

RuleSource rule_source_from_string(std::string_view s) {
  if (s == "induced") return RuleSource::induced;
  if (s == "custom") return RuleSource::custom;
  if (s == "f2c_refined") return RuleSource::f2c_refined;
  throw Error(ErrorCode::CorruptFile, "unknown rule source '" + std::string(s) + "'");
}

void Params::validate() const {
  if (k < 1) throw Error(ErrorCode::BadParams, "k must be >= 1");
  if (segment_len < 1) throw Error(ErrorCode::BadParams, "segment_len must be >= 1");
  if (!(epsilon_motion >= 0.0 && epsilon_motion < alpha_prompt)) {
    throw Error(ErrorCode::BadParams, "require 0 <= epsilon_motion < alpha_prompt");
  }
}

std::vector<std::string> CandidatePool::texts() const {
  std::vector<std::string> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.text);
  return out;
}

std::vector<int> CandidatePool::polarities() const {
  std::vector<int> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.polarity);
  return out;
}

std::string trim(std::string_view text) {
  auto begin = text.begin();
  auto end = text.end();
  while (begin != end && is_space(*begin)) ++begin;
  while (end != begin && is_space(*(end - 1))) --end;
  return std::string(begin, end);
}

std::string normalize_rule_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

CandidatePool build_candidate_pool(const RuleBase& rulebase) {
  if (rulebase.perturbed_labels.empty()) {
    throw Error(ErrorCode::EmptyPerturbedSet, "rulebase has no perturbed labels");
  }
  CandidatePool pool;
  pool.rulebase_version = rulebase.version;
  pool.candidates.reserve(rulebase.normal_rules.size() + rulebase.custom_anomaly_rules.size() +
                          rulebase.perturbed_labels.size());
  auto push = [&](std::string text, int polarity, CandidateOrigin origin) {
    pool.candidates.push_back({pool.candidates.size(), std::move(text), polarity, origin});
  };
  for (const auto& r : rulebase.normal_rules) {
    push(templated(kNormalTemplatePrefix, r.text), +1, CandidateOrigin::normal_rule);
  }
  for (const auto& r : rulebase.custom_anomaly_rules) {
    push(templated(kSceneTemplatePrefix, r.text), -1, CandidateOrigin::custom_anomaly);
  }
  for (const auto& l : rulebase.perturbed_labels) {
    push(templated(kSceneTemplatePrefix, l), -1, CandidateOrigin::perturbed_label);
  }
  return pool;
}

RuleBase add_custom_rule(const RuleBase& rulebase, std::string_view text, RuleKind kind) {
  std::string cleaned = trim(text);
  if (cleaned.empty()) throw Error(ErrorCode::EmptyRuleText, "rule text is empty");
  const std::string key = normalize_rule_text(cleaned);
  const auto& existing =
      kind == RuleKind::anomaly ? rulebase.custom_anomaly_rules : rulebase.normal_rules;
  if (contains_normalized(existing, key)) {
    throw Error(ErrorCode::DuplicateRule, "rule already present: " + cleaned);
  }
  RuleBase next = rulebase;
  next.version = rulebase.version + 1;
  Rule rule{std::move(cleaned), RuleSource::custom, next.version};
  if (kind == RuleKind::anomaly) {
    next.custom_anomaly_rules.push_back(std::move(rule));
  } else {
    next.normal_rules.push_back(std::move(rule));
  }
  return next;
}

RuleBase merge_normal_rules(const RuleBase& rulebase, const std::vector<std::string>& texts,
                            RuleSource source) {
  RuleBase next = rulebase;
  next.version = rulebase.version + 1;
  std::unordered_set<std::string> seen;
  for (const auto& r : next.normal_rules) seen.insert(normalize_rule_text(r.text));
  for (const auto& t : texts) {
    std::string cleaned = trim(t);
    if (cleaned.empty()) continue;
    if (!seen.insert(normalize_rule_text(cleaned)).second) continue;
    next.normal_rules.push_back({std::move(cleaned), source, next.version});
  }
  return next;
}

nlohmann::json to_json(const RuleBase& rb) {
  nlohmann::json normal = nlohmann::json::array();
  for (const auto& r : rb.normal_rules) normal.push_back(rule_to_json(r));
  nlohmann::json custom = nlohmann::json::array();
  for (const auto& r : rb.custom_anomaly_rules) custom.push_back(rule_to_json(r));
  return {
      {"schema", kRulebaseSchema},
      {"version", rb.version},
      {"params",
       {{"k", rb.params.k},
        {"tau1", rb.params.tau1},
        {"tau2", rb.params.tau2},
        {"epsilon_motion", rb.params.epsilon_motion},
        {"alpha_prompt", rb.params.alpha_prompt},
        {"segment_len", rb.params.segment_len}}},
      {"normal_rules", std::move(normal)},
      {"custom_anomaly_rules", std::move(custom)},
      {"perturbed_labels", rb.perturbed_labels},
  };
}

RuleBase rulebase_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string()) {
    throw Error(ErrorCode::SchemaVersionMismatch, "missing schema tag");
  }
  if (j["schema"].get<std::string>() != kRulebaseSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch,
                "expected " + std::string(kRulebaseSchema) + ", got " + j["schema"].get<std::string>());
  }
  try {
    RuleBase rb;
    rb.version = j.at("version").get<std::int64_t>();
    const auto& p = j.at("params");
    rb.params.k = p.at("k").get<int>();
    rb.params.tau1 = p.at("tau1").get<double>();
    rb.params.tau2 = p.at("tau2").get<double>();
    rb.params.epsilon_motion = p.at("epsilon_motion").get<double>();
    rb.params.alpha_prompt = p.at("alpha_prompt").get<double>();
    rb.params.segment_len = p.at("segment_len").get<int>();
    for (const auto& r : j.at("normal_rules")) rb.normal_rules.push_back(rule_from_json(r));
    for (const auto& r : j.at("custom_anomaly_rules")) rb.custom_anomaly_rules.push_back(rule_from_json(r));
    rb.perturbed_labels = j.at("perturbed_labels").get<std::vector<std::string>>();
    if (rb.version < 1) throw Error(ErrorCode::CorruptFile, "version < 1");
    rb.params.validate();
    return rb;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadParams) throw Error(ErrorCode::CorruptFile, e.what());
    throw;
  }
}

nlohmann::json to_json(const CandidatePool& pool) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : pool.candidates) {
    cands.push_back({{"id", c.id}, {"text", c.text}, {"polarity", c.polarity}, {"origin", to_string(c.origin)}});
  }
  return {{"rulebase_version", pool.rulebase_version}, {"candidates", std::move(cands)}};
}

void save_rulebase(const RuleBase& rulebase, const std::filesystem::path& path) {
  // Write-then-rename so concurrent readers never see a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << to_json(rulebase).dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename to " + path.string() + ": " + ec.message());
}

RuleBase load_rulebase(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  return rulebase_from_json(j);
}

std::vector<std::string> parse_label_list(std::string_view content) {
  std::vector<std::string> labels;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string label = trim(line);
    if (!label.empty()) labels.push_back(std::move(label));
  }
  return labels;
}

std::vector<std::string> load_label_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_label_list(buffer.str());
}

RuleStore::RuleStore(RuleBase initial) { reset(std::move(initial)); }

std::shared_ptr<const RuleBase> RuleStore::snapshot() const {
  std::lock_guard lock(read_mu_);
  return current_;
}

std::shared_ptr<const CandidatePool> RuleStore::pool() const {
  std::lock_guard lock(read_mu_);
  return pool_;
}

void RuleStore::reset(RuleBase rulebase) {
  auto rb = std::make_shared<const RuleBase>(std::move(rulebase));
  std::shared_ptr<const CandidatePool> pool;
  if (!rb->perturbed_labels.empty()) pool = std::make_shared<const CandidatePool>(build_candidate_pool(*rb));
  std::lock_guard lock(read_mu_);
  current_ = std::move(rb);
  pool_ = std::move(pool);
}

std::shared_ptr<const RuleBase> RuleStore::publish(RuleBase next, std::int64_t previous_version) {
  if (next.version != previous_version + 1) {
    throw Error(ErrorCode::VersionConflict, "mutation must advance version by exactly one");
  }
  auto rb = std::make_shared<const RuleBase>(std::move(next));
  std::shared_ptr<const CandidatePool> pool;
  if (!rb->perturbed_labels.empty()) pool = std::make_shared<const CandidatePool>(build_candidate_pool(*rb));
  std::lock_guard lock(read_mu_);
  current_ = rb;
  pool_ = std::move(pool);
  return rb;
}

}  // namespace cerberus

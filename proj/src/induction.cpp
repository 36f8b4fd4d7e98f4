#include "cerberus/induction.hpp"

#include <cctype>
#include <map>
#include <optional>
#include <set>

#include "cerberus/concurrency.hpp"
#include "cerberus/error.hpp"
#include "cerberus/prompts.hpp"
#include "cerberus/strings.hpp"

namespace cerberus {

namespace {

ImagePayload payload_for(const Frame& frame) {
  return ImagePayload{base_frame_id(frame.frame_id), encode_png(frame.pixels())};
}

// Strips "-", "*", "•", "N." and "N)" list markers.
std::string_view strip_bullet(std::string_view line) {
  if (line.starts_with("- ") || line.starts_with("* ") || line == "-" || line == "*") {
    return line.substr(1);
  }
  if (line.starts_with("\xE2\x80\xA2")) return line.substr(3);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return line.substr(i + 1);
  return line;
}

}  // namespace

std::vector<Segment> extract_segments(const std::vector<Frame>& frames, std::size_t segment_len,
                                      std::size_t stride) {
  if (segment_len < 1 || stride < 1) throw Error(ErrorCode::BadParams, "segment_len and stride must be >= 1");
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "no frames to segment");

  std::vector<std::string> scene_order;
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto [it, inserted] = by_scene.try_emplace(frames[i].scene);
    if (inserted) scene_order.push_back(frames[i].scene);
    it->second.push_back(i);
  }

  std::vector<Segment> out;
  for (const auto& scene : scene_order) {
    const auto& idx = by_scene[scene];
    for (std::size_t start = 0; start + segment_len <= idx.size(); start += stride) {
      Segment s;
      s.scene_id = scene;
      s.length = segment_len;
      for (std::size_t j = start; j < start + segment_len; ++j) {
        s.frame_indices.push_back(idx[j]);
        s.frame_ids.push_back(frames[idx[j]].frame_id);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

DescribeResult describe_segments(const std::vector<Segment>& segments, const std::vector<Frame>& frames,
                                 Captioner& captioner, std::size_t max_in_flight) {
  DescribeResult result;
  if (segments.empty()) return result;

  std::vector<std::optional<std::string>> texts(segments.size());
  std::vector<std::string> errors(segments.size());
  const bool multi = captioner.supports_multi_image();

  parallel_for(segments.size(), max_in_flight, [&](std::size_t i) {
    const auto& seg = segments[i];
    try {
      std::vector<ImagePayload> payloads;
      if (multi) {
        for (auto idx : seg.frame_indices) payloads.push_back(payload_for(frames.at(idx)));
      } else {
        payloads.push_back(payload_for(frames.at(seg.frame_indices[seg.frame_indices.size() / 2])));
      }
      texts[i] = caption_frame(captioner, payloads, kDescribePrompt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (texts[i]) {
      result.descriptions.push_back(Description{segments[i], *texts[i], captioner.model_id()});
    } else {
      result.failures.push_back(SegmentFailure{i, errors[i]});
    }
  }
  if (result.descriptions.empty()) {
    throw Error(ErrorCode::BackendUnavailable,
                "captioning failed for all " + std::to_string(segments.size()) + " segments: " + errors.front());
  }
  return result;
}

std::vector<std::string> parse_rule_lines(std::string_view response) {
  std::vector<std::string> rules;
  std::set<std::string> seen;
  std::size_t start = 0;
  while (start <= response.size()) {
    auto end = response.find('\n', start);
    if (end == std::string_view::npos) end = response.size();
    const std::string line = trim(response.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    std::string rule = trim(strip_bullet(line));
    while (!rule.empty() && rule.back() == '.') rule.pop_back();
    rule = trim(rule);
    if (rule.empty()) continue;
    if (seen.insert(normalize_rule_text(rule)).second) rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<Rule> generalize_rules(const std::vector<Description>& descriptions, RuleGeneralizer& rule_llm) {
  if (descriptions.empty()) throw Error(ErrorCode::EmptyInput, "no descriptions to generalize");
  std::vector<std::string> documents;
  documents.reserve(descriptions.size());
  for (const auto& d : descriptions) documents.push_back(d.text);

  const std::string response = complete_rules(rule_llm, kRulePrompt, documents);
  std::vector<Rule> rules;
  for (auto& text : parse_rule_lines(response)) rules.push_back(Rule{std::move(text), RuleSource::induced, 1});
  if (rules.empty()) throw Error(ErrorCode::UnparseableResponse, "rule generalizer returned no rules");
  return rules;
}

InductionReport induce_rulebase(const std::vector<Frame>& normal_frames, const BackendSet& backends,
                                const Params& params, std::vector<std::string> perturbed_labels,
                                const InductionOptions& options) {
  params.validate();
  if (!backends.captioner || !backends.rule_llm) throw Error(ErrorCode::BadParams, "captioner and rule_llm required");
  const auto segments =
      extract_segments(normal_frames, static_cast<std::size_t>(params.segment_len), options.stride);
  if (segments.empty()) {
    throw Error(ErrorCode::EmptyInput, "no complete segment of " + std::to_string(params.segment_len) + " frames");
  }
  auto described = describe_segments(segments, normal_frames, *backends.captioner, options.max_in_flight);

  InductionReport report;
  report.segments = segments.size();
  report.failures = std::move(described.failures);
  report.rulebase.version = 1;
  report.rulebase.params = params;
  report.rulebase.normal_rules = generalize_rules(described.descriptions, *backends.rule_llm);
  report.rulebase.perturbed_labels = std::move(perturbed_labels);
  return report;
}

}  // namespace cerberus

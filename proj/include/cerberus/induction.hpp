#pragma once

// Offline rule induction: normal frames are cut into segments, each segment is
// captioned, and the captions are generalized into normality rules.

#include <cstddef>
#include <string>
#include <vector>

#include "cerberus/backends.hpp"
#include "cerberus/dataset.hpp"
#include "cerberus/rulebase.hpp"

namespace cerberus {

inline constexpr std::size_t kDefaultSegmentLen = 8;
inline constexpr std::size_t kDefaultStride = 8;

struct Segment {
  std::string scene_id;
  // Indices into the frame list passed to extract_segments.
  std::vector<std::size_t> frame_indices;
  std::vector<std::string> frame_ids;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

struct Description {
  Segment segment;
  std::string text;
  std::string model_id;
};

struct SegmentFailure {
  std::size_t segment_index = 0;
  std::string message;
};

struct DescribeResult {
  std::vector<Description> descriptions;
  std::vector<SegmentFailure> failures;
};

// Windows of segment_len consecutive frames per scene (scenes in order of first
// appearance), advancing by stride. A trailing partial window is dropped.
// Throws EmptyInput for an empty frame list, BadParams for zero len/stride.
std::vector<Segment> extract_segments(const std::vector<Frame>& frames, std::size_t segment_len,
                                      std::size_t stride);

// Captions every segment with the describe prompt. Multi-image backends get
// all frames in order, others the middle frame. Individual failures are
// recorded; BackendUnavailable only if every segment failed.
DescribeResult describe_segments(const std::vector<Segment>& segments, const std::vector<Frame>& frames,
                                 Captioner& captioner, std::size_t max_in_flight = 4);

// One rule per bullet ("-", "*", "N." or "N)") or bare line, trailing periods
// removed; duplicates by normalized text are dropped.
std::vector<std::string> parse_rule_lines(std::string_view response);

// Throws EmptyInput without descriptions and UnparseableResponse when the
// response yields no rules.
std::vector<Rule> generalize_rules(const std::vector<Description>& descriptions, RuleGeneralizer& rule_llm);

struct InductionOptions {
  std::size_t stride = kDefaultStride;
  std::size_t max_in_flight = 4;
};

struct InductionReport {
  RuleBase rulebase;
  std::size_t segments = 0;
  std::vector<SegmentFailure> failures;
};

// extract -> describe -> generalize, yielding a version-1 rulebase with the
// given labels attached. Segment length comes from params.segment_len.
InductionReport induce_rulebase(const std::vector<Frame>& normal_frames, const BackendSet& backends,
                                const Params& params, std::vector<std::string> perturbed_labels,
                                const InductionOptions& options = {});

}  // namespace cerberus

#pragma once

#include <string_view>

namespace cerberus {

// Sent verbatim to the captioner, both offline (segment descriptions) and
// online (fine-stage captions).
inline constexpr std::string_view kDescribePrompt =
    "How many moving subjects (e.g., people, animals, vehicles) are in the scene, and what is each one "
    "doing in this specific scenario?";

// Sent verbatim to the rule LLM together with the collected descriptions.
inline constexpr std::string_view kRulePrompt =
    "Based on the following list of observed activities, summarize the general rules that define normal "
    "behavior in this scene. Focus on consistent actions, interactions, and locations.";

}  // namespace cerberus

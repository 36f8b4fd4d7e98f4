#pragma once

// Temporal-difference motion gating and red circle/square visual prompts.

#include <cstdint>
#include <optional>
#include <vector>

#include "cerberus/image.hpp"

namespace cerberus {

inline constexpr double kDefaultEpsilonMotion = 7e-4;
inline constexpr double kDefaultAlphaPrompt = 1.2e-3;
inline constexpr double kDefaultPixelThreshold = 10.0 / 255.0;
inline constexpr int kDefaultMinRegionArea = 25;
inline constexpr int kDefaultDilationRadius = 2;

struct MotionField {
  int width = 0;
  int height = 0;
  std::vector<double> diffs;  // |F_t - F_{t-1}| per pixel, row-major
  double proportion = 0.0;    // sum(diffs) / (W*H)
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

// Inclusive pixel coordinates.
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool operator==(const BoundingBox&) const = default;
};

struct MotionRegion {
  BoundingBox bbox;
  double mass = 0.0;  // sum of diffs inside the region / (W*H)
  std::size_t pixel_count = 0;
};

enum class PromptKind { none, circle, square };

std::string_view to_string(PromptKind kind);

struct VisualPrompt {
  PromptKind kind = PromptKind::circle;
  // circle geometry
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
  // square geometry (already expanded and clipped)
  BoundingBox box;
  int stroke_width = 2;

  // True when pixel (x, y) lies on this prompt's stroke.
  bool on_stroke(int x, int y) const;
};

struct PromptedFrame {
  ColorImage rendered;
  std::vector<VisualPrompt> prompts;
  double proportion = 0.0;
};

struct GateResult {
  bool active = false;
  MotionField field;
};

// Throws DimensionMismatch when the frames differ in size.
double motion_proportion(const GrayFrame& prev, const GrayFrame& cur);
MotionField motion_field(const GrayFrame& prev, const GrayFrame& cur);

// Static iff p < epsilon_motion; p == epsilon passes as active.
GateResult gate(const GrayFrame& prev, const GrayFrame& cur, double epsilon_motion = kDefaultEpsilonMotion);

BinaryMask motion_mask(const MotionField& field, double pixel_threshold = kDefaultPixelThreshold);

// Dilates the mask (square kernel of the given radius), labels 4-connected
// components, drops those below min_area and sorts by descending mass, then
// by (y0, x0).
std::vector<MotionRegion> extract_regions(const BinaryMask& mask, const MotionField& field,
                                          int min_area = kDefaultMinRegionArea,
                                          int dilation_radius = kDefaultDilationRadius);

// none if mass <= eps, circle if eps < mass < alpha, square if mass >= alpha.
// Throws BadThresholds when eps >= alpha.
PromptKind select_prompt(const MotionRegion& region, double epsilon_motion, double alpha_prompt);

int stroke_width_for(int width, int height);
VisualPrompt make_prompt(const MotionRegion& region, PromptKind kind, int frame_width, int frame_height);

// Draws pure red strokes; pixels off every stroke are left untouched.
PromptedFrame render_prompts(const ColorImage& frame, const std::vector<MotionRegion>& regions,
                             const std::vector<PromptKind>& kinds, double proportion = 0.0);

struct MotionSettings {
  double epsilon_motion = kDefaultEpsilonMotion;
  double alpha_prompt = kDefaultAlphaPrompt;
  double pixel_threshold = kDefaultPixelThreshold;
  int min_area = kDefaultMinRegionArea;
  int dilation_radius = kDefaultDilationRadius;
};

struct FrameMotion {
  bool active = false;
  double proportion = 0.0;
  std::vector<MotionRegion> regions;
  PromptedFrame prompted;
};

// Per-stream state: remembers the previous frame. The first frame of a stream
// has no predecessor and is reported static with p = 0.
class MotionPrompter {
 public:
  explicit MotionPrompter(MotionSettings settings);

  FrameMotion analyze(const ColorImage& frame);
  void reset() { previous_.reset(); }

 private:
  MotionSettings settings_;
  std::optional<GrayFrame> previous_;
};

}  // namespace cerberus

#include "cerberus/motion.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {

void require_same_dims(const GrayFrame& a, const GrayFrame& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::DimensionMismatch, "frames differ in size");
  }
}

std::vector<std::uint8_t> dilate(const BinaryMask& mask, int radius) {
  const int w = mask.width;
  const int h = mask.height;
  if (radius <= 0) return mask.bits;
  // Separable max filter: horizontal then vertical pass.
  std::vector<std::uint8_t> rows(mask.bits.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.bits[static_cast<std::size_t>(y) * w + x]) continue;
      const int lo = std::max(0, x - radius);
      const int hi = std::min(w - 1, x + radius);
      for (int xx = lo; xx <= hi; ++xx) rows[static_cast<std::size_t>(y) * w + xx] = 1;
    }
  }
  std::vector<std::uint8_t> out(mask.bits.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!rows[static_cast<std::size_t>(y) * w + x]) continue;
      const int lo = std::max(0, y - radius);
      const int hi = std::min(h - 1, y + radius);
      for (int yy = lo; yy <= hi; ++yy) out[static_cast<std::size_t>(yy) * w + x] = 1;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::none: return "none";
    case PromptKind::circle: return "circle";
    case PromptKind::square: return "square";
  }
  return "none";
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double motion_proportion(const GrayFrame& prev, const GrayFrame& cur) {
  require_same_dims(prev, cur);
  const auto a = prev.values();
  const auto b = cur.values();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(b[i] - a[i]);
  return total / static_cast<double>(a.size());
}

MotionField motion_field(const GrayFrame& prev, const GrayFrame& cur) {
  require_same_dims(prev, cur);
  MotionField field;
  field.width = cur.width();
  field.height = cur.height();
  field.diffs.resize(cur.size());
  const auto a = prev.values();
  const auto b = cur.values();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    field.diffs[i] = std::abs(b[i] - a[i]);
    total += field.diffs[i];
  }
  field.proportion = total / static_cast<double>(a.size());
  return field;
}

GateResult gate(const GrayFrame& prev, const GrayFrame& cur, double epsilon_motion) {
  GateResult result;
  result.field = motion_field(prev, cur);
  result.active = !(result.field.proportion < epsilon_motion);
  return result;
}

BinaryMask motion_mask(const MotionField& field, double pixel_threshold) {
  BinaryMask mask;
  mask.width = field.width;
  mask.height = field.height;
  mask.bits.resize(field.diffs.size());
  for (std::size_t i = 0; i < field.diffs.size(); ++i) {
    mask.bits[i] = field.diffs[i] >= pixel_threshold ? 1 : 0;
  }
  return mask;
}

std::vector<MotionRegion> extract_regions(const BinaryMask& mask, const MotionField& field, int min_area,
                                          int dilation_radius) {
  if (mask.width != field.width || mask.height != field.height) {
    throw Error(ErrorCode::DimensionMismatch, "mask and field differ in size");
  }
  const int w = mask.width;
  const int h = mask.height;
  const auto grown = dilate(mask, dilation_radius);
  const double total_pixels = static_cast<double>(w) * h;

  std::vector<std::uint8_t> visited(grown.size(), 0);
  std::vector<MotionRegion> regions;
  std::deque<std::pair<int, int>> frontier;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const auto seed = static_cast<std::size_t>(sy) * w + sx;
      if (!grown[seed] || visited[seed]) continue;
      MotionRegion region;
      region.bbox = {sx, sy, sx, sy};
      double mass = 0.0;
      visited[seed] = 1;
      frontier.emplace_back(sx, sy);
      while (!frontier.empty()) {
        auto [x, y] = frontier.front();
        frontier.pop_front();
        const auto idx = static_cast<std::size_t>(y) * w + x;
        ++region.pixel_count;
        mass += field.diffs[idx];
        region.bbox.x0 = std::min(region.bbox.x0, x);
        region.bbox.y0 = std::min(region.bbox.y0, y);
        region.bbox.x1 = std::max(region.bbox.x1, x);
        region.bbox.y1 = std::max(region.bbox.y1, y);
        constexpr int dx[] = {1, -1, 0, 0};
        constexpr int dy[] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          const int nx = x + dx[d];
          const int ny = y + dy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const auto n = static_cast<std::size_t>(ny) * w + nx;
          if (grown[n] && !visited[n]) {
            visited[n] = 1;
            frontier.emplace_back(nx, ny);
          }
        }
      }
      if (region.pixel_count < static_cast<std::size_t>(std::max(min_area, 0))) continue;
      region.mass = mass / total_pixels;
      regions.push_back(region);
    }
  }
  std::stable_sort(regions.begin(), regions.end(), [](const MotionRegion& a, const MotionRegion& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    if (a.bbox.y0 != b.bbox.y0) return a.bbox.y0 < b.bbox.y0;
    return a.bbox.x0 < b.bbox.x0;
  });
  return regions;
}

PromptKind select_prompt(const MotionRegion& region, double epsilon_motion, double alpha_prompt) {
  if (!(epsilon_motion < alpha_prompt)) {
    throw Error(ErrorCode::BadThresholds, "epsilon_motion must be below alpha_prompt");
  }
  if (region.mass <= epsilon_motion) return PromptKind::none;
  if (region.mass < alpha_prompt) return PromptKind::circle;
  return PromptKind::square;
}

int stroke_width_for(int width, int height) {
  return std::max(2, static_cast<int>(std::lround(0.004 * std::min(width, height))));
}

VisualPrompt make_prompt(const MotionRegion& region, PromptKind kind, int frame_width, int frame_height) {
  VisualPrompt prompt;
  prompt.kind = kind;
  prompt.stroke_width = stroke_width_for(frame_width, frame_height);
  const auto& b = region.bbox;
  if (kind == PromptKind::circle) {
    prompt.center_x = 0.5 * (b.x0 + b.x1);
    prompt.center_y = 0.5 * (b.y0 + b.y1);
    const double half_diagonal = 0.5 * std::hypot(static_cast<double>(b.width()), static_cast<double>(b.height()));
    prompt.radius = 1.2 * half_diagonal;
  } else {
    const int ex = static_cast<int>(std::lround(0.1 * b.width()));
    const int ey = static_cast<int>(std::lround(0.1 * b.height()));
    prompt.box = {std::max(0, b.x0 - ex), std::max(0, b.y0 - ey), std::min(frame_width - 1, b.x1 + ex),
                  std::min(frame_height - 1, b.y1 + ey)};
  }
  return prompt;
}

bool VisualPrompt::on_stroke(int x, int y) const {
  if (kind == PromptKind::circle) {
    const double d = std::hypot(x - center_x, y - center_y);
    return std::abs(d - radius) <= 0.5 * stroke_width;
  }
  if (kind == PromptKind::square) {
    if (x < box.x0 || x > box.x1 || y < box.y0 || y > box.y1) return false;
    return x < box.x0 + stroke_width || x > box.x1 - stroke_width || y < box.y0 + stroke_width ||
           y > box.y1 - stroke_width;
  }
  return false;
}

PromptedFrame render_prompts(const ColorImage& frame, const std::vector<MotionRegion>& regions,
                             const std::vector<PromptKind>& kinds, double proportion) {
  if (regions.size() != kinds.size()) {
    throw Error(ErrorCode::InvalidArgument, "regions and kinds differ in length");
  }
  PromptedFrame out;
  out.rendered = frame;
  out.proportion = proportion;
  const int w = frame.width();
  const int h = frame.height();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (kinds[i] == PromptKind::none) continue;
    const auto& b = regions[i].bbox;
    if (b.x0 < 0 || b.y0 < 0 || b.x1 >= w || b.y1 >= h || b.x0 > b.x1 || b.y0 > b.y1) {
      throw Error(ErrorCode::InvalidArgument, "region outside frame bounds");
    }
    VisualPrompt prompt = make_prompt(regions[i], kinds[i], w, h);
    int x_lo = 0, x_hi = w - 1, y_lo = 0, y_hi = h - 1;
    if (prompt.kind == PromptKind::circle) {
      const double reach = prompt.radius + prompt.stroke_width;
      x_lo = std::max(0, static_cast<int>(std::floor(prompt.center_x - reach)));
      x_hi = std::min(w - 1, static_cast<int>(std::ceil(prompt.center_x + reach)));
      y_lo = std::max(0, static_cast<int>(std::floor(prompt.center_y - reach)));
      y_hi = std::min(h - 1, static_cast<int>(std::ceil(prompt.center_y + reach)));
    } else {
      x_lo = prompt.box.x0;
      x_hi = prompt.box.x1;
      y_lo = prompt.box.y0;
      y_hi = prompt.box.y1;
    }
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        if (prompt.on_stroke(x, y)) out.rendered.set(x, y, 255, 0, 0);
      }
    }
    out.prompts.push_back(prompt);
  }
  return out;
}

MotionPrompter::MotionPrompter(MotionSettings settings) : settings_(settings) {
  if (!(settings_.epsilon_motion >= 0.0 && settings_.epsilon_motion < settings_.alpha_prompt)) {
    throw Error(ErrorCode::BadThresholds, "require 0 <= epsilon_motion < alpha_prompt");
  }
}

FrameMotion MotionPrompter::analyze(const ColorImage& frame) {
  GrayFrame gray = to_gray(frame);
  FrameMotion result;
  if (!previous_ || previous_->width() != gray.width() || previous_->height() != gray.height()) {
    // No usable predecessor: warm up on this frame.
    previous_ = std::move(gray);
    result.prompted.rendered = frame;
    return result;
  }
  GateResult g = gate(*previous_, gray, settings_.epsilon_motion);
  previous_ = std::move(gray);
  result.active = g.active;
  result.proportion = g.field.proportion;
  if (!g.active) {
    result.prompted.rendered = frame;
    result.prompted.proportion = result.proportion;
    return result;
  }
  const BinaryMask mask = motion_mask(g.field, settings_.pixel_threshold);
  result.regions = extract_regions(mask, g.field, settings_.min_area, settings_.dilation_radius);
  std::vector<PromptKind> kinds;
  kinds.reserve(result.regions.size());
  for (const auto& r : result.regions) {
    kinds.push_back(select_prompt(r, settings_.epsilon_motion, settings_.alpha_prompt));
  }
  result.prompted = render_prompts(frame, result.regions, kinds, result.proportion);
  return result;
}

}  // namespace cerberus

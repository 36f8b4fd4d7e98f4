#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cerberus {

// Interleaved 8-bit RGB, row-major.
class ColorImage {
 public:
  ColorImage() = default;
  ColorImage(int width, int height);
  ColorImage(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return rgb_.empty(); }

  std::span<const std::uint8_t> bytes() const { return rgb_; }
  std::span<std::uint8_t> bytes() { return rgb_; }

  const std::uint8_t* pixel(int x, int y) const { return &rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3]; }
  std::uint8_t* pixel(int x, int y) { return &rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3]; }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  bool operator==(const ColorImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

// Single-channel intensities normalized to [0,1].
class GrayFrame {
 public:
  GrayFrame() = default;
  GrayFrame(int width, int height, double fill = 0.0);
  // Throws InvalidArgument if any value is outside [0,1] or the size is wrong.
  GrayFrame(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }

  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int x, int y, double v);

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

// Luma 0.299/0.587/0.114, scaled to [0,1].
GrayFrame to_gray(const ColorImage& image);

ColorImage load_image(const std::filesystem::path& path);
void save_png(const ColorImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const ColorImage& image);

}  // namespace cerberus

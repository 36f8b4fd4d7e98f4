#include "cerberus/image.hpp"

#include <algorithm>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {

cv::Mat to_bgr_mat(const ColorImage& image) {
  cv::Mat rgb(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.bytes().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

ColorImage::ColorImage(int width, int height)
    : width_(width), height_(height), rgb_(static_cast<std::size_t>(width) * height * 3, 0) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
}

ColorImage::ColorImage(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
  if (rgb_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw Error(ErrorCode::InvalidArgument, "rgb buffer size does not match dimensions");
  }
}

void ColorImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  auto* p = pixel(x, y);
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

GrayFrame::GrayFrame(int width, int height, double fill)
    : width_(width), height_(height), values_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "frame dimensions must be >= 1");
  if (!(fill >= 0.0 && fill <= 1.0)) throw Error(ErrorCode::InvalidArgument, "intensity outside [0,1]");
}

GrayFrame::GrayFrame(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "frame dimensions must be >= 1");
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::InvalidArgument, "intensity buffer size does not match dimensions");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; })) {
    throw Error(ErrorCode::InvalidArgument, "intensity outside [0,1]");
  }
}

void GrayFrame::set(int x, int y, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, "intensity outside [0,1]");
  values_[static_cast<std::size_t>(y) * width_ + x] = v;
}

GrayFrame to_gray(const ColorImage& image) {
  std::vector<double> values(static_cast<std::size_t>(image.width()) * image.height());
  const auto bytes = image.bytes();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double luma = 0.299 * bytes[3 * i] + 0.587 * bytes[3 * i + 1] + 0.114 * bytes[3 * i + 2];
    values[i] = std::clamp(luma / 255.0, 0.0, 1.0);
  }
  return GrayFrame(image.width(), image.height(), std::move(values));
}

ColorImage load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::IoError, "cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  std::vector<std::uint8_t> data(rgb.data, rgb.data + rgb.total() * 3);
  return ColorImage(rgb.cols, rgb.rows, std::move(data));
}

void save_png(const ColorImage& image, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), to_bgr_mat(image))) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
}

std::vector<std::uint8_t> encode_png(const ColorImage& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr_mat(image), out)) {
    throw Error(ErrorCode::IoError, "png encoding failed");
  }
  return out;
}

}  // namespace cerberus

#include "plume/viz.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace plume::viz {

void Stretch::validate() const {
  if (!(low >= 0 && high <= 100 && low < high)) {
    throw Error(ErrorCode::UsageError, "stretch percentiles must satisfy 0 <= low < high <= 100");
  }
}

RenderMode parse_render_mode(std::string_view text) {
  if (text == "true_color") return RenderMode::TrueColor;
  if (text == "false_color") return RenderMode::FalseColor;
  if (text == "activation_overlay") return RenderMode::ActivationOverlay;
  if (text == "mask_overlay") return RenderMode::MaskOverlay;
  throw Error(ErrorCode::UsageError, "unknown render mode '" + std::string(text) + "'");
}

double percentile(std::vector<float> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyEvaluation, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, values.size() - 1);
  const double t = pos - static_cast<double>(i);
  return (1 - t) * values[i] + t * values[j];
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void require_same(const RgbImage& image, const Tensor<std::uint8_t>& mask) {
  if (mask.rank() != 2 || mask.dim(0) != image.height || mask.dim(1) != image.width) {
    throw Error(ErrorCode::ShapeMismatch, "mask " + shape_string(mask.shape()) + " vs image " +
                                              std::to_string(image.height) + "x" + std::to_string(image.width));
  }
}

std::array<double, 3> ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {std::min(1.0, 3 * t), std::clamp(3 * t - 1, 0.0, 1.0), std::clamp(3 * t - 2, 0.0, 1.0)};
}

}  // namespace

RgbImage compose(const Tensor<float>& bands, std::array<int, 3> rgb_bands, const Stretch& stretch) {
  stretch.validate();
  if (bands.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "expected C x H x W, got " + shape_string(bands.shape()));
  const int H = bands.dim(1), W = bands.dim(2);
  const std::size_t n = static_cast<std::size_t>(H) * W;
  RgbImage out(H, W);
  for (int ch = 0; ch < 3; ++ch) {
    const int b = rgb_bands[static_cast<std::size_t>(ch)];
    if (b < 0 || b >= bands.dim(0)) throw Error(ErrorCode::BandMissing, "band index " + std::to_string(b));
    const float* plane = bands.data() + static_cast<std::size_t>(b) * n;
    const std::vector<float> values(plane, plane + n);
    const double lo = percentile(values, stretch.low), hi = percentile(values, stretch.high);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = hi > lo ? (plane[i] - lo) / (hi - lo) : plane[i];
      out.pixels[i * 3 + static_cast<std::size_t>(ch)] = to_byte(v);
    }
  }
  return out;
}

RgbImage true_color(const raster::Scene& scene, const Stretch& stretch) {
  return compose(scene.bands, {raster::band_index("B04"), raster::band_index("B03"), raster::band_index("B02")},
                 stretch);
}

RgbImage false_color(const raster::Scene& scene, const Stretch& stretch) {
  return compose(scene.bands, {raster::band_index("B01"), raster::band_index("B09"), raster::band_index("B11")},
                 stretch);
}

RgbImage overlay_masks(const RgbImage& image, const std::optional<Tensor<std::uint8_t>>& truth,
                       const std::optional<Tensor<std::uint8_t>>& predicted) {
  if (truth) require_same(image, *truth);
  if (predicted) require_same(image, *predicted);
  RgbImage out = image;
  const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t i = 0; i < n; ++i) {
    const bool g = truth && (*truth)[i] != 0;
    const bool p = predicted && (*predicted)[i] != 0;
    if (!g && !p) continue;
    const double tint[3] = {g ? 255.0 : 0.0, p ? 255.0 : 0.0, 0.0};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      out.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(0.5 * image.pixels[i * 3 + ch] + 0.5 * tint[ch]));
    }
  }
  return out;
}

RgbImage heatmap(const Tensor<float>& map, std::optional<std::pair<float, float>> range) {
  if (map.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "heatmap expects an H x W map");
  auto [lo, hi] = range.value_or(std::pair{*std::min_element(map.vec().begin(), map.vec().end()),
                                           *std::max_element(map.vec().begin(), map.vec().end())});
  RgbImage out(map.dim(0), map.dim(1));
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double t = hi > lo ? (map[i] - lo) / (hi - lo) : 0.0;
    const auto rgb = ramp(t);
    for (std::size_t ch = 0; ch < 3; ++ch) out.pixels[i * 3 + ch] = to_byte(rgb[ch]);
  }
  return out;
}

RgbImage activation_overlay(const RgbImage& image, const Tensor<float>& map, double alpha,
                            std::optional<std::pair<float, float>> range) {
  const RgbImage heat = heatmap(map, range);
  if (heat.height != image.height || heat.width != image.width) {
    throw Error(ErrorCode::ShapeMismatch, "activation map does not match the image");
  }
  RgbImage out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround((1 - alpha) * image.pixels[i] + alpha * heat.pixels[i]));
  }
  return out;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + png.message);
  }
}

RgbImage read_png(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::IoError, path.string() + ": no such file");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) throw Error(ErrorCode::FormatError, path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(png.height), static_cast<int>(png.width));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(ErrorCode::FormatError, path.string() + ": " + png.message);
  }
  return out;
}

}  // namespace plume::viz

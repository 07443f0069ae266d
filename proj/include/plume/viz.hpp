#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "plume/raster_io.hpp"
#include "plume/tensor.hpp"

namespace plume::viz {

/// 8-bit RGB, row-major, interleaved.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  std::uint8_t at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  bool operator==(const RgbImage&) const = default;
};

enum class RenderMode { TrueColor, FalseColor, ActivationOverlay, MaskOverlay };

/// Percentile pair for the per-channel contrast stretch.
struct Stretch {
  double low = 2.0;
  double high = 98.0;
  void validate() const;
};

struct RenderSpec {
  RenderMode mode = RenderMode::TrueColor;
  Stretch stretch;
};

RenderMode parse_render_mode(std::string_view text);

/// Linear-interpolated percentile (p in [0, 100]) of a sample.
double percentile(std::vector<float> values, double p);

/// Maps three bands of a C x H x W stack to R, G, B. Each channel is stretched
/// from its low to high percentile onto 0..255; a channel whose percentiles
/// coincide is mapped as reflectance * 255.
RgbImage compose(const Tensor<float>& bands, std::array<int, 3> rgb_bands, const Stretch& stretch = {});

RgbImage true_color(const raster::Scene& scene, const Stretch& stretch = {});   // B04, B03, B02
RgbImage false_color(const raster::Scene& scene, const Stretch& stretch = {});  // B01, B09, B11

/// Blends red over ground-truth pixels and green over predicted pixels at 0.5;
/// pixels outside both masks are untouched.
RgbImage overlay_masks(const RgbImage& image, const std::optional<Tensor<std::uint8_t>>& truth,
                       const std::optional<Tensor<std::uint8_t>>& predicted);

/// Black-red-yellow-white ramp over [lo, hi]; the range defaults to the map's
/// own min/max so several maps can share a scale when one is given.
RgbImage heatmap(const Tensor<float>& map, std::optional<std::pair<float, float>> range = std::nullopt);
/// Heatmap blended over an image at the given weight.
RgbImage activation_overlay(const RgbImage& image, const Tensor<float>& map, double alpha = 0.5,
                            std::optional<std::pair<float, float>> range = std::nullopt);

void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace plume::viz

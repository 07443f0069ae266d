#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plume/error.hpp"
#include "plume/tensor.hpp"

namespace plume::raster {

inline constexpr int kBandCount = 12;
inline constexpr int kSceneEdge = 120;          // pixels after ingestion
inline constexpr double kTargetPixelSize = 10;  // meters per pixel after ingestion
inline constexpr double kReflectanceScale = 10000.0;

struct BandSpec {
  std::string name;
  int native_resolution = 10;  // meters per pixel
  int index = 0;               // position in the canonical stack
};

/// B01..B12 in stack order, L2A (no B10).
const std::vector<BandSpec>& canonical_bands();
/// Position of a band name in the canonical stack; throws BandMissing for unknown names.
int band_index(std::string_view name);

using Timestamp = std::chrono::sys_seconds;

/// Accepts "YYYY-MM-DDTHH:MM:SSZ" (the trailing Z and the time part are optional).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

struct GeoOrigin {
  int epsg = 0;
  double easting = 0.0;   // top-left corner
  double northing = 0.0;

  bool operator==(const GeoOrigin&) const = default;
};

struct Scene {
  std::string site_id;
  Timestamp timestamp{};
  Tensor<float> bands;  // 12 x H x W, canonical order, reflectance in [0, 1]
  double pixel_size = kTargetPixelSize;
  GeoOrigin origin;

  int height() const { return bands.dim(1); }
  int width() const { return bands.dim(2); }
  std::span<const float> plane(int band) const {
    const std::size_t n = static_cast<std::size_t>(height()) * width();
    return bands.span().subspan(static_cast<std::size_t>(band) * n, n);
  }
};

struct MaskRaster {
  std::string site_id;
  Timestamp timestamp{};
  Tensor<std::uint8_t> values;  // H x W, {0, 1}
  GeoOrigin origin;

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  std::size_t smoke_pixels() const;
};

/// Throws FormatError if the scene violates shape, band-count or value-range invariants.
void validate_scene(const Scene& scene, int expected_edge = kSceneEdge);

template <typename T>
Tensor<T> resample_nearest(const Tensor<T>& plane, int factor) {
  if (factor <= 0) throw Error(ErrorCode::InvalidFactor, "factor " + std::to_string(factor));
  if (plane.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "resample expects an h x w plane");
  const int h = plane.dim(0), w = plane.dim(1);
  Tensor<T> out({h * factor, w * factor});
  for (int r = 0; r < h * factor; ++r) {
    const T* src = plane.data() + static_cast<std::size_t>(r / factor) * w;
    T* dst = out.data() + static_cast<std::size_t>(r) * w * factor;
    for (int c = 0; c < w * factor; ++c) dst[c] = src[c / factor];
  }
  return out;
}

inline float normalize_reflectance(std::uint32_t raw) {
  const double v = static_cast<double>(raw) / kReflectanceScale;
  return static_cast<float>(v > 1.0 ? 1.0 : v);
}
Tensor<float> normalize_reflectance(const Tensor<std::uint16_t>& raw);

Scene crop_center(const Scene& scene, int size);

/// Raw acquisition: a multi-page TIFF with one page per band (page name = band
/// name, unsigned 16-bit at native resolution), or a directory holding one
/// single-band TIFF per band named <band>.tif. A canonical scene file (see
/// write_scene_file) is also accepted and read as is.
Scene load_scene(const std::filesystem::path& path, std::span<const BandSpec> band_specs = canonical_bands());

/// One band of a raw acquisition, as written by write_raw_container.
struct RawBand {
  std::string name;
  Tensor<std::uint16_t> values;  // h x w at native resolution
  int resolution = 10;
};

struct RawScene {
  std::string site_id;
  Timestamp timestamp{};
  GeoOrigin origin;
  std::vector<RawBand> bands;
};

void write_raw_container(const RawScene& raw, const std::filesystem::path& path);
void write_raw_directory(const RawScene& raw, const std::filesystem::path& dir);

/// Canonical ingested scene file: one 120x120 TIFF, 12 float32 samples per pixel.
void write_scene_file(const Scene& scene, const std::filesystem::path& path);
Scene read_scene_file(const std::filesystem::path& path);

void write_mask(const MaskRaster& mask, const std::filesystem::path& path);
MaskRaster read_mask(const std::filesystem::path& path);

}  // namespace plume::raster

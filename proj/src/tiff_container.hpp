#pragma once

// Thin libtiff wrapper shared by the raster and mask readers/writers. Pages
// are decoded to contiguous (chunky) row-major byte buffers in host order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace plume::raster::detail {

enum class SampleKind : std::uint16_t { Unsigned = 1, Signed = 2, Float = 3 };

struct GeoTags {
  std::optional<double> pixel_scale;  // ground size of one pixel, x and y assumed equal
  std::optional<double> easting;      // model coordinates of the top-left corner
  std::optional<double> northing;
  int epsg = 0;
};

struct Page {
  int width = 0;
  int height = 0;
  int samples = 1;
  int bits = 8;
  SampleKind kind = SampleKind::Unsigned;
  std::string page_name;
  std::string description;
  GeoTags geo;
  std::vector<std::uint8_t> bytes;

  std::size_t sample_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(samples);
  }

  template <typename T>
  std::span<const T> as() const {
    return {reinterpret_cast<const T*>(bytes.data()), bytes.size() / sizeof(T)};
  }
  template <typename T>
  void assign(std::span<const T> values) {
    bytes.resize(values.size() * sizeof(T));
    std::memcpy(bytes.data(), values.data(), bytes.size());
  }
};

/// Reads every directory in the file. Throws FormatError on anything libtiff rejects.
std::vector<Page> read_tiff(const std::filesystem::path& path);

/// Writes the pages as consecutive uncompressed directories. Output depends only
/// on the page contents, so identical inputs give identical bytes.
void write_tiff(const std::filesystem::path& path, std::span<const Page> pages);

}  // namespace plume::raster::detail

#include "plume/raster_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include "json.hpp"
#include "tiff_container.hpp"

namespace plume::raster {
namespace {

using detail::Page;
using detail::SampleKind;
using nlohmann::json;

std::string describe(const std::string& site_id, Timestamp ts, const std::vector<std::string>& bands) {
  json meta = {{"site_id", site_id}, {"timestamp", format_timestamp(ts)}};
  if (!bands.empty()) meta["bands"] = bands;
  return meta.dump();
}

struct Description {
  std::string site_id;
  std::optional<Timestamp> timestamp;
  std::vector<std::string> bands;
  std::string band;
};

Description parse_description(const std::string& text) {
  Description d;
  if (text.empty() || text.front() != '{') return d;
  const json meta = json::parse(text, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) return d;
  if (auto it = meta.find("site_id"); it != meta.end() && it->is_string()) d.site_id = *it;
  if (auto it = meta.find("timestamp"); it != meta.end() && it->is_string()) {
    d.timestamp = parse_timestamp(it->get<std::string>());
  }
  if (auto it = meta.find("bands"); it != meta.end() && it->is_array()) d.bands = it->get<std::vector<std::string>>();
  if (auto it = meta.find("band"); it != meta.end() && it->is_string()) d.band = *it;
  return d;
}

detail::GeoTags to_tags(const GeoOrigin& origin, double pixel_size) {
  detail::GeoTags tags;
  tags.pixel_scale = pixel_size;
  tags.easting = origin.easting;
  tags.northing = origin.northing;
  tags.epsg = origin.epsg;
  return tags;
}

GeoOrigin from_tags(const detail::GeoTags& tags) {
  GeoOrigin origin;
  origin.epsg = tags.epsg;
  origin.easting = tags.easting.value_or(0.0);
  origin.northing = tags.northing.value_or(0.0);
  return origin;
}

Tensor<std::uint16_t> band_values(const Page& page, const std::filesystem::path& path, const std::string& band) {
  if (page.samples != 1 || page.bits != 16 || page.kind != SampleKind::Unsigned) {
    throw Error(ErrorCode::FormatError,
                path.string() + ": band " + band + " is not single-sample unsigned 16-bit");
  }
  auto values = page.as<std::uint16_t>();
  return Tensor<std::uint16_t>({page.height, page.width}, std::vector<std::uint16_t>(values.begin(), values.end()));
}

int resample_factor(const Page& page, const BandSpec& spec, const std::filesystem::path& path) {
  double resolution = spec.native_resolution;
  if (page.geo.pixel_scale) resolution = *page.geo.pixel_scale;
  const double ratio = resolution / kTargetPixelSize;
  const int factor = static_cast<int>(std::lround(ratio));
  if (std::abs(ratio - factor) > 1e-6 || (factor != 1 && factor != 2 && factor != 3 && factor != 6)) {
    throw Error(ErrorCode::FormatError,
                path.string() + ": band " + spec.name + " has unsupported pixel size " + std::to_string(resolution));
  }
  return factor;
}

bool is_binary(std::span<const std::uint8_t> values) {
  return std::all_of(values.begin(), values.end(), [](std::uint8_t v) { return v <= 1; });
}

Page raw_band_page(const RawScene& raw, const RawBand& band) {
  Page page;
  page.height = band.values.dim(0);
  page.width = band.values.dim(1);
  page.bits = 16;
  page.kind = SampleKind::Unsigned;
  page.page_name = band.name;
  json meta = {{"site_id", raw.site_id}, {"timestamp", format_timestamp(raw.timestamp)}, {"band", band.name}};
  page.description = meta.dump();
  page.geo = to_tags(raw.origin, band.resolution);
  page.assign<std::uint16_t>(band.values.span());
  return page;
}

}  // namespace

const std::vector<BandSpec>& canonical_bands() {
  static const std::vector<BandSpec> bands = {
      {"B01", 60, 0}, {"B02", 10, 1}, {"B03", 10, 2}, {"B04", 10, 3}, {"B05", 20, 4},  {"B06", 20, 5},
      {"B07", 20, 6}, {"B08", 10, 7}, {"B8A", 20, 8}, {"B09", 60, 9}, {"B11", 20, 10}, {"B12", 20, 11},
  };
  return bands;
}

int band_index(std::string_view name) {
  for (const BandSpec& spec : canonical_bands()) {
    if (spec.name == name) return spec.index;
  }
  throw Error(ErrorCode::BandMissing, std::string(name));
}

Timestamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string str(text);
  const int n = std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d", &y, &mo, &d, &h, &mi, &s);
  if (n != 3 && n != 6) throw Error(ErrorCode::ManifestError, "bad timestamp '" + str + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw Error(ErrorCode::ManifestError, "bad timestamp '" + str + "'");
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{s};
}

std::string format_timestamp(Timestamp ts) {
  const auto day = std::chrono::floor<std::chrono::days>(ts);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{ts - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::size_t MaskRaster::smoke_pixels() const {
  return static_cast<std::size_t>(std::count(values.vec().begin(), values.vec().end(), std::uint8_t{1}));
}

void validate_scene(const Scene& scene, int expected_edge) {
  const auto& b = scene.bands;
  if (b.rank() != 3 || b.dim(0) != kBandCount) {
    throw Error(ErrorCode::FormatError, "scene must be 12 x H x W, got " + shape_string(b.shape()));
  }
  if (expected_edge > 0 && (b.dim(1) != expected_edge || b.dim(2) != expected_edge)) {
    throw Error(ErrorCode::FormatError, "scene must be " + std::to_string(expected_edge) + " px square");
  }
  for (float v : b.vec()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw Error(ErrorCode::FormatError, "reflectance outside [0, 1]");
  }
}

Tensor<float> normalize_reflectance(const Tensor<std::uint16_t>& raw) {
  Tensor<float> out(raw.shape());
  std::transform(raw.vec().begin(), raw.vec().end(), out.vec().begin(),
                 [](std::uint16_t v) { return normalize_reflectance(std::uint32_t{v}); });
  return out;
}

Scene crop_center(const Scene& scene, int size) {
  const int h = scene.height(), w = scene.width();
  if (size <= 0 || size > h || size > w) {
    throw Error(ErrorCode::CropTooLarge,
                std::to_string(size) + " on " + std::to_string(h) + "x" + std::to_string(w));
  }
  const int top = (h - size) / 2, left = (w - size) / 2;
  Scene out = scene;
  out.bands = Tensor<float>({scene.bands.dim(0), size, size});
  for (int c = 0; c < scene.bands.dim(0); ++c) {
    for (int r = 0; r < size; ++r) {
      const float* src = &scene.bands.at(c, top + r, left);
      std::copy(src, src + size, &out.bands.at(c, r, 0));
    }
  }
  out.origin.easting += left * scene.pixel_size;
  out.origin.northing -= top * scene.pixel_size;
  return out;
}

Scene load_scene(const std::filesystem::path& path, std::span<const BandSpec> band_specs) {
  std::map<std::string, Page> pages;
  if (std::filesystem::is_directory(path)) {
    for (const BandSpec& spec : band_specs) {
      std::filesystem::path file = path / (spec.name + ".tif");
      if (!std::filesystem::exists(file)) file = path / (spec.name + ".tiff");
      if (!std::filesystem::exists(file)) throw Error(ErrorCode::BandMissing, spec.name);
      auto read = detail::read_tiff(file);
      pages.emplace(spec.name, std::move(read.front()));
    }
  } else {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::FormatError, path.string() + ": no such file");
    auto read = detail::read_tiff(path);
    // an already canonical scene file (12 float32 samples per pixel)
    if (read.size() == 1 && read.front().samples == kBandCount && read.front().kind == SampleKind::Float) {
      return read_scene_file(path);
    }
    for (Page& page : read) {
      std::string name = page.page_name;
      if (name.empty()) name = parse_description(page.description).band;
      if (!name.empty()) pages.emplace(name, std::move(page));
    }
  }

  Scene scene;
  scene.bands = Tensor<float>({kBandCount, kSceneEdge, kSceneEdge});
  bool have_origin = false;
  bool have_meta = false;
  for (const BandSpec& spec : band_specs) {
    auto it = pages.find(spec.name);
    if (it == pages.end()) throw Error(ErrorCode::BandMissing, spec.name);
    const Page& page = it->second;
    const int factor = resample_factor(page, spec, path);
    Tensor<float> plane = resample_nearest(normalize_reflectance(band_values(page, path, spec.name)), factor);
    const int h = plane.dim(0), w = plane.dim(1);
    if (h < kSceneEdge || w < kSceneEdge) {
      throw Error(ErrorCode::ExtentTooSmall, path.string() + ": band " + spec.name + " covers " +
                                                 std::to_string(h * kTargetPixelSize) + " m x " +
                                                 std::to_string(w * kTargetPixelSize) + " m");
    }
    const int top = (h - kSceneEdge) / 2, left = (w - kSceneEdge) / 2;
    for (int r = 0; r < kSceneEdge; ++r) {
      const float* src = plane.data() + static_cast<std::size_t>(top + r) * w + left;
      std::copy(src, src + kSceneEdge, &scene.bands.at(spec.index, r, 0));
    }
    if (!have_origin && page.geo.easting && page.geo.northing) {
      scene.origin = from_tags(page.geo);
      scene.origin.easting += left * kTargetPixelSize;
      scene.origin.northing -= top * kTargetPixelSize;
      have_origin = true;
    }
    if (!have_meta) {
      const Description d = parse_description(page.description);
      if (!d.site_id.empty() || d.timestamp) {
        scene.site_id = d.site_id;
        scene.timestamp = d.timestamp.value_or(Timestamp{});
        have_meta = true;
      }
    }
  }
  validate_scene(scene);
  return scene;
}

void write_raw_container(const RawScene& raw, const std::filesystem::path& path) {
  std::vector<Page> pages;
  pages.reserve(raw.bands.size());
  for (const RawBand& band : raw.bands) pages.push_back(raw_band_page(raw, band));
  detail::write_tiff(path, pages);
}

void write_raw_directory(const RawScene& raw, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const RawBand& band : raw.bands) {
    const Page page = raw_band_page(raw, band);
    detail::write_tiff(dir / (band.name + ".tif"), std::span<const Page>(&page, 1));
  }
}

void write_scene_file(const Scene& scene, const std::filesystem::path& path) {
  validate_scene(scene);
  const int h = scene.height(), w = scene.width();
  std::vector<float> chunky(static_cast<std::size_t>(h) * w * kBandCount);
  for (int c = 0; c < kBandCount; ++c) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        chunky[(static_cast<std::size_t>(r) * w + col) * kBandCount + c] = scene.bands.at(c, r, col);
      }
    }
  }
  std::vector<std::string> names;
  for (const BandSpec& spec : canonical_bands()) names.push_back(spec.name);
  Page page;
  page.width = w;
  page.height = h;
  page.samples = kBandCount;
  page.bits = 32;
  page.kind = SampleKind::Float;
  page.description = describe(scene.site_id, scene.timestamp, names);
  page.geo = to_tags(scene.origin, scene.pixel_size);
  page.assign<float>(chunky);
  detail::write_tiff(path, std::span<const Page>(&page, 1));
}

Scene read_scene_file(const std::filesystem::path& path) {
  const auto pages = detail::read_tiff(path);
  const Page& page = pages.front();
  if (page.samples != kBandCount || page.bits != 32 || page.kind != SampleKind::Float) {
    throw Error(ErrorCode::FormatError, path.string() + ": scene file must hold 12 float32 samples per pixel");
  }
  const Description d = parse_description(page.description);
  if (!d.bands.empty()) {
    for (int c = 0; c < kBandCount; ++c) {
      if (c >= static_cast<int>(d.bands.size()) || d.bands[static_cast<std::size_t>(c)] != canonical_bands()[static_cast<std::size_t>(c)].name) {
        throw Error(ErrorCode::FormatError, path.string() + ": band order is not canonical");
      }
    }
  }
  Scene scene;
  scene.site_id = d.site_id;
  scene.timestamp = d.timestamp.value_or(Timestamp{});
  scene.origin = from_tags(page.geo);
  scene.pixel_size = page.geo.pixel_scale.value_or(kTargetPixelSize);
  const int h = page.height, w = page.width;
  scene.bands = Tensor<float>({kBandCount, h, w});
  const auto values = page.as<float>();
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      for (int c = 0; c < kBandCount; ++c) {
        scene.bands.at(c, r, col) = values[(static_cast<std::size_t>(r) * w + col) * kBandCount + c];
      }
    }
  }
  validate_scene(scene);
  return scene;
}

void write_mask(const MaskRaster& mask, const std::filesystem::path& path) {
  if (mask.values.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "mask must be H x W");
  if (!is_binary(mask.values.span())) throw Error(ErrorCode::MaskNotBinary, path.string());
  Page page;
  page.height = mask.height();
  page.width = mask.width();
  page.bits = 8;
  page.kind = SampleKind::Unsigned;
  page.description = describe(mask.site_id, mask.timestamp, {});
  page.geo = to_tags(mask.origin, kTargetPixelSize);
  page.assign<std::uint8_t>(mask.values.span());
  detail::write_tiff(path, std::span<const Page>(&page, 1));
}

MaskRaster read_mask(const std::filesystem::path& path) {
  const auto pages = detail::read_tiff(path);
  const Page& page = pages.front();
  if (page.samples != 1 || page.bits != 8 || page.kind != SampleKind::Unsigned) {
    throw Error(ErrorCode::FormatError, path.string() + ": mask must be single-band unsigned 8-bit");
  }
  const auto values = page.as<std::uint8_t>();
  if (!is_binary(values)) throw Error(ErrorCode::MaskNotBinary, path.string());
  MaskRaster mask;
  const Description d = parse_description(page.description);
  mask.site_id = d.site_id;
  mask.timestamp = d.timestamp.value_or(Timestamp{});
  mask.origin = from_tags(page.geo);
  mask.values = Tensor<std::uint8_t>({page.height, page.width}, std::vector<std::uint8_t>(values.begin(), values.end()));
  return mask;
}

}  // namespace plume::raster

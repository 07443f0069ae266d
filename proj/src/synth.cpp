#include "plume/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace plume::synth {
namespace fs = std::filesystem;

namespace {

// Reflectance background per band in canonical order. Levels are kept low and
// close together; the plume bands are deliberately not the brightest ones.
constexpr double kBaseLevel[raster::kBandCount] = {0.070, 0.065, 0.075, 0.070, 0.085, 0.090,
                                                   0.095, 0.100, 0.100, 0.060, 0.080, 0.065};
constexpr double kSmoothSigma = 0.01;
constexpr int kLatticeCells = 6;

using Rng = std::mt19937_64;

std::uint64_t mix(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Zero-mean field: bilinear interpolation of a coarse Gaussian lattice.
std::vector<double> smooth_field(int edge, Rng& rng) {
  std::normal_distribution<double> normal(0.0, kSmoothSigma);
  const int n = kLatticeCells + 1;
  std::vector<double> lattice(static_cast<std::size_t>(n * n));
  for (double& v : lattice) v = normal(rng);
  std::vector<double> field(static_cast<std::size_t>(edge) * edge);
  const double step = static_cast<double>(edge - 1) / kLatticeCells;
  for (int r = 0; r < edge; ++r) {
    const double fr = r / step;
    const int r0 = std::min(static_cast<int>(fr), kLatticeCells - 1);
    const double tr = fr - r0;
    for (int c = 0; c < edge; ++c) {
      const double fc = c / step;
      const int c0 = std::min(static_cast<int>(fc), kLatticeCells - 1);
      const double tc = fc - c0;
      const auto at = [&](int i, int j) { return lattice[static_cast<std::size_t>(i * n + j)]; };
      field[static_cast<std::size_t>(r) * edge + c] = (1 - tr) * ((1 - tc) * at(r0, c0) + tc * at(r0, c0 + 1)) +
                                                      tr * ((1 - tc) * at(r0 + 1, c0) + tc * at(r0 + 1, c0 + 1));
    }
  }
  const double mean = std::accumulate(field.begin(), field.end(), 0.0) / static_cast<double>(field.size());
  for (double& v : field) v -= mean;
  return field;
}

std::uint16_t to_dn(double reflectance) {
  const double dn = std::round(reflectance * raster::kReflectanceScale);
  return static_cast<std::uint16_t>(std::clamp(dn, 0.0, raster::kReflectanceScale));
}

std::string file_stem(const std::string& site, raster::Timestamp ts) {
  std::string t = raster::format_timestamp(ts);
  std::erase_if(t, [](char c) { return c == '-' || c == ':'; });
  return site + "_" + t;
}

}  // namespace

void PlumeParams::validate() const {
  if (!(major_axis > 0) || !(minor_axis > 0)) throw Error(ErrorCode::UsageError, "plume axes must be positive");
  if (!(amplitude > 0)) throw Error(ErrorCode::UsageError, "plume amplitude must be positive");
  if (!(background_noise_sigma >= 0)) throw Error(ErrorCode::UsageError, "noise sigma must be non-negative");
  for (const auto& b : affected_bands) raster::band_index(b);
}

double half_amplitude_area(const PlumeParams& p) {
  return std::numbers::pi * p.major_axis * p.minor_axis * 2.0 * std::numbers::ln2;
}

SyntheticScene generate_scene(const std::optional<PlumeParams>& plume, std::uint64_t seed, const SceneOptions& options) {
  if (plume) plume->validate();
  const int edge = options.edge;
  const double sigma = plume ? plume->background_noise_sigma : options.noise_sigma;
  Rng rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);

  // plume profile, shared by all affected bands
  std::vector<double> blob(static_cast<std::size_t>(edge) * edge, 0.0);
  std::vector<bool> affected(raster::kBandCount, false);
  Tensor<std::uint8_t> mask({edge, edge});
  if (plume) {
    for (const auto& b : plume->affected_bands) affected[static_cast<std::size_t>(raster::band_index(b))] = true;
    const double cs = std::cos(plume->orientation), sn = std::sin(plume->orientation);
    for (int r = 0; r < edge; ++r) {
      for (int c = 0; c < edge; ++c) {
        const double dx = c - plume->center_col, dy = plume->center_row - r;
        const double u = dx * cs + dy * sn, v = -dx * sn + dy * cs;
        const double q = u * u / (2 * plume->major_axis * plume->major_axis) +
                         v * v / (2 * plume->minor_axis * plume->minor_axis);
        const std::size_t i = static_cast<std::size_t>(r) * edge + c;
        blob[i] = std::exp(-q);
        mask[i] = q < std::numbers::ln2 ? 1 : 0;
      }
    }
  }

  Tensor<float> bands({raster::kBandCount, edge, edge});
  const auto& specs = raster::canonical_bands();
  for (int b = 0; b < raster::kBandCount; ++b) {
    const auto field = smooth_field(edge, rng);
    float* plane = bands.data() + static_cast<std::size_t>(b) * edge * edge;
    for (std::size_t i = 0; i < field.size(); ++i) {
      double v = kBaseLevel[b] + field[i] + sigma * white(rng);
      if (affected[static_cast<std::size_t>(b)]) v += plume->amplitude * blob[i];
      plane[i] = raster::normalize_reflectance(to_dn(v));
    }
    const int f = specs[static_cast<std::size_t>(b)].native_resolution / static_cast<int>(raster::kTargetPixelSize);
    if (options.native_resolution && f > 1) {
      for (int r = 0; r < edge; ++r)
        for (int c = 0; c < edge; ++c) plane[r * edge + c] = plane[(r / f * f) * edge + c / f * f];
    }
  }

  SyntheticScene out;
  out.scene.site_id = options.site_id;
  out.scene.timestamp = options.timestamp;
  out.scene.bands = std::move(bands);
  out.scene.origin = {32633, 500000.0, 4000000.0};
  out.mask.site_id = options.site_id;
  out.mask.timestamp = options.timestamp;
  out.mask.values = std::move(mask);
  out.mask.origin = out.scene.origin;
  return out;
}

PlumeParams random_plume(std::uint64_t seed, int edge) {
  Rng rng(seed);
  std::uniform_real_distribution<double> centre(0.35 * edge, 0.65 * edge);
  std::uniform_real_distribution<double> major(8.0, 14.0), minor(4.0, 7.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  PlumeParams p;
  p.center_row = centre(rng);
  p.center_col = centre(rng);
  p.major_axis = major(rng);
  p.minor_axis = std::min(minor(rng), p.major_axis);
  p.orientation = angle(rng);
  return p;
}

raster::RawScene to_raw(const raster::Scene& scene) {
  raster::RawScene raw;
  raw.site_id = scene.site_id;
  raw.timestamp = scene.timestamp;
  raw.origin = scene.origin;
  const int edge = scene.height();
  for (const auto& spec : raster::canonical_bands()) {
    const int f = spec.native_resolution / static_cast<int>(raster::kTargetPixelSize);
    if (edge % f != 0) throw Error(ErrorCode::InvalidFactor, "scene edge is not a multiple of " + std::to_string(f));
    raster::RawBand band;
    band.name = spec.name;
    band.resolution = spec.native_resolution;
    band.values = Tensor<std::uint16_t>({edge / f, edge / f});
    const auto plane = scene.plane(spec.index);
    for (int r = 0; r < edge / f; ++r)
      for (int c = 0; c < edge / f; ++c)
        band.values[static_cast<std::size_t>(r) * (edge / f) + c] = to_dn(plane[static_cast<std::size_t>(r * f) * edge + c * f]);
    raw.bands.push_back(std::move(band));
  }
  return raw;
}

catalog::SampleRecord write_scene(const raster::Scene& scene, const std::optional<raster::MaskRaster>& mask,
                                  const fs::path& dir, double lat, double lon) {
  fs::create_directories(dir);
  const std::string stem = file_stem(scene.site_id, scene.timestamp);
  catalog::SampleRecord r;
  r.site_id = scene.site_id;
  r.lat = lat;
  r.lon = lon;
  r.timestamp = scene.timestamp;
  r.scene_path = fs::absolute(dir / (stem + ".tif"));
  raster::write_scene_file(scene, r.scene_path);
  if (mask && mask->smoke_pixels() > 0) {
    r.label = 1;
    r.mask_path = fs::absolute(dir / (stem + "_mask.tif"));
    raster::write_mask(*mask, *r.mask_path);
  }
  return r;
}

namespace {

struct Plan {
  std::string site;
  raster::Timestamp ts;
  double lat, lon;
  bool positive;
  std::uint64_t seed;
};

std::vector<Plan> plan_dataset(const DatasetOptions& o) {
  const int total = o.sites * o.scenes_per_site;
  const int positives = static_cast<int>(std::lround(o.positive_fraction * total));
  std::vector<bool> flags(static_cast<std::size_t>(total), false);
  std::fill_n(flags.begin(), positives, true);
  Rng rng(mix(o.seed, 0xda7a));
  std::shuffle(flags.begin(), flags.end(), rng);
  std::vector<Plan> plans;
  const raster::Timestamp start = raster::parse_timestamp("2020-01-01T10:30:00Z");
  for (int s = 0; s < o.sites; ++s) {
    char site[32];
    std::snprintf(site, sizeof site, "site%03d", s);
    for (int k = 0; k < o.scenes_per_site; ++k) {
      const int i = s * o.scenes_per_site + k;
      plans.push_back({site, start + std::chrono::days(5 * k), 45.0 + 0.5 * s, 7.0 + 0.25 * s,
                       flags[static_cast<std::size_t>(i)], mix(o.seed, static_cast<std::uint64_t>(i))});
    }
  }
  return plans;
}

SyntheticScene make(const Plan& p, bool native = false) {
  SceneOptions opts;
  opts.native_resolution = native;
  opts.site_id = p.site;
  opts.timestamp = p.ts;
  std::optional<PlumeParams> plume;
  if (p.positive) plume = random_plume(mix(p.seed, 1));
  return generate_scene(plume, p.seed, opts);
}

}  // namespace

std::vector<catalog::SampleRecord> generate_dataset(const fs::path& dir, const DatasetOptions& options) {
  std::vector<catalog::SampleRecord> records;
  for (const Plan& p : plan_dataset(options)) {
    const auto s = make(p, options.raw_containers);
    auto r = write_scene(s.scene, std::optional(s.mask), dir / "scenes", p.lat, p.lon);
    if (options.raw_containers) {
      const fs::path raw = fs::absolute(dir / "raw" / r.scene_path.filename());
      fs::create_directories(raw.parent_path());
      raster::write_raw_container(to_raw(s.scene), raw);
      fs::remove(r.scene_path);
      r.scene_path = raw;
    }
    if (!options.with_masks && r.mask_path) {
      fs::remove(*r.mask_path);
      r.mask_path.reset();
    }
    records.push_back(std::move(r));
  }
  catalog::write_manifest(records, dir / "manifest.csv");
  return records;
}

std::vector<catalog::SampleRecord> generate_in_memory(catalog::SceneSource& source, const DatasetOptions& options) {
  std::vector<catalog::SampleRecord> records;
  for (const Plan& p : plan_dataset(options)) {
    const auto s = make(p);
    catalog::SampleRecord r;
    r.site_id = p.site;
    r.lat = p.lat;
    r.lon = p.lon;
    r.timestamp = p.ts;
    r.scene_path = "mem/" + file_stem(p.site, p.ts) + ".tif";
    r.label = p.positive ? 1 : 0;
    source.insert(r.scene_path, s.scene.bands);
    if (p.positive && options.with_masks) {
      r.mask_path = "mem/" + file_stem(p.site, p.ts) + "_mask.tif";
      source.insert_mask(*r.mask_path, catalog::mask_tensor(s.mask));
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace plume::synth

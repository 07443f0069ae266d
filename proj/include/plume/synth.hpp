#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plume/catalog.hpp"
#include "plume/raster_io.hpp"

namespace plume::synth {

/// Rotated anisotropic Gaussian added to a few bands. Axes are the Gaussian
/// standard deviations in pixels, so the half-amplitude mask is an ellipse with
/// semi-axes sqrt(2 ln 2) times larger.
struct PlumeParams {
  double center_row = 60.0;
  double center_col = 60.0;
  double major_axis = 12.0;
  double minor_axis = 5.0;
  double orientation = 0.0;  // radians, counter-clockwise from the column axis
  double amplitude = 0.3;
  std::vector<std::string> affected_bands{"B01", "B09", "B11"};
  double background_noise_sigma = 0.01;

  void validate() const;
};

struct SceneOptions {
  int edge = raster::kSceneEdge;
  std::string site_id = "synthetic";
  raster::Timestamp timestamp{};
  double noise_sigma = 0.01;  // used when no plume is given
  /// Make every band block-constant on its native grid so the scene survives a
  /// raw-container round trip (downsample, then nearest upsample) bit-exactly.
  bool native_resolution = false;
};

struct SyntheticScene {
  raster::Scene scene;
  raster::MaskRaster mask;
};

/// Per-band background level plus a smooth zero-mean field and white noise,
/// quantised to whole DN (1/10000). Same seed and arguments give identical output.
SyntheticScene generate_scene(const std::optional<PlumeParams>& plume, std::uint64_t seed,
                              const SceneOptions& options = {});

/// Pixel area of the half-amplitude ellipse: pi * a * b * 2 ln 2.
double half_amplitude_area(const PlumeParams& p);

/// Random plume kept well inside the scene with moderate axes.
PlumeParams random_plume(std::uint64_t seed, int edge = raster::kSceneEdge);

/// Native-resolution raw acquisition equivalent to a scene made with
/// native_resolution = true.
raster::RawScene to_raw(const raster::Scene& scene);

/// Writes <dir>/<stem>.tif (+ <stem>_mask.tif for positives) and returns the
/// matching record; the CSV row is catalog::manifest_row(record, dir).
catalog::SampleRecord write_scene(const raster::Scene& scene, const std::optional<raster::MaskRaster>& mask,
                                  const std::filesystem::path& dir, double lat = 0.0, double lon = 0.0);

struct DatasetOptions {
  int sites = 8;
  int scenes_per_site = 4;
  double positive_fraction = 0.5;
  std::uint64_t seed = 0;
  bool with_masks = true;
  /// Write native-resolution raw containers (input for ingestion) instead of
  /// canonical scene files.
  bool raw_containers = false;
};

/// Generates a whole labelled data set under `dir` and writes `dir`/manifest.csv.
std::vector<catalog::SampleRecord> generate_dataset(const std::filesystem::path& dir, const DatasetOptions& options);

/// In-memory variant: records point at virtual paths registered in `source`.
std::vector<catalog::SampleRecord> generate_in_memory(catalog::SceneSource& source, const DatasetOptions& options);

}  // namespace plume::synth

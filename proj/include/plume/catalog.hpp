#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "plume/augment.hpp"
#include "plume/raster_io.hpp"
#include "plume/tensor.hpp"

namespace plume::catalog {

enum class Split { Train, Val, Test, Unassigned };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SampleRecord {
  std::string site_id;
  double lat = 0.0;
  double lon = 0.0;
  raster::Timestamp timestamp{};
  std::filesystem::path scene_path;
  int label = 0;  // 1 = smoke anywhere in the scene
  std::optional<std::filesystem::path> mask_path;
  Split split = Split::Unassigned;
  bool flagged_nodata = false;  // more than half of B04 is zero; excluded from training by default

  std::string key() const { return site_id + "@" + raster::format_timestamp(timestamp); }
  bool operator==(const SampleRecord&) const = default;
};

inline constexpr const char* kManifestHeader = "site_id,lat,lon,timestamp,scene_path,label,mask_path";

struct BuildOptions {
  bool validate_scenes = true;  // load every scene (and mask) once
};

struct LabelCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Parses manifest CSV text. Relative paths are resolved against base_dir.
std::vector<SampleRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
std::vector<SampleRecord> build_catalog(const std::filesystem::path& manifest_path, const BuildOptions& options = {});
/// Paths are written relative to the manifest's directory when they live below it.
void write_manifest(std::span<const SampleRecord> records, const std::filesystem::path& manifest_path);
std::string manifest_row(const SampleRecord& record, const std::filesystem::path& base_dir);

LabelCounts count_labels(std::span<const SampleRecord> records);

struct Ratios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitManifest {
  std::map<std::string, Split> assignments;  // site_id -> split
  Ratios ratios;
  std::uint64_t seed = 0;
};

/// Site-level assignment: sites are shuffled with the seed, then train, val and
/// test are filled in turn by cumulative image count.
SplitManifest assign_splits(std::span<const SampleRecord> records, const Ratios& ratios, std::uint64_t seed);
void apply_splits(std::vector<SampleRecord>& records, const SplitManifest& splits);
std::vector<SampleRecord> select_split(std::span<const SampleRecord> records, Split split, bool exclude_flagged = false);

struct SplitFractions {
  double train = 0, val = 0, test = 0;
};
SplitFractions realized_fractions(std::span<const SampleRecord> records, const SplitManifest& splits);

void write_split_manifest(const SplitManifest& splits, const std::filesystem::path& path);
SplitManifest read_split_manifest(const std::filesystem::path& path);

/// Duplicates the minority class (positives in practice) until both classes have
/// equal counts: whole-multiple copies plus a seeded random remainder, then a
/// seeded shuffle.
std::vector<SampleRecord> balance_by_duplication(std::span<const SampleRecord> records, std::uint64_t seed);

/// Masked positives plus an equal number of randomly drawn negatives. An input
/// without masked positives keeps all of its negatives.
std::vector<SampleRecord> match_negatives(std::span<const SampleRecord> records, std::uint64_t seed);

/// Loads scene/mask tensors for records, optionally caching them. Thread-safe.
class SceneSource {
 public:
  struct Item {
    std::shared_ptr<const Tensor<float>> scene;  // 12 x H x W
    std::shared_ptr<const Tensor<float>> mask;   // 1 x H x W, null when not requested
  };

  explicit SceneSource(bool cache = true) : cache_(cache) {}

  /// need_mask: negatives without a mask file get an all-zero mask; a positive
  /// without one is an error.
  Item load(const SampleRecord& record, bool need_mask);
  /// Registers an in-memory scene (and mask) under a path, bypassing disk.
  void insert(const std::filesystem::path& scene_path, Tensor<float> scene);
  void insert_mask(const std::filesystem::path& mask_path, Tensor<float> mask);

 private:
  std::shared_ptr<const Tensor<float>> scene_for(const std::filesystem::path& path);
  std::shared_ptr<const Tensor<float>> mask_for(const std::filesystem::path& path);

  bool cache_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const Tensor<float>>> scenes_;
  std::unordered_map<std::string, std::shared_ptr<const Tensor<float>>> masks_;
};

Tensor<float> scene_tensor(const raster::Scene& scene);
Tensor<float> mask_tensor(const raster::MaskRaster& mask);

enum class TargetKind { Label, Mask };

struct Batch {
  Tensor<float> images;   // B x 12 x S x S
  Tensor<float> targets;  // B x 1 (labels) or B x 1 x S x S (masks)
  std::vector<std::size_t> record_indices;
};

/// One epoch over `records`: a seeded shuffle (when enabled), then fixed-size
/// batches with the last one partial. Every sample draws its augmentation from
/// its own seed, so the stream is identical for any worker count.
class BatchStream {
 public:
  BatchStream(std::span<const SampleRecord> records, int batch_size, augment::TransformPolicy policy,
              std::uint64_t seed, TargetKind target, SceneSource& source, int workers = 1, bool shuffle = true);

  std::optional<Batch> next();
  std::size_t batch_count() const;

 private:
  void fill_sample(Batch& batch, std::size_t slot, std::size_t position);

  std::span<const SampleRecord> records_;
  int batch_size_;
  augment::TransformPolicy policy_;
  TargetKind target_;
  SceneSource& source_;
  int workers_;
  std::vector<std::size_t> order_;
  std::vector<std::uint64_t> sample_seeds_;
  std::size_t cursor_ = 0;
};

}  // namespace plume::catalog

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "plume/models.hpp"

namespace plume::models {

inline constexpr const char* kClassifierArch = "classifier";
inline constexpr const char* kSegmenterArch = "segmenter";

struct Manifest {
  std::string architecture;  // kClassifierArch or kSegmenterArch
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> band_order;
  double normalization = 10000.0;
  std::int64_t training_step = 0;
  nlohmann::json metrics = nlohmann::json::object();

  bool operator==(const Manifest&) const = default;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

/// In-memory form of a checkpoint file. On disk it is a ustar archive holding
/// manifest.json and weights.bin, where weights.bin is a sequence of records
/// [u32 name length | name | u32 rank | u32 dims... | f32 payload], little-endian.
struct Checkpoint {
  Manifest manifest;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws CorruptCheckpoint for truncated or malformed files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Manifest with band order and normalization filled in for a model.
Manifest make_manifest(const Classifier<float>& model);
Manifest make_manifest(const Segmenter<float>& model);

template <typename Model>
std::vector<NamedTensor> snapshot_tensors(Model& model) {
  std::vector<NamedTensor> out;
  for (auto* p : model.params()) {
    out.push_back({p->name, p->value.shape(), std::vector<float>(p->value.vec().begin(), p->value.vec().end())});
  }
  return out;
}

/// Writes tensors into a model whose layout must match name-for-name and
/// shape-for-shape; throws ArchMismatch otherwise.
template <typename Model>
void restore_tensors(Model& model, const std::vector<NamedTensor>& tensors) {
  auto params = model.params();
  if (params.size() != tensors.size()) {
    throw Error(ErrorCode::ArchMismatch, "checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != tensors[i].name || params[i]->value.shape() != tensors[i].shape) {
      throw Error(ErrorCode::ArchMismatch, "tensor " + tensors[i].name + " " + shape_string(tensors[i].shape) +
                                               " does not match " + params[i]->name + " " +
                                               shape_string(params[i]->value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(tensors[i].data.begin(), tensors[i].data.end(), params[i]->value.vec().begin());
  }
}

void save_checkpoint(Classifier<float>& model, const Manifest& manifest, const std::filesystem::path& path);
void save_checkpoint(Segmenter<float>& model, const Manifest& manifest, const std::filesystem::path& path);

using AnyModel = std::variant<Classifier<float>, Segmenter<float>>;

struct LoadedModel {
  Manifest manifest;
  AnyModel model;
};

/// Rebuilds the architecture recorded in the manifest and restores its weights.
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Restores into a caller-chosen architecture; ArchMismatch if the checkpoint
/// was produced by a different configuration.
Classifier<float> load_classifier(const std::filesystem::path& path, const ClassifierConfig& expected);
Segmenter<float> load_segmenter(const std::filesystem::path& path, const SegmenterConfig& expected);

}  // namespace plume::models

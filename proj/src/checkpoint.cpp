#include "plume/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "plume/raster_io.hpp"

namespace plume::models {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::size_t kBlock = 512;
constexpr const char* kManifestEntry = "manifest.json";
constexpr const char* kWeightsEntry = "weights.bin";

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::CorruptCheckpoint, what); }

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width includes the terminating NUL
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') corrupt("bad octal field in archive header");
    value = value * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return value;
}

std::uint32_t header_checksum(const std::array<char, kBlock>& header) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    sum += (i >= 148 && i < 156) ? static_cast<std::uint32_t>(' ') : static_cast<unsigned char>(header[i]);
  }
  return sum;
}

void append_entry(std::vector<char>& out, const std::string& name, const std::vector<std::uint8_t>& payload) {
  std::array<char, kBlock> header{};
  std::memcpy(header.data(), name.data(), std::min<std::size_t>(name.size(), 99));
  put_octal(header.data() + 100, 8, 0644);
  put_octal(header.data() + 108, 8, 0);
  put_octal(header.data() + 116, 8, 0);
  put_octal(header.data() + 124, 12, payload.size());
  put_octal(header.data() + 136, 12, 0);  // fixed mtime keeps archives byte-reproducible
  header[156] = '0';
  std::memcpy(header.data() + 257, "ustar", 6);
  std::memcpy(header.data() + 263, "00", 2);
  std::snprintf(header.data() + 148, 8, "%06o", header_checksum(header));
  header[155] = ' ';
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  out.resize(out.size() + (kBlock - payload.size() % kBlock) % kBlock, '\0');
}

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> read_entries(const std::vector<char>& bytes) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> entries;
  std::size_t pos = 0;
  while (true) {
    if (pos + kBlock > bytes.size()) corrupt("archive truncated before end marker");
    std::array<char, kBlock> header{};
    std::memcpy(header.data(), bytes.data() + pos, kBlock);
    if (std::all_of(header.begin(), header.end(), [](char c) { return c == '\0'; })) break;
    if (get_octal(header.data() + 148, 8) != header_checksum(header)) corrupt("archive header checksum mismatch");
    const std::string name(header.data(), strnlen(header.data(), 100));
    const std::uint64_t size = get_octal(header.data() + 124, 12);
    pos += kBlock;
    if (pos + size > bytes.size()) corrupt("archive entry " + name + " truncated");
    entries.emplace_back(name, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + size)));
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  return entries;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) corrupt("weights truncated");
  std::uint32_t v = 0;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

std::vector<std::string> band_names() {
  std::vector<std::string> names;
  for (const auto& b : raster::canonical_bands()) names.push_back(b.name);
  return names;
}

template <typename Model>
Model load_into(const std::filesystem::path& path, const char* arch, const auto& expected) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.manifest.architecture != arch) {
    throw Error(ErrorCode::ArchMismatch, "checkpoint holds a " + ckpt.manifest.architecture + ", expected " + arch);
  }
  Model model(expected, 0);
  restore_tensors(model, ckpt.tensors);
  return model;
}

}  // namespace

void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"architecture", m.architecture}, {"config", m.config},           {"band_order", m.band_order},
       {"normalization", m.normalization}, {"training_step", m.training_step}, {"metrics", m.metrics}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  j.at("architecture").get_to(m.architecture);
  m.config = j.at("config");
  j.at("band_order").get_to(m.band_order);
  j.at("normalization").get_to(m.normalization);
  j.at("training_step").get_to(m.training_step);
  m.metrics = j.at("metrics");
}

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out;
  for (const NamedTensor& t : tensors) {
    if (t.data.size() != shape_size(t.shape)) throw Error(ErrorCode::ShapeMismatch, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes) {
  std::vector<NamedTensor> tensors;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    NamedTensor t;
    const std::uint32_t name_len = get_u32(bytes, pos);
    if (name_len > 4096 || pos + name_len > bytes.size()) corrupt("tensor name truncated");
    t.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    const std::uint32_t rank = get_u32(bytes, pos);
    if (rank > 8) corrupt("tensor " + t.name + " has implausible rank");
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(static_cast<int>(get_u32(bytes, pos)));
    const std::size_t count = shape_size(t.shape);
    if (pos + count * sizeof(float) > bytes.size()) corrupt("tensor " + t.name + " payload truncated");
    t.data.resize(count);
    std::memcpy(t.data.data(), bytes.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string manifest = nlohmann::json(checkpoint.manifest).dump(2) + "\n";
  std::vector<char> archive;
  append_entry(archive, kManifestEntry, std::vector<std::uint8_t>(manifest.begin(), manifest.end()));
  append_entry(archive, kWeightsEntry, encode_weights(checkpoint.tensors));
  archive.resize(archive.size() + 2 * kBlock, '\0');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out.write(archive.data(), static_cast<std::streamsize>(archive.size()));
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  bool have_manifest = false, have_weights = false;
  for (auto& [name, payload] : read_entries(bytes)) {
    if (name == kManifestEntry) {
      const auto j = nlohmann::json::parse(payload.begin(), payload.end(), nullptr, false);
      if (j.is_discarded()) corrupt("manifest.json is not valid JSON");
      try {
        ckpt.manifest = j.get<Manifest>();
      } catch (const nlohmann::json::exception& e) {
        corrupt(std::string("manifest.json: ") + e.what());
      }
      have_manifest = true;
    } else if (name == kWeightsEntry) {
      ckpt.tensors = decode_weights(payload);
      have_weights = true;
    }
  }
  if (!have_manifest || !have_weights) corrupt(path.string() + ": missing manifest.json or weights.bin");
  return ckpt;
}

Manifest make_manifest(const Classifier<float>& model) {
  Manifest m;
  m.architecture = kClassifierArch;
  m.config = model.config();
  m.band_order = band_names();
  m.normalization = raster::kReflectanceScale;
  return m;
}

Manifest make_manifest(const Segmenter<float>& model) {
  Manifest m;
  m.architecture = kSegmenterArch;
  m.config = model.config();
  m.band_order = band_names();
  m.normalization = raster::kReflectanceScale;
  return m;
}

void save_checkpoint(Classifier<float>& model, const Manifest& manifest, const std::filesystem::path& path) {
  save_checkpoint(Checkpoint{manifest, snapshot_tensors(model)}, path);
}

void save_checkpoint(Segmenter<float>& model, const Manifest& manifest, const std::filesystem::path& path) {
  save_checkpoint(Checkpoint{manifest, snapshot_tensors(model)}, path);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  try {
    if (ckpt.manifest.architecture == kClassifierArch) {
      Classifier<float> model(ckpt.manifest.config.get<ClassifierConfig>(), 0);
      restore_tensors(model, ckpt.tensors);
      return {ckpt.manifest, AnyModel(std::in_place_index<0>, std::move(model))};
    }
    if (ckpt.manifest.architecture == kSegmenterArch) {
      Segmenter<float> model(ckpt.manifest.config.get<SegmenterConfig>(), 0);
      restore_tensors(model, ckpt.tensors);
      return {ckpt.manifest, AnyModel(std::in_place_index<1>, std::move(model))};
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("manifest config: ") + e.what());
  }
  throw Error(ErrorCode::ArchMismatch, "unknown architecture '" + ckpt.manifest.architecture + "'");
}

Classifier<float> load_classifier(const std::filesystem::path& path, const ClassifierConfig& expected) {
  return load_into<Classifier<float>>(path, kClassifierArch, expected);
}

Segmenter<float> load_segmenter(const std::filesystem::path& path, const SegmenterConfig& expected) {
  return load_into<Segmenter<float>>(path, kSegmenterArch, expected);
}

}  // namespace plume::models

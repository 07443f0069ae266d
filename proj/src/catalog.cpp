#include "plume/catalog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <sstream>

namespace plume::catalog {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void row_error(ErrorCode code, std::size_t row, const std::string& what) {
  throw Error(code, "row " + std::to_string(row) + ": " + what);
}

// RFC 4180-ish: double quotes may wrap a field and "" escapes a quote.
std::vector<std::string> split_csv(const std::string& line, std::size_t row) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) row_error(ErrorCode::ManifestError, row, "unterminated quote");
  return fields;
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_double(const std::string& text, std::size_t row, const char* what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    row_error(ErrorCode::ManifestError, row, std::string("bad ") + what + " '" + text + "'");
  }
  return v;
}

fs::path resolve(const std::string& text, const fs::path& base_dir) {
  fs::path p(text);
  return p.is_absolute() ? p : (base_dir / p).lexically_normal();
}

std::string relative_text(const fs::path& p, const fs::path& base_dir) {
  if (base_dir.empty() || !p.is_absolute()) return p.generic_string();
  const fs::path rel = p.lexically_relative(base_dir);
  if (rel.empty() || *rel.begin() == "..") return p.generic_string();
  return rel.generic_string();
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error(ErrorCode::ManifestError, "unknown split '" + std::string(text) + "'");
}

std::vector<SampleRecord> parse_manifest(std::istream& in, const fs::path& base_dir) {
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  std::set<std::pair<std::string, raster::Timestamp>> seen;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line != kManifestHeader) {
        throw Error(ErrorCode::ManifestError, "row 0: header must be '" + std::string(kManifestHeader) + "'");
      }
      have_header = true;
      continue;
    }
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line, row);
    if (f.size() != 7) row_error(ErrorCode::ManifestError, row, "expected 7 fields, got " + std::to_string(f.size()));

    SampleRecord r;
    r.site_id = f[0];
    if (r.site_id.empty()) row_error(ErrorCode::ManifestError, row, "empty site_id");
    r.lat = parse_double(f[1], row, "lat");
    r.lon = parse_double(f[2], row, "lon");
    if (std::abs(r.lat) > 90 || std::abs(r.lon) > 180) row_error(ErrorCode::ManifestError, row, "lat/lon out of range");
    try {
      r.timestamp = raster::parse_timestamp(f[3]);
    } catch (const Error& e) {
      row_error(ErrorCode::ManifestError, row, e.what());
    }
    if (f[4].empty()) row_error(ErrorCode::ManifestError, row, "empty scene_path");
    r.scene_path = resolve(f[4], base_dir);
    if (f[5] == "0") {
      r.label = 0;
    } else if (f[5] == "1") {
      r.label = 1;
    } else {
      row_error(ErrorCode::ManifestError, row, "label must be 0 or 1, got '" + f[5] + "'");
    }
    if (!f[6].empty()) {
      if (r.label == 0) row_error(ErrorCode::LabelMaskConflict, row, "negative scene has a mask");
      r.mask_path = resolve(f[6], base_dir);
    }
    if (!seen.emplace(r.site_id, r.timestamp).second) {
      row_error(ErrorCode::ManifestError, row, "duplicate (site_id, timestamp) " + r.key());
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SampleRecord> build_catalog(const fs::path& manifest_path, const BuildOptions& options) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::IoError, manifest_path.string() + ": cannot open");
  auto records = parse_manifest(in, manifest_path.parent_path());
  if (!options.validate_scenes) return records;

  const int b04 = raster::band_index("B04");
  for (std::size_t i = 0; i < records.size(); ++i) {
    SampleRecord& r = records[i];
    const std::size_t row = i + 1;
    if (!fs::exists(r.scene_path)) row_error(ErrorCode::ManifestError, row, r.scene_path.string() + " does not exist");
    if (r.mask_path && !fs::exists(*r.mask_path)) {
      row_error(ErrorCode::ManifestError, row, r.mask_path->string() + " does not exist");
    }
    raster::Scene scene;
    try {
      scene = raster::read_scene_file(r.scene_path);
      raster::validate_scene(scene);
      if (r.mask_path) {
        const auto mask = raster::read_mask(*r.mask_path);
        if (mask.values.dim(0) != scene.height() || mask.values.dim(1) != scene.width()) {
          throw Error(ErrorCode::PairMismatch, "mask " + shape_string(mask.values.shape()) + " vs scene " +
                                                   std::to_string(scene.height()) + "x" + std::to_string(scene.width()));
        }
      }
    } catch (const Error& e) {
      throw Error(e.code(), "row " + std::to_string(row) + " (" + r.key() + "): " + e.what());
    }
    const auto plane = scene.plane(b04);
    const auto zeros = static_cast<std::size_t>(std::count(plane.begin(), plane.end(), 0.0f));
    r.flagged_nodata = zeros * 2 > plane.size();
  }
  return records;
}

std::string manifest_row(const SampleRecord& r, const fs::path& base_dir) {
  std::string row = quote_csv(r.site_id) + "," + format_number(r.lat) + "," + format_number(r.lon) + "," +
                    raster::format_timestamp(r.timestamp) + "," + quote_csv(relative_text(r.scene_path, base_dir)) +
                    "," + std::to_string(r.label) + ",";
  if (r.mask_path) row += quote_csv(relative_text(*r.mask_path, base_dir));
  return row;
}

void write_manifest(std::span<const SampleRecord> records, const fs::path& manifest_path) {
  const fs::path base = fs::absolute(manifest_path).parent_path();
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, manifest_path.string() + ": cannot open for writing");
  out << kManifestHeader << "\n";
  for (const auto& r : records) out << manifest_row(r, base) << "\n";
  if (!out) throw Error(ErrorCode::IoError, manifest_path.string() + ": write failed");
}

LabelCounts count_labels(std::span<const SampleRecord> records) {
  LabelCounts c;
  for (const auto& r : records) (r.label == 1 ? c.positive : c.negative)++;
  return c;
}

SplitManifest assign_splits(std::span<const SampleRecord> records, const Ratios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::UsageError, "split ratios must be non-negative and sum to 1");
  }
  std::map<std::string, std::size_t> per_site;
  for (const auto& r : records) per_site[r.site_id]++;
  if (per_site.size() < 3) {
    throw Error(ErrorCode::TooFewSites, std::to_string(per_site.size()) + " distinct sites; at least 3 are needed");
  }

  std::vector<std::pair<std::string, std::size_t>> sites(per_site.begin(), per_site.end());
  augment::Rng rng(seed);
  std::shuffle(sites.begin(), sites.end(), rng);

  const double total = static_cast<double>(records.size());
  SplitManifest out;
  out.ratios = ratios;
  out.seed = seed;
  std::size_t next = 0;
  // Greedy fill by image count. A split takes a site while it is below its target,
  // unless taking it would overshoot by more than the current shortfall.
  for (const auto& [split, ratio] : {std::pair{Split::Train, ratios.train}, std::pair{Split::Val, ratios.val}}) {
    const double target = ratio * total;
    double have = 0;
    while (next < sites.size() && have < target) {
      const double n = static_cast<double>(sites[next].second);
      if (have > 0 && have + n - target > target - have) break;
      out.assignments[sites[next].first] = split;
      have += n;
      ++next;
    }
  }
  for (; next < sites.size(); ++next) out.assignments[sites[next].first] = Split::Test;
  return out;
}

void apply_splits(std::vector<SampleRecord>& records, const SplitManifest& splits) {
  for (auto& r : records) {
    const auto it = splits.assignments.find(r.site_id);
    if (it == splits.assignments.end()) {
      throw Error(ErrorCode::ManifestError, "site " + r.site_id + " is missing from the split manifest");
    }
    r.split = it->second;
  }
}

std::vector<SampleRecord> select_split(std::span<const SampleRecord> records, Split split, bool exclude_flagged) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split && !(exclude_flagged && r.flagged_nodata)) out.push_back(r);
  }
  return out;
}

SplitFractions realized_fractions(std::span<const SampleRecord> records, const SplitManifest& splits) {
  SplitFractions f;
  if (records.empty()) return f;
  for (const auto& r : records) {
    const auto it = splits.assignments.find(r.site_id);
    if (it == splits.assignments.end()) continue;
    if (it->second == Split::Train) f.train += 1;
    if (it->second == Split::Val) f.val += 1;
    if (it->second == Split::Test) f.test += 1;
  }
  const double n = static_cast<double>(records.size());
  f.train /= n;
  f.val /= n;
  f.test /= n;
  return f;
}

void write_split_manifest(const SplitManifest& splits, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out << "# ratios=" << format_number(splits.ratios.train) << "," << format_number(splits.ratios.val) << ","
      << format_number(splits.ratios.test) << " seed=" << splits.seed << "\n";
  out << "site_id\tsplit\n";
  for (const auto& [site, split] : splits.assignments) out << site << "\t" << to_string(split) << "\n";
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

SplitManifest read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open");
  SplitManifest out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == "site_id\tsplit") continue;
    if (line[0] == '#') {
      double tr = 0, va = 0, te = 0;
      unsigned long long seed = 0;
      if (std::sscanf(line.c_str(), "# ratios=%lf,%lf,%lf seed=%llu", &tr, &va, &te, &seed) == 4) {
        out.ratios = {tr, va, te};
        out.seed = seed;
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::ManifestError, path.string() + ": bad line '" + line + "'");
    out.assignments[line.substr(0, tab)] = parse_split(line.substr(tab + 1));
  }
  return out;
}

std::vector<SampleRecord> balance_by_duplication(std::span<const SampleRecord> records, std::uint64_t seed) {
  std::vector<SampleRecord> pos, neg;
  for (const auto& r : records) (r.label == 1 ? pos : neg).push_back(r);
  if (pos.empty() || neg.empty()) {
    throw Error(ErrorCode::CannotBalance, "need both classes, got " + std::to_string(pos.size()) + " positive and " +
                                              std::to_string(neg.size()) + " negative");
  }
  auto& minority = pos.size() <= neg.size() ? pos : neg;
  auto& majority = pos.size() <= neg.size() ? neg : pos;
  augment::Rng rng(seed);

  std::vector<SampleRecord> out = majority;
  const std::size_t whole = majority.size() / minority.size();
  const std::size_t extra = majority.size() % minority.size();
  for (std::size_t k = 0; k < whole; ++k) out.insert(out.end(), minority.begin(), minority.end());
  std::vector<std::size_t> pick(minority.size());
  std::iota(pick.begin(), pick.end(), 0);
  std::shuffle(pick.begin(), pick.end(), rng);
  for (std::size_t k = 0; k < extra; ++k) out.push_back(minority[pick[k]]);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<SampleRecord> match_negatives(std::span<const SampleRecord> records, std::uint64_t seed) {
  std::vector<SampleRecord> pos, neg;
  for (const auto& r : records) {
    if (r.label == 1 && r.mask_path) pos.push_back(r);
    if (r.label == 0) neg.push_back(r);
  }
  if (pos.empty()) return neg;
  augment::Rng rng(seed);
  std::shuffle(neg.begin(), neg.end(), rng);
  neg.resize(std::min(neg.size(), pos.size()));
  // keep the original catalog order so the result does not depend on the shuffle above
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    const bool keep = (r.label == 1 && r.mask_path) ||
                      std::any_of(neg.begin(), neg.end(), [&](const SampleRecord& n) { return n.key() == r.key(); });
    if (keep) out.push_back(r);
  }
  return out;
}

Tensor<float> scene_tensor(const raster::Scene& scene) { return scene.bands; }

Tensor<float> mask_tensor(const raster::MaskRaster& mask) {
  Tensor<float> out({1, mask.values.dim(0), mask.values.dim(1)});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(mask.values[i]);
  return out;
}

void SceneSource::insert(const fs::path& scene_path, Tensor<float> scene) {
  std::lock_guard lock(mutex_);
  scenes_[scene_path.string()] = std::make_shared<const Tensor<float>>(std::move(scene));
}

void SceneSource::insert_mask(const fs::path& mask_path, Tensor<float> mask) {
  std::lock_guard lock(mutex_);
  masks_[mask_path.string()] = std::make_shared<const Tensor<float>>(std::move(mask));
}

std::shared_ptr<const Tensor<float>> SceneSource::scene_for(const fs::path& path) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = scenes_.find(path.string()); it != scenes_.end()) return it->second;
  }
  auto t = std::make_shared<const Tensor<float>>(scene_tensor(raster::read_scene_file(path)));
  if (cache_) {
    std::lock_guard lock(mutex_);
    scenes_.emplace(path.string(), t);
  }
  return t;
}

std::shared_ptr<const Tensor<float>> SceneSource::mask_for(const fs::path& path) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = masks_.find(path.string()); it != masks_.end()) return it->second;
  }
  auto t = std::make_shared<const Tensor<float>>(mask_tensor(raster::read_mask(path)));
  if (cache_) {
    std::lock_guard lock(mutex_);
    masks_.emplace(path.string(), t);
  }
  return t;
}

SceneSource::Item SceneSource::load(const SampleRecord& record, bool need_mask) {
  try {
    Item item;
    item.scene = scene_for(record.scene_path);
    if (need_mask) {
      if (record.mask_path) {
        item.mask = mask_for(*record.mask_path);
      } else if (record.label == 0) {
        item.mask = std::make_shared<const Tensor<float>>(Shape{1, item.scene->dim(1), item.scene->dim(2)});
      } else {
        throw Error(ErrorCode::ManifestError, "positive scene has no mask");
      }
    }
    return item;
  } catch (const Error& e) {
    throw Error(e.code(), record.key() + " (" + record.scene_path.string() + "): " + e.what());
  }
}

BatchStream::BatchStream(std::span<const SampleRecord> records, int batch_size, augment::TransformPolicy policy,
                         std::uint64_t seed, TargetKind target, SceneSource& source, int workers, bool shuffle)
    : records_(records),
      batch_size_(batch_size),
      policy_(policy),
      target_(target),
      source_(source),
      workers_(std::max(1, workers)) {
  if (batch_size <= 0) throw Error(ErrorCode::UsageError, "batch size must be positive");
  order_.resize(records.size());
  std::iota(order_.begin(), order_.end(), 0);
  augment::Rng rng(seed);
  if (shuffle) std::shuffle(order_.begin(), order_.end(), rng);
  sample_seeds_.resize(records.size());
  for (auto& s : sample_seeds_) s = rng();
}

std::size_t BatchStream::batch_count() const {
  return (records_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

void BatchStream::fill_sample(Batch& batch, std::size_t slot, std::size_t position) {
  const SampleRecord& record = records_[order_[position]];
  const bool want_mask = target_ == TargetKind::Mask;
  const auto item = source_.load(record, want_mask);
  augment::Rng rng(sample_seeds_[position]);
  std::optional<Tensor<float>> mask;
  if (want_mask) mask = *item.mask;
  const auto aug = augment::apply_pair(*item.scene, mask, policy_, rng);

  const std::size_t image_size = aug.scene.size();
  if (batch.images.size() / batch.images.dim(0) != image_size) {
    throw Error(ErrorCode::ShapeMismatch, record.key() + ": scene has " + std::to_string(aug.scene.dim(0)) +
                                              " bands, expected " + std::to_string(batch.images.dim(1)));
  }
  std::copy(aug.scene.vec().begin(), aug.scene.vec().end(), batch.images.vec().begin() + slot * image_size);
  if (want_mask) {
    const std::size_t m = aug.mask->size();
    std::copy(aug.mask->vec().begin(), aug.mask->vec().end(), batch.targets.vec().begin() + slot * m);
  } else {
    batch.targets[slot] = static_cast<float>(record.label);
  }
  batch.record_indices[slot] = order_[position];
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= records_.size()) return std::nullopt;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), records_.size() - cursor_);
  const int s = policy_.crop_size;
  const int bands = static_cast<int>(raster::kBandCount);
  Batch batch{Tensor<float>({static_cast<int>(n), bands, s, s}),
              target_ == TargetKind::Mask ? Tensor<float>({static_cast<int>(n), 1, s, s})
                                          : Tensor<float>({static_cast<int>(n), 1}),
              std::vector<std::size_t>(n)};
  const std::size_t start = cursor_;
  if (workers_ == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fill_sample(batch, i, start + i);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers_), n);
    for (std::size_t k = 0; k < w; ++k) {
      jobs.push_back(std::async(std::launch::async, [&, k] {
        for (std::size_t i = k; i < n; i += w) fill_sample(batch, i, start + i);
      }));
    }
    for (auto& j : jobs) j.get();
  }
  cursor_ += n;
  return batch;
}

}  // namespace plume::catalog

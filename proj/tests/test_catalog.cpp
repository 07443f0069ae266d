#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "plume/catalog.hpp"
#include "plume/synth.hpp"
#include "test_support.hpp"

using namespace plume;
using namespace plume::catalog;
using plume::test::error_code_of;
using plume::test::TempDir;

namespace {

std::vector<SampleRecord> parse(const std::string& body) {
  std::istringstream in(std::string(kManifestHeader) + "\n" + body);
  return parse_manifest(in, "/data");
}

SampleRecord record(const std::string& site, int day, int label, bool mask = false) {
  SampleRecord r;
  r.site_id = site;
  r.timestamp = raster::parse_timestamp("2020-01-01T00:00:00Z") + std::chrono::hours(24 * day);
  r.scene_path = "/x/" + site + "_" + std::to_string(day) + ".tif";
  r.label = label;
  if (mask) r.mask_path = "/x/" + site + "_" + std::to_string(day) + "_mask.tif";
  return r;
}

std::vector<SampleRecord> random_catalog(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_sites(3, 40), n_images(1, 12), label(0, 1);
  std::vector<SampleRecord> out;
  const int sites = n_sites(rng);
  for (int s = 0; s < sites; ++s) {
    const int k = n_images(rng);
    for (int i = 0; i < k; ++i) out.push_back(record("s" + std::to_string(s), i, label(rng)));
  }
  return out;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const auto recs = parse(
      "a,45.5,7.25,2020-01-01T10:30:00Z,scenes/a.tif,1,masks/a.tif\n"
      "\"b,c\",-3,120,2020-01-02,/abs/b.tif,0,\n");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].site_id == "a");
  CHECK(recs[0].lat == 45.5);
  CHECK(recs[0].scene_path == std::filesystem::path("/data/scenes/a.tif"));
  CHECK(recs[0].mask_path == std::filesystem::path("/data/masks/a.tif"));
  CHECK(recs[0].label == 1);
  CHECK(recs[1].site_id == "b,c");
  CHECK(recs[1].scene_path == std::filesystem::path("/abs/b.tif"));
  CHECK_FALSE(recs[1].mask_path);
  CHECK(recs[1].split == Split::Unassigned);
}

TEST_CASE("manifest errors") {
  auto code_of = [](const std::string& body) { return error_code_of([&] { parse(body); }); };
  CHECK(code_of("a,1,2,2020-01-01,a.tif,2,\n") == ErrorCode::ManifestError);
  CHECK(code_of("a,1,2,2020-01-01,a.tif,0,m.tif\n") == ErrorCode::LabelMaskConflict);
  CHECK(code_of("a,1,2,2020-01-01,a.tif,0\n") == ErrorCode::ManifestError);
  CHECK(code_of("a,1,2,not-a-date,a.tif,0,\n") == ErrorCode::ManifestError);
  CHECK(code_of("a,x,2,2020-01-01,a.tif,0,\n") == ErrorCode::ManifestError);
  CHECK(code_of("a,1,2,2020-01-01,a.tif,0,\na,1,2,2020-01-01,b.tif,1,\n") == ErrorCode::ManifestError);
  std::istringstream bad_header("site,lat\n");
  CHECK(error_code_of([&] { parse_manifest(bad_header, "."); }) == ErrorCode::ManifestError);

  try {
    parse("a,1,2,2020-01-01,a.tif,0,\nb,1,2,2020-01-01,b.tif,7,\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("build_catalog validates files and flags no-data scenes") {
  TempDir dir;
  auto syn = synth::generate_scene(synth::PlumeParams{}, 3);
  syn.scene.site_id = "p";
  const auto pos = synth::write_scene(syn.scene, syn.mask, dir.path());
  auto neg_scene = synth::generate_scene(std::nullopt, 4).scene;
  neg_scene.site_id = "n";
  for (int r = 0; r < 80; ++r)
    for (int c = 0; c < 120; ++c) neg_scene.bands.at(3, r, c) = 0.0f;
  const auto neg = synth::write_scene(neg_scene, std::nullopt, dir.path());
  const std::vector<SampleRecord> recs{pos, neg};
  write_manifest(recs, dir / "manifest.csv");

  const auto built = build_catalog(dir / "manifest.csv");
  REQUIRE(built.size() == 2);
  CHECK(built[0].scene_path == pos.scene_path);
  CHECK(built[0].mask_path == pos.mask_path);
  CHECK_FALSE(built[0].flagged_nodata);
  CHECK(built[1].flagged_nodata);

  {
    std::ifstream in(dir / "manifest.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(row.find(dir.path().string()) == std::string::npos);  // stored relative
  }

  std::filesystem::remove(neg.scene_path);
  CHECK(error_code_of([&] { build_catalog(dir / "manifest.csv"); }).has_value());
  CHECK_NOTHROW(build_catalog(dir / "manifest.csv", BuildOptions{false}));
  CHECK(error_code_of([&] { build_catalog(dir / "absent.csv"); }) == ErrorCode::IoError);
}

TEST_CASE("build_catalog rejects a mask of the wrong size") {
  TempDir dir;
  auto syn = synth::generate_scene(synth::PlumeParams{}, 3);
  auto rec = synth::write_scene(syn.scene, syn.mask, dir.path());
  raster::MaskRaster small;
  small.values = Tensor<std::uint8_t>({60, 60});
  small.values[0] = 1;
  raster::write_mask(small, *rec.mask_path);
  write_manifest(std::vector{rec}, dir / "m.csv");
  CHECK(error_code_of([&] { build_catalog(dir / "m.csv"); }) == ErrorCode::PairMismatch);
}

TEST_CASE("splits are site-disjoint and deterministic") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto recs = random_catalog(rng);
    const auto splits = assign_splits(recs, {}, static_cast<std::uint64_t>(trial));
    std::set<std::string> sites;
    for (const auto& r : recs) sites.insert(r.site_id);
    REQUIRE(splits.assignments.size() == sites.size());
    auto assigned = recs;
    apply_splits(assigned, splits);
    std::map<std::string, Split> seen;
    for (const auto& r : assigned) {
      CHECK(r.split != Split::Unassigned);
      auto [it, fresh] = seen.emplace(r.site_id, r.split);
      CHECK(it->second == r.split);
    }
    CHECK(assign_splits(recs, {}, static_cast<std::uint64_t>(trial)).assignments == splits.assignments);
  }
}

TEST_CASE("split fractions approach the ratios on balanced sites") {
  std::vector<SampleRecord> recs;
  for (int s = 0; s < 100; ++s)
    for (int i = 0; i < 4; ++i) recs.push_back(record("s" + std::to_string(s), i, i % 2));
  const auto splits = assign_splits(recs, {}, 5);
  const auto f = realized_fractions(recs, splits);
  CHECK(f.train == doctest::Approx(0.70));
  CHECK(f.val == doctest::Approx(0.15));
  CHECK(f.test == doctest::Approx(0.15));
}

TEST_CASE("split errors") {
  std::vector<SampleRecord> two{record("a", 0, 0), record("b", 0, 1), record("a", 1, 1)};
  CHECK(error_code_of([&] { assign_splits(two, {}, 0); }) == ErrorCode::TooFewSites);
  two.push_back(record("c", 0, 0));
  CHECK(error_code_of([&] { assign_splits(two, {0.5, 0.5, 0.5}, 0); }) == ErrorCode::UsageError);
  CHECK(error_code_of([&] { assign_splits(two, {1.2, -0.1, -0.1}, 0); }) == ErrorCode::UsageError);
  SplitManifest partial;
  partial.assignments = {{"a", Split::Train}};
  CHECK(error_code_of([&] { apply_splits(two, partial); }) == ErrorCode::ManifestError);
}

TEST_CASE("split manifest file round trip") {
  TempDir dir;
  std::vector<SampleRecord> recs;
  for (int s = 0; s < 10; ++s) recs.push_back(record("site" + std::to_string(s), 0, s % 2));
  const auto splits = assign_splits(recs, {0.6, 0.2, 0.2}, 99);
  write_split_manifest(splits, dir / "splits.tsv");
  const auto back = read_split_manifest(dir / "splits.tsv");
  CHECK(back.assignments == splits.assignments);
  CHECK(back.seed == 99);
  CHECK(back.ratios.train == doctest::Approx(0.6));
  CHECK(parse_split("val") == Split::Val);
  CHECK(error_code_of([] { parse_split("holdout"); }) == ErrorCode::ManifestError);
}

TEST_CASE("select_split honours the no-data flag") {
  std::vector<SampleRecord> recs{record("a", 0, 0), record("a", 1, 1), record("b", 0, 0)};
  recs[0].split = recs[1].split = Split::Train;
  recs[2].split = Split::Test;
  recs[1].flagged_nodata = true;
  CHECK(select_split(recs, Split::Train).size() == 2);
  CHECK(select_split(recs, Split::Train, true).size() == 1);
  CHECK(select_split(recs, Split::Val).empty());
}

TEST_CASE("balancing duplicates the minority class") {
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(record("s", i, 0));
  for (int i = 0; i < 3; ++i) recs.push_back(record("p", i, 1));
  const auto bal = balance_by_duplication(recs, 1);
  const auto counts = count_labels(bal);
  CHECK(counts.positive == 10);
  CHECK(counts.negative == 10);
  std::map<std::string, int> copies;
  for (const auto& r : bal)
    if (r.label == 1) ++copies[r.key()];
  REQUIRE(copies.size() == 3);
  for (const auto& [key, n] : copies) CHECK((n == 3 || n == 4));
  CHECK(bal == balance_by_duplication(recs, 1));

  // already balanced input keeps its members
  std::vector<SampleRecord> even{record("a", 0, 0), record("a", 1, 1)};
  CHECK(balance_by_duplication(even, 3).size() == 2);
  std::vector<SampleRecord> one_class{record("a", 0, 0), record("a", 1, 0)};
  CHECK(error_code_of([&] { balance_by_duplication(one_class, 0); }) == ErrorCode::CannotBalance);
}

TEST_CASE("negative matching for segmentation") {
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 6; ++i) recs.push_back(record("n", i, 0));
  recs.push_back(record("p", 0, 1, true));
  recs.push_back(record("p", 1, 1, true));
  recs.push_back(record("p", 2, 1, false));  // positive without mask is dropped
  const auto m = match_negatives(recs, 4);
  const auto counts = count_labels(m);
  CHECK(counts.positive == 2);
  CHECK(counts.negative == 2);
  CHECK(m == match_negatives(recs, 4));
  for (const auto& r : m)
    if (r.label == 1) CHECK(r.mask_path.has_value());

  std::vector<SampleRecord> negatives(recs.begin(), recs.begin() + 6);
  CHECK(match_negatives(negatives, 0).size() == 6);
}

TEST_CASE("scene source masks") {
  SceneSource source;
  source.insert("mem/a.tif", Tensor<float>({12, 8, 8}, 0.5f));
  source.insert_mask("mem/a_mask.tif", Tensor<float>({1, 8, 8}, 1.0f));
  SampleRecord neg = record("a", 0, 0);
  neg.scene_path = "mem/a.tif";
  const auto item = source.load(neg, true);
  REQUIRE(item.mask);
  CHECK(item.mask->shape() == Shape{1, 8, 8});
  CHECK(std::all_of(item.mask->vec().begin(), item.mask->vec().end(), [](float v) { return v == 0.0f; }));
  CHECK_FALSE(source.load(neg, false).mask);

  SampleRecord pos = neg;
  pos.label = 1;
  CHECK(error_code_of([&] { source.load(pos, true); }) == ErrorCode::ManifestError);
  pos.mask_path = "mem/a_mask.tif";
  CHECK((*source.load(pos, true).mask)[0] == 1.0f);

  SampleRecord missing = neg;
  missing.scene_path = "/nonexistent/z.tif";
  CHECK(error_code_of([&] { source.load(missing, false); }).has_value());
}

TEST_CASE("batch stream is identical across worker counts") {
  SceneSource source;
  synth::DatasetOptions opts;
  opts.sites = 3;
  opts.scenes_per_site = 3;
  opts.seed = 8;
  const auto recs = synth::generate_in_memory(source, opts);
  REQUIRE(recs.size() == 9);

  auto collect = [&](int workers, TargetKind target) {
    BatchStream stream(recs, 4, augment::TransformPolicy{}, 77, target, source, workers);
    CHECK(stream.batch_count() == 3);
    std::vector<Batch> out;
    while (auto b = stream.next()) out.push_back(std::move(*b));
    return out;
  };
  for (auto target : {TargetKind::Label, TargetKind::Mask}) {
    const auto one = collect(1, target);
    const auto three = collect(3, target);
    REQUIRE(one.size() == 3);
    CHECK(one.back().images.dim(0) == 1);
    std::set<std::size_t> all;
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(one[i].images == three[i].images);
      CHECK(one[i].targets == three[i].targets);
      CHECK(one[i].record_indices == three[i].record_indices);
      all.insert(one[i].record_indices.begin(), one[i].record_indices.end());
    }
    CHECK(all.size() == 9);  // each record exactly once
    CHECK(one[0].images.shape() == Shape{4, 12, 90, 90});
  }

  // labels line up with the records they came from
  BatchStream stream(recs, 9, augment::TransformPolicy::eval(), 1, TargetKind::Label, source, 1, false);
  const auto b = stream.next();
  REQUIRE(b);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(b->record_indices[i] == i);
    CHECK(b->targets[i] == static_cast<float>(recs[i].label));
  }
  CHECK_FALSE(stream.next());
}

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "plume/catalog.hpp"
#include "plume/checkpoint.hpp"
#include "plume/cli.hpp"
#include "plume/viz.hpp"
#include "test_support.hpp"

using namespace plume;
using plume::test::error_code_of;
using plume::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

}  // namespace

TEST_CASE("config text and overrides") {
  cli::RunConfig cfg;
  CHECK(cfg.get("train.max_epochs") == "30");
  cfg.load_text("# comment\ntrain.learning_rate = 0.02  # trailing\n\nmodel.tiny=true\n");
  CHECK(cfg.get_double("train.learning_rate") == 0.02);
  CHECK(cfg.get_bool("model.tiny"));
  CHECK(cfg.is_set("model.tiny"));
  CHECK_FALSE(cfg.is_set("seed"));
  cfg.set("train.learning_rate", "0.5");
  CHECK(cfg.train_config(cli::RunConfig::Task::Classify).learning_rate == 0.5);
  CHECK(cfg.train_config(cli::RunConfig::Task::Classify).batch_size == 32);
  CHECK(cfg.train_config(cli::RunConfig::Task::Segment).batch_size == 16);
  CHECK(cfg.classifier_config().block_counts == models::ClassifierConfig::make_tiny().block_counts);

  CHECK(error_code_of([&] { cfg.load_text("train.epochs = 3"); }) == ErrorCode::UsageError);
  CHECK(error_code_of([&] { cfg.load_text("just words"); }) == ErrorCode::UsageError);
  cfg.set("train.max_epochs", "many");
  CHECK(error_code_of([&] { cfg.get_int("train.max_epochs"); }) == ErrorCode::UsageError);
  cfg.set("augment.flips", "maybe");
  CHECK(error_code_of([&] { cfg.get_bool("augment.flips"); }) == ErrorCode::UsageError);
  CHECK(error_code_of([] { cli::parse_task("detect"); }) == ErrorCode::UsageError);

  cli::RunConfig rooted;
  rooted.set("data.root", "/data/x");
  rooted.set("data.manifest", "m.csv");
  CHECK(rooted.get_path("data.manifest") == fs::path("/data/x/m.csv"));
  CHECK(rooted.resolve("/abs/y") == fs::path("/abs/y"));
  CHECK(rooted.get_path("data.splits").empty());
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"split"}).code == 2);  // --out missing
  TempDir dir;
  CHECK(run({"split", "--out", p(dir / "s.json"), "--set", "nope=1"}).code == 2);
  CHECK(run({"split", "--out", p(dir / "s.json"), "--set", "novalue"}).code == 2);
  CHECK(run({"split", "--out", p(dir / "s.json")}).code == 2);  // no manifest
  CHECK(run({"split", "--out", p(dir / "s.json"), "--config", p(dir / "missing.cfg")}).code == 2);
  CHECK(run({"train", "--task", "detect"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("end to end on a synthetic data set") {
  TempDir dir;
  auto r = run({"synth", "--out", p(dir / "data"), "--seed", "5"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 32 scenes (16 positive, 16 negative)") != std::string::npos);
  const auto manifest = dir / "data" / "manifest.csv";

  r = run({"split", "--manifest", p(manifest), "--out", p(dir / "splits.tsv"), "--seed", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("sites=8 images=32") != std::string::npos);

  // config file plus a flag that overrides it
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "data.manifest = " << p(manifest) << "\n"
        << "data.splits = " << p(dir / "splits.tsv") << "\n"
        << "train.max_epochs = 7\n"
        << "augment.crop_size = 90\n";
  }
  r = run({"train", "--config", p(dir / "run.cfg"), "--tiny", "--epochs", "2", "--checkpoint", p(dir / "cls.ckpt"),
           "--log", p(dir / "cls.log")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("best_epoch=") != std::string::npos);
  {
    std::ifstream log(dir / "cls.log");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) lines += line.rfind("epoch=", 0) == 0;
    CHECK(lines == 2);
  }

  r = run({"train", "--config", p(dir / "run.cfg"), "--tiny", "--task", "segment", "--epochs", "1", "--checkpoint",
           p(dir / "seg.ckpt"), "--log", p(dir / "seg.log")});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  r = run({"eval", "--config", p(dir / "run.cfg"), "--checkpoint", p(dir / "cls.ckpt"), "--split", "val", "--report",
           p(dir / "report.json")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("confusion tp=") != std::string::npos);
  {
    std::ifstream f(dir / "report.json");
    const auto j = nlohmann::json::parse(f);
    CHECK(j.contains("accuracy"));
    CHECK(j["channel_importance"].size() == 12);
  }
  r = run({"eval", "--config", p(dir / "run.cfg"), "--checkpoint", p(dir / "seg.ckpt"), "--task", "segment"});
  CHECK_MESSAGE(r.code == 0, r.err);
  r = run({"eval", "--config", p(dir / "run.cfg"), "--checkpoint", p(dir / "seg.ckpt"), "--task", "classify"});
  CHECK(r.code == 1);  // architecture mismatch
  CHECK(run({"eval", "--config", p(dir / "run.cfg"), "--checkpoint", p(dir / "nothing.ckpt")}).code == 1);

  const auto records = catalog::build_catalog(manifest);
  const catalog::SampleRecord* positive = nullptr;
  for (const auto& rec : records)
    if (rec.label == 1) positive = &rec;
  REQUIRE(positive);
  const std::string scene = p(positive->scene_path);

  r = run({"infer", "--checkpoint", p(dir / "seg.ckpt"), "--out", p(dir / "pred"), "--overlay", scene});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("smoke_area_m2=") != std::string::npos);
  const auto stem = positive->scene_path.stem().string();
  CHECK(fs::exists(dir / "pred" / (stem + "_pred.tif")));
  CHECK(viz::read_png(dir / "pred" / (stem + "_overlay.png")).height == 120);

  r = run({"infer", "--checkpoint", p(dir / "cls.ckpt"), "--out", p(dir / "cls_pred"), "--overlay", scene,
           p(dir / "absent.tif")});
  CHECK(r.code == 1);  // one of the two scenes failed
  CHECK(r.out.find("probability=") != std::string::npos);
  CHECK(r.err.find("absent.tif") != std::string::npos);
  CHECK(fs::exists(dir / "cls_pred" / (stem + "_overlay.png")));

  for (const std::string mode : {"true_color", "false_color"}) {
    r = run({"render", "--scene", scene, "--mode", mode, "--out", p(dir / (mode + ".png")), "--stretch", "0,100"});
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(viz::read_png(dir / (mode + ".png")).width == 120);
  }
  r = run({"render", "--scene", scene, "--mode", "mask_overlay", "--out", p(dir / "m.png"), "--mask",
           p(*positive->mask_path), "--checkpoint", p(dir / "seg.ckpt")});
  CHECK_MESSAGE(r.code == 0, r.err);
  r = run({"render", "--scene", scene, "--mode", "activation_overlay", "--out", p(dir / "a.png"), "--checkpoint",
           p(dir / "cls.ckpt")});
  CHECK_MESSAGE(r.code == 0, r.err);
  CHECK(run({"render", "--scene", scene, "--mode", "activation_overlay", "--out", p(dir / "a.png")}).code == 2);
  CHECK(run({"render", "--scene", scene, "--mode", "sepia", "--out", p(dir / "a.png")}).code == 2);
  CHECK(run({"render", "--scene", scene, "--mode", "true_color", "--out", p(dir / "a.png"), "--stretch", "90,10"}).code == 2);
}

TEST_CASE("ingest converts raw containers") {
  TempDir dir;
  auto r = run({"synth", "--out", p(dir / "raw"), "--raw", "--sites", "2", "--scenes-per-site", "2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"ingest", "--raw-manifest", p(dir / "raw" / "manifest.csv"), "--out", p(dir / "canon")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("ingested 4 of 4") != std::string::npos);
  const auto recs = catalog::build_catalog(dir / "canon" / "manifest.csv");
  REQUIRE(recs.size() == 4);
  for (const auto& rec : recs) {
    const auto s = raster::read_scene_file(rec.scene_path);
    CHECK(s.height() == 120);
    CHECK(s.width() == 120);
    if (rec.mask_path) CHECK(raster::read_mask(*rec.mask_path).height() == 120);
  }

  // a row whose container is broken is reported and the rest still ingest
  {
    std::ifstream in(dir / "raw" / "manifest.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    std::ofstream junk(dir / "raw" / "junk.tar");
    junk << "not a container";
    junk.close();
    // column 4 of the first data row is its scene path
    const auto row = text.find('\n') + 1;
    std::size_t start = row;
    for (int i = 0; i < 4; ++i) start = text.find(',', start) + 1;
    text.replace(start, text.find(',', start) - start, p(dir / "raw" / "junk.tar"));
    std::ofstream out(dir / "raw" / "broken.csv");
    out << text;
  }
  r = run({"ingest", "--raw-manifest", p(dir / "raw" / "broken.csv"), "--out", p(dir / "canon2")});
  CHECK(r.code == 1);
  CHECK(r.out.find("ingested 3 of 4") != std::string::npos);
  CHECK(r.err.find("ingest:") != std::string::npos);
}

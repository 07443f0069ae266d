#include "plume/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "plume/catalog.hpp"
#include "plume/checkpoint.hpp"
#include "plume/metrics.hpp"
#include "plume/synth.hpp"
#include "plume/viz.hpp"

namespace plume::cli {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void usage(const std::string& what) { throw Error(ErrorCode::UsageError, what); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<double> parse_doubles(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(trim(item), &used));
      if (used != trim(item).size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      usage(std::string("bad number in ") + what + ": '" + item + "'");
    }
  }
  if (expected != 0 && out.size() != expected) usage(std::string(what) + " needs " + std::to_string(expected) + " values");
  return out;
}

}  // namespace

// ------------------------------------------------------------------ RunConfig

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"threads", "1"},
      {"data.root", ""},
      {"data.manifest", ""},
      {"data.splits", ""},
      {"split.ratios", "0.7,0.15,0.15"},
      {"train.task", "classify"},
      {"train.learning_rate", "0.001"},
      {"train.momentum", "0.9"},
      {"train.batch_size", "auto"},  // 32 classify, 16 segment
      {"train.max_epochs", "30"},
      {"train.selection_metric", "auto"},  // val_accuracy classify, val_iou segment
      {"augment.flips", "true"},
      {"augment.rot90", "true"},
      {"augment.crop_size", "90"},
      {"model.tiny", "false"},
      {"model.base_width", "auto"},
      {"model.block_counts", "auto"},
      {"model.depth", "auto"},
      {"output.checkpoint", "model.ckpt"},
      {"output.log", "train.log"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) usage("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) usage(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) usage("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) usage("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const { return parse_doubles(get(key), 1, key.c_str())[0]; }

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  usage(key + " must be an integer, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  usage(key + " must be true or false, got '" + v + "'");
}

fs::path RunConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  fs::path root = get("data.root");
  if (root.empty()) {
    if (const char* env = std::getenv("PLUME_DATA_DIR"); env && *env) root = env;
  }
  if (root.empty()) root = fs::current_path();
  return (fs::absolute(root) / p).lexically_normal();
}

fs::path RunConfig::get_path(const std::string& key) const { return resolve(get(key)); }

RunConfig::Task parse_task(const std::string& text) {
  if (text == "classify") return RunConfig::Task::Classify;
  if (text == "segment") return RunConfig::Task::Segment;
  usage("task must be classify or segment, got '" + text + "'");
}

training::TrainConfig RunConfig::train_config(Task task) const {
  training::TrainConfig c = task == Task::Segment ? training::TrainConfig::segmenter_defaults() : training::TrainConfig{};
  c.learning_rate = get_double("train.learning_rate");
  c.momentum = get_double("train.momentum");
  if (get("train.batch_size") != "auto") c.batch_size = get_int("train.batch_size");
  c.max_epochs = get_int("train.max_epochs");
  c.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
  if (get("train.selection_metric") != "auto") c.selection_metric = training::parse_selection_metric(get("train.selection_metric"));
  c.augmentation.enable_flips = get_bool("augment.flips");
  c.augmentation.enable_rot90 = get_bool("augment.rot90");
  c.augmentation.crop_size = get_int("augment.crop_size");
  c.workers = get_int("threads");
  c.validate();
  return c;
}

models::ClassifierConfig RunConfig::classifier_config() const {
  models::ClassifierConfig c = get_bool("model.tiny") ? models::ClassifierConfig::make_tiny() : models::ClassifierConfig{};
  if (get("model.base_width") != "auto") c.base_width = get_int("model.base_width");
  if (get("model.block_counts") != "auto") {
    c.block_counts.clear();
    for (double v : parse_doubles(get("model.block_counts"), 4, "model.block_counts")) c.block_counts.push_back(static_cast<int>(v));
  }
  return c;
}

models::SegmenterConfig RunConfig::segmenter_config() const {
  models::SegmenterConfig c = get_bool("model.tiny") ? models::SegmenterConfig::make_tiny() : models::SegmenterConfig{};
  if (get("model.base_width") != "auto") c.base_width = get_int("model.base_width");
  if (get("model.depth") != "auto") c.depth = get_int("model.depth");
  return c;
}

// ------------------------------------------------------------------ commands

namespace {

std::string stem_for(const std::string& site, raster::Timestamp ts) {
  std::string t = raster::format_timestamp(ts);
  std::erase_if(t, [](char c) { return c == '-' || c == ':'; });
  return site + "_" + t;
}

std::vector<catalog::SampleRecord> load_split_records(const RunConfig& cfg) {
  const fs::path manifest = cfg.get_path("data.manifest");
  const fs::path splits = cfg.get_path("data.splits");
  if (manifest.empty()) usage("a manifest is required (--manifest or data.manifest)");
  if (splits.empty()) usage("a split manifest is required (--splits or data.splits)");
  if (!fs::exists(splits)) usage("split manifest " + splits.string() + " does not exist");
  auto records = catalog::build_catalog(manifest);
  catalog::apply_splits(records, catalog::read_split_manifest(splits));
  return records;
}

/// Centre-crops a mask on the 10 m grid the same way scene bands are cropped.
raster::MaskRaster crop_mask(raster::MaskRaster mask, int edge) {
  const int H = mask.height(), W = mask.width();
  if (H == edge && W == edge) return mask;
  if (H < edge || W < edge) throw Error(ErrorCode::ExtentTooSmall, "mask " + shape_string(mask.values.shape()));
  Tensor<std::uint8_t> out({edge, edge});
  const int top = (H - edge) / 2, left = (W - edge) / 2;
  for (int r = 0; r < edge; ++r)
    for (int c = 0; c < edge; ++c)
      out[static_cast<std::size_t>(r) * edge + c] = mask.values[static_cast<std::size_t>(r + top) * W + c + left];
  mask.values = std::move(out);
  return mask;
}

int cmd_ingest(const fs::path& raw_manifest, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  std::ifstream in(raw_manifest);
  if (!in) throw Error(ErrorCode::IoError, raw_manifest.string() + ": cannot open");
  const auto rows = catalog::parse_manifest(in, raw_manifest.parent_path());
  fs::create_directories(out_dir / "scenes");
  std::vector<catalog::SampleRecord> written;
  int failures = 0;
  for (const auto& row : rows) {
    try {
      raster::Scene scene = raster::load_scene(row.scene_path);
      scene.site_id = row.site_id;
      scene.timestamp = row.timestamp;
      raster::validate_scene(scene);
      const std::string stem = stem_for(row.site_id, row.timestamp);
      catalog::SampleRecord r = row;
      r.scene_path = fs::absolute(out_dir / "scenes" / (stem + ".tif"));
      std::optional<raster::MaskRaster> mask;
      if (row.mask_path) {
        mask = crop_mask(raster::read_mask(*row.mask_path), scene.height());
        mask->site_id = row.site_id;
        mask->timestamp = row.timestamp;
        mask->origin = scene.origin;
        fs::create_directories(out_dir / "masks");
        r.mask_path = fs::absolute(out_dir / "masks" / (stem + "_mask.tif"));
      }
      raster::write_scene_file(scene, r.scene_path);
      if (mask) raster::write_mask(*mask, *r.mask_path);
      written.push_back(std::move(r));
    } catch (const Error& e) {
      ++failures;
      err << "ingest: " << row.key() << " (" << row.scene_path.string() << "): " << e.what() << "\n";
    }
  }
  catalog::write_manifest(written, out_dir / "manifest.csv");
  out << "ingested " << written.size() << " of " << rows.size() << " scenes into " << out_dir.string() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_split(const RunConfig& cfg, const fs::path& out_path, std::ostream& out) {
  const fs::path manifest = cfg.get_path("data.manifest");
  if (manifest.empty()) usage("a manifest is required (--manifest or data.manifest)");
  const auto r = parse_doubles(cfg.get("split.ratios"), 3, "split.ratios");
  const catalog::Ratios ratios{r[0], r[1], r[2]};
  const auto records = catalog::build_catalog(manifest, {.validate_scenes = false});
  const auto splits = catalog::assign_splits(records, ratios, std::stoull(cfg.get("seed")));
  catalog::write_split_manifest(splits, out_path);
  const auto f = catalog::realized_fractions(records, splits);
  char buf[160];
  std::snprintf(buf, sizeof buf, "train=%.4f val=%.4f test=%.4f sites=%zu images=%zu\n", f.train, f.val, f.test,
                splits.assignments.size(), records.size());
  out << buf;
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto task = parse_task(cfg.get("train.task"));
  const auto records = load_split_records(cfg);
  const auto tc = cfg.train_config(task);
  const fs::path ckpt_path = cfg.get_path("output.checkpoint");
  const fs::path log_path = cfg.get_path("output.log");
  if (!ckpt_path.parent_path().empty()) fs::create_directories(ckpt_path.parent_path());
  if (!log_path.parent_path().empty()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw Error(ErrorCode::IoError, log_path.string() + ": cannot open for writing");
  // each epoch is flushed as it completes so a diverged run keeps its history
  const auto on_epoch = [&](const training::EpochRecord& e) {
    const std::string line = training::TrainLog{{e}, 0}.to_text();
    log << line << std::flush;
    out << line << std::flush;
  };
  catalog::SceneSource source;
  training::TrainResult result;
  if (task == RunConfig::Task::Classify) {
    result = training::train_classifier(training::classifier_data(records, tc.seed), tc, cfg.classifier_config(),
                                        source, on_epoch);
  } else {
    result = training::train_segmenter(training::segmenter_data(records, tc.seed), tc, cfg.segmenter_config(), source,
                                       on_epoch);
  }
  models::save_checkpoint(result.checkpoint, ckpt_path);
  out << "best_epoch=" << result.log.best_epoch << " val_metric=" << result.checkpoint.manifest.metrics["val_metric"].dump()
      << " checkpoint=" << ckpt_path.string() << "\n";
  return 0;
}

std::vector<double> segmenter_importance(models::Segmenter<float>& model, std::span<const catalog::SampleRecord> recs,
                                         catalog::SceneSource& source, int crop) {
  std::vector<Tensor<float>> inputs, targets;
  for (const auto& r : recs) {
    const auto item = source.load(r, true);
    const auto off = augment::center_offset(item.scene->dim(1), item.scene->dim(2), crop);
    inputs.push_back(augment::crop_at(*item.scene, off, crop));
    targets.push_back(augment::crop_at(*item.mask, off, crop).reshaped({1, 1, crop, crop}));
  }
  return metrics::channel_gradient_importance(model, std::span<const Tensor<float>>(inputs),
                                              std::span<const Tensor<float>>(targets));
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const std::string& split_name,
             const std::string& task_name, const fs::path& report_path, std::ostream& out) {
  auto loaded = models::load_checkpoint(checkpoint);
  const bool is_seg = std::holds_alternative<models::Segmenter<float>>(loaded.model);
  if (!task_name.empty() && (parse_task(task_name) == RunConfig::Task::Segment) != is_seg) {
    throw Error(ErrorCode::ArchMismatch, "checkpoint holds a " + loaded.manifest.architecture + ", not a model for task " + task_name);
  }
  const auto split = catalog::parse_split(split_name);
  const auto records = load_split_records(cfg);
  const int crop = cfg.get_int("augment.crop_size");
  catalog::SceneSource source;
  metrics::MetricsReport report;
  if (is_seg) {
    auto& model = std::get<models::Segmenter<float>>(loaded.model);
    const auto samples = training::segmentation_samples(records, split, std::stoull(cfg.get("seed")));
    report = metrics::evaluate_segmentation(model, samples, source, crop);
    report.channel_importance = segmenter_importance(model, samples, source, crop);
  } else {
    auto& model = std::get<models::Classifier<float>>(loaded.model);
    const auto samples = catalog::select_split(records, split);
    report = metrics::evaluate_classifier(model, samples, source, crop);
    report.channel_importance = metrics::channel_importance(model, samples, source, crop);
  }
  const std::string json = nlohmann::json(report).dump(2);
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    f << json << "\n";
    if (!f) throw Error(ErrorCode::IoError, report_path.string() + ": write failed");
  }
  out << json << "\n";
  char buf[200];
  const auto& c = report.confusion;
  std::snprintf(buf, sizeof buf, "confusion tp=%llu tn=%llu fp=%llu fn=%llu accuracy=%.6f\n",
                static_cast<unsigned long long>(c.tp), static_cast<unsigned long long>(c.tn),
                static_cast<unsigned long long>(c.fp), static_cast<unsigned long long>(c.fn), report.accuracy);
  out << buf;
  return 0;
}

int cmd_infer(const fs::path& checkpoint, const std::vector<std::string>& scenes, const fs::path& out_dir,
              bool overlay, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto loaded = models::load_checkpoint(checkpoint);
  fs::create_directories(out_dir);
  int failures = 0;
  for (const std::string& name : scenes) {
    const fs::path path = cfg.resolve(name);
    try {
      const raster::Scene scene = raster::read_scene_file(path);
      const std::string stem = path.stem().string();
      const Tensor<float> x = scene.bands.reshaped({1, scene.bands.dim(0), scene.height(), scene.width()});
      if (auto* seg = std::get_if<models::Segmenter<float>>(&loaded.model)) {
        const Tensor<float> logits = seg->forward(x, nn::Mode::Eval);
        raster::MaskRaster mask{scene.site_id, scene.timestamp,
                                metrics::binarize_logits(logits.span(), scene.height(), scene.width()), scene.origin};
        raster::write_mask(mask, out_dir / (stem + "_pred.tif"));
        const std::size_t pixels = mask.smoke_pixels();
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.0f", static_cast<double>(pixels) * scene.pixel_size * scene.pixel_size);
        out << path.string() << " smoke_pixels=" << pixels << " smoke_area_m2=" << buf << "\n";
        if (overlay) {
          viz::write_png(viz::overlay_masks(viz::false_color(scene), std::nullopt, mask.values),
                         out_dir / (stem + "_overlay.png"));
        }
      } else {
        auto& cls = std::get<models::Classifier<float>>(loaded.model);
        const float logit = cls.forward(x, nn::Mode::Eval)[0];
        char buf[128];
        std::snprintf(buf, sizeof buf, " logit=%.6f probability=%.6f smoke=%d", logit, 1.0 / (1.0 + std::exp(-logit)),
                      logit > 0 ? 1 : 0);
        out << path.string() << buf << "\n";
        if (overlay) {
          const auto act = models::extract_activation_map(cls, scene.bands);
          viz::write_png(viz::activation_overlay(viz::false_color(scene), act.full), out_dir / (stem + "_overlay.png"));
        }
      }
    } catch (const Error& e) {
      ++failures;
      err << "infer: " << path.string() << ": " << e.what() << "\n";
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_synth(const fs::path& out_dir, const synth::DatasetOptions& options, std::ostream& out) {
  const auto records = synth::generate_dataset(out_dir, options);
  const auto counts = catalog::count_labels(records);
  out << "wrote " << records.size() << " scenes (" << counts.positive << " positive, " << counts.negative
      << " negative); manifest " << (out_dir / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_render(const RunConfig& cfg, const fs::path& scene_path, const std::string& mode_name, const fs::path& out_path,
               const fs::path& mask_path, const fs::path& pred_path, const fs::path& checkpoint,
               const std::string& stretch_text) {
  const auto mode = viz::parse_render_mode(mode_name);
  const auto st = parse_doubles(stretch_text, 2, "--stretch");
  const viz::Stretch stretch{st[0], st[1]};
  const raster::Scene scene = raster::read_scene_file(cfg.resolve(scene_path));
  viz::RgbImage image;
  switch (mode) {
    case viz::RenderMode::TrueColor: image = viz::true_color(scene, stretch); break;
    case viz::RenderMode::FalseColor: image = viz::false_color(scene, stretch); break;
    case viz::RenderMode::MaskOverlay: {
      std::optional<Tensor<std::uint8_t>> gt, pred;
      if (!mask_path.empty()) gt = raster::read_mask(cfg.resolve(mask_path)).values;
      if (!pred_path.empty()) pred = raster::read_mask(cfg.resolve(pred_path)).values;
      if (!pred && !checkpoint.empty()) {
        auto loaded = models::load_checkpoint(cfg.resolve(checkpoint));
        auto* seg = std::get_if<models::Segmenter<float>>(&loaded.model);
        if (!seg) usage("mask_overlay needs a segmenter checkpoint");
        const auto logits =
            seg->forward(scene.bands.reshaped({1, scene.bands.dim(0), scene.height(), scene.width()}), nn::Mode::Eval);
        pred = metrics::binarize_logits(logits.span(), scene.height(), scene.width());
      }
      image = viz::overlay_masks(viz::true_color(scene, stretch), gt, pred);
      break;
    }
    case viz::RenderMode::ActivationOverlay: {
      if (checkpoint.empty()) usage("activation_overlay needs --checkpoint");
      auto loaded = models::load_checkpoint(cfg.resolve(checkpoint));
      auto* cls = std::get_if<models::Classifier<float>>(&loaded.model);
      if (!cls) usage("activation_overlay needs a classifier checkpoint");
      image = viz::activation_overlay(viz::true_color(scene, stretch), models::extract_activation_map(*cls, scene.bands).full);
      break;
    }
  }
  viz::write_png(image, out_path);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Smoke plume detection on 12-band Sentinel-2 scenes", "plume"};
  app.require_subcommand(1);

  std::string config_path, seed, threads;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Config file (key.path = value lines)");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--threads", threads, "Worker and math-library threads");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.max_epochs=5");

  std::string manifest, splits, out_dir, out_path, task, checkpoint, split_name = "test", report, mode, mask, pred;
  std::string ratios, lr, epochs, batch, log_path, stretch = "2,98";
  std::vector<std::string> scene_files;
  bool overlay = false, tiny = false, no_masks = false, raw = false;
  synth::DatasetOptions synth_opts;

  auto* ingest = app.add_subcommand("ingest", "Convert raw per-band rasters into canonical scene files");
  ingest->add_option("--raw-manifest", manifest, "Manifest whose scene paths point at raw acquisitions")->required();
  ingest->add_option("--out", out_dir, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Assign sites to train/val/test");
  split->add_option("--manifest", manifest, "Catalog manifest CSV");
  split->add_option("--out", out_path, "Split manifest to write")->required();
  split->add_option("--ratios", ratios, "train,val,test fractions");

  auto* train = app.add_subcommand("train", "Train a classifier or segmenter");
  train->add_option("--task", task, "classify or segment");
  train->add_option("--manifest", manifest, "Catalog manifest CSV");
  train->add_option("--splits", splits, "Split manifest");
  train->add_option("--checkpoint", checkpoint, "Checkpoint to write");
  train->add_option("--log", log_path, "Training log to write");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--epochs", epochs, "Maximum epochs");
  train->add_option("--batch-size", batch, "Batch size");
  train->add_flag("--tiny", tiny, "Use the reduced test architecture");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--task", task, "classify or segment (checked against the checkpoint)");
  eval->add_option("--manifest", manifest, "Catalog manifest CSV");
  eval->add_option("--splits", splits, "Split manifest");
  eval->add_option("--split", split_name, "train, val or test");
  eval->add_option("--report", report, "Also write the JSON report here");

  auto* infer = app.add_subcommand("infer", "Predict smoke on scene files");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint to use")->required();
  infer->add_option("--out", out_dir, "Output directory")->required();
  infer->add_flag("--overlay", overlay, "Write overlay PNGs");
  infer->add_option("scenes", scene_files, "Scene files")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labelled data set");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--sites", synth_opts.sites, "Number of sites");
  synth_cmd->add_option("--scenes-per-site", synth_opts.scenes_per_site, "Scenes per site");
  synth_cmd->add_option("--positive-fraction", synth_opts.positive_fraction, "Fraction of scenes with a plume");
  synth_cmd->add_flag("--no-masks", no_masks, "Omit segmentation masks");
  synth_cmd->add_flag("--raw", raw, "Write raw native-resolution acquisitions for ingestion");

  auto* render = app.add_subcommand("render", "Render a scene to PNG");
  render->add_option("--scene", out_path, "Canonical scene file")->required();
  render->add_option("--mode", mode, "true_color, false_color, mask_overlay or activation_overlay")->required();
  render->add_option("--out", out_dir, "PNG to write")->required();
  render->add_option("--mask", mask, "Ground-truth mask (mask_overlay)");
  render->add_option("--pred", pred, "Predicted mask (mask_overlay)");
  render->add_option("--checkpoint", checkpoint, "Model for predictions or activations");
  render->add_option("--stretch", stretch, "low,high percentiles");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<const char*> argv{"plume"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) usage("--set expects key=value, got '" + kv + "'");
      cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!seed.empty()) cfg.set("seed", seed);
    if (!threads.empty()) cfg.set("threads", threads);
    if (!manifest.empty()) cfg.set("data.manifest", manifest);
    if (!splits.empty()) cfg.set("data.splits", splits);
    if (!ratios.empty()) cfg.set("split.ratios", ratios);
    if (!task.empty() && !eval->parsed()) cfg.set("train.task", task);
    if (!lr.empty()) cfg.set("train.learning_rate", lr);
    if (!epochs.empty()) cfg.set("train.max_epochs", epochs);
    if (!batch.empty()) cfg.set("train.batch_size", batch);
    if (tiny) cfg.set("model.tiny", "true");
    if (!checkpoint.empty() && train->parsed()) cfg.set("output.checkpoint", checkpoint);
    if (!log_path.empty()) cfg.set("output.log", log_path);
    nn::set_compute_threads(cfg.get_int("threads"));
    try {
      std::stoull(cfg.get("seed"));
    } catch (const std::exception&) {
      usage("seed must be a non-negative integer");
    }

    if (ingest->parsed()) return cmd_ingest(cfg.resolve(manifest), cfg.resolve(out_dir), out, err);
    if (split->parsed()) return cmd_split(cfg, cfg.resolve(out_path), out);
    if (train->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, cfg.resolve(checkpoint), split_name, task, report.empty() ? fs::path() : cfg.resolve(report), out);
    if (infer->parsed()) return cmd_infer(cfg.resolve(checkpoint), scene_files, cfg.resolve(out_dir), overlay, cfg, out, err);
    if (synth_cmd->parsed()) {
      synth_opts.seed = std::stoull(cfg.get("seed"));
      synth_opts.with_masks = !no_masks;
      synth_opts.raw_containers = raw;
      return cmd_synth(cfg.resolve(out_dir), synth_opts, out);
    }
    if (render->parsed()) {
      return cmd_render(cfg, out_path, mode, cfg.resolve(out_dir), mask, pred, checkpoint, stretch);
    }
  } catch (const Error& e) {
    err << "plume: " << e.what() << "\n";
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "plume: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace plume::cli

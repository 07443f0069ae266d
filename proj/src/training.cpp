#include "plume/training.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

namespace plume::training {

std::string_view to_string(SelectionMetric m) {
  return m == SelectionMetric::ValAccuracy ? "val_accuracy" : "val_iou";
}

SelectionMetric parse_selection_metric(std::string_view text) {
  if (text == "val_accuracy") return SelectionMetric::ValAccuracy;
  if (text == "val_iou") return SelectionMetric::ValIou;
  throw Error(ErrorCode::UsageError, "selection metric must be val_accuracy or val_iou, got '" + std::string(text) + "'");
}

TrainConfig TrainConfig::segmenter_defaults() {
  TrainConfig c;
  c.batch_size = 16;
  c.selection_metric = SelectionMetric::ValIou;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw Error(ErrorCode::UsageError, "learning_rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw Error(ErrorCode::UsageError, "momentum must lie in [0, 1)");
  if (batch_size <= 0) throw Error(ErrorCode::UsageError, "batch_size must be positive");
  if (max_epochs <= 0) throw Error(ErrorCode::UsageError, "max_epochs must be positive");
  if (workers <= 0) throw Error(ErrorCode::UsageError, "workers must be positive");
  if (augmentation.crop_size <= 0) throw Error(ErrorCode::UsageError, "crop size must be positive");
}

std::string TrainLog::to_text(bool include_timing) const {
  std::string out;
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "epoch=%d train_loss=%.9g", e.epoch, e.train_loss);
    out += buf;
    if (e.val_metric) {
      std::snprintf(buf, sizeof buf, " val_metric=%.9g", *e.val_metric);
      out += buf;
    } else {
      out += " val_metric=undefined";
    }
    if (include_timing) {
      std::snprintf(buf, sizeof buf, " wall_seconds=%.3f", e.wall_seconds);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

TrainLog TrainLog::parse(const std::string& text) {
  TrainLog log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord e;
    std::istringstream fields(line);
    std::string kv;
    while (fields >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::FormatError, "bad log field '" + kv + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "epoch") e.epoch = std::stoi(value);
      else if (key == "train_loss") e.train_loss = std::stod(value);
      else if (key == "val_metric") e.val_metric = value == "undefined" ? std::nullopt : std::optional(std::stod(value));
      else if (key == "wall_seconds") e.wall_seconds = std::stod(value);
    }
    log.epochs.push_back(e);
  }
  return log;
}

TrainData classifier_data(std::span<const catalog::SampleRecord> records, std::uint64_t seed) {
  TrainData d;
  d.train = catalog::balance_by_duplication(catalog::select_split(records, catalog::Split::Train, true), seed);
  d.val = catalog::select_split(records, catalog::Split::Val);
  return d;
}

std::vector<catalog::SampleRecord> segmentation_samples(std::span<const catalog::SampleRecord> records,
                                                        catalog::Split split, std::uint64_t seed, bool exclude_flagged) {
  return catalog::match_negatives(catalog::select_split(records, split, exclude_flagged),
                                  seed + static_cast<std::uint64_t>(split));
}

TrainData segmenter_data(std::span<const catalog::SampleRecord> records, std::uint64_t seed) {
  TrainData d;
  d.train = segmentation_samples(records, catalog::Split::Train, seed, true);
  d.val = segmentation_samples(records, catalog::Split::Val, seed);
  return d;
}

namespace {

struct Validation {
  std::optional<double> value;
  metrics::MetricsReport report;
};

Validation validate(models::Classifier<float>& model, const TrainConfig& cfg, const TrainData& data,
                    catalog::SceneSource& source) {
  Validation v;
  v.report = metrics::evaluate_classifier(model, data.val, source, cfg.augmentation.crop_size);
  v.value = v.report.accuracy;
  return v;
}

Validation validate(models::Segmenter<float>& model, const TrainConfig& cfg, const TrainData& data,
                    catalog::SceneSource& source) {
  Validation v;
  v.report = metrics::evaluate_segmentation(model, data.val, source, cfg.augmentation.crop_size);
  v.value = cfg.selection_metric == SelectionMetric::ValIou ? v.report.iou_per_image_mean
                                                             : std::optional(v.report.accuracy);
  return v;
}

template <typename Model, typename Arch>
TrainResult run_training(const TrainData& data, const TrainConfig& cfg, const Arch& arch, catalog::TargetKind target,
                         catalog::SceneSource& source, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw Error(ErrorCode::EmptyEvaluation, "training set is empty");
  if (data.val.empty()) throw Error(ErrorCode::EmptyEvaluation, "validation set is empty");

  Model model(arch, cfg.seed);
  auto params = model.params();
  SgdMomentum<float> optimizer(cfg.learning_rate, cfg.momentum);
  augment::Rng epoch_seeds(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  std::vector<models::NamedTensor> best_tensors;
  std::optional<double> best_value;
  std::int64_t best_step = 0;
  nlohmann::json best_report;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    catalog::BatchStream stream(data.train, cfg.batch_size, cfg.augmentation, epoch_seeds(), target, source,
                                cfg.workers, true);
    double loss_sum = 0;
    std::size_t seen = 0;
    Tensor<float> grad;
    while (auto batch = stream.next()) {
      nn::zero_grads(params);
      const Tensor<float> logits = model.forward(batch->images, nn::Mode::Train);
      const double loss = bce_with_logits(logits, batch->targets, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::TrainingDiverged, "loss became " + std::to_string(loss) + " in epoch " + std::to_string(epoch));
      }
      const auto n = static_cast<std::size_t>(batch->images.dim(0));
      loss_sum += loss * static_cast<double>(n);
      seen += n;
      model.backward(grad);
      optimizer.step(params);
    }

    const Validation val = validate(model, cfg, data, source);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.val_metric = val.value;
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    // A defined metric always beats an undefined one; ties keep the earlier epoch.
    const bool better = epoch == 1 || (val.value && (!best_value || *val.value > *best_value));
    if (better) {
      best_value = val.value;
      best_tensors = models::snapshot_tensors(model);
      best_step = optimizer.steps();
      best_report = val.report;
      result.log.best_epoch = epoch;
    }
  }

  models::Manifest manifest = models::make_manifest(model);
  manifest.training_step = best_step;
  manifest.metrics = {{"selection_metric", to_string(cfg.selection_metric)},
                      {"best_epoch", result.log.best_epoch},
                      {"val_metric", best_value ? nlohmann::json(*best_value) : nlohmann::json(nullptr)},
                      {"val_report", best_report}};
  result.checkpoint = {std::move(manifest), std::move(best_tensors)};
  return result;
}

}  // namespace

TrainResult train_classifier(const TrainData& data, const TrainConfig& cfg, const models::ClassifierConfig& arch,
                             catalog::SceneSource& source, const EpochCallback& on_epoch) {
  if (cfg.selection_metric != SelectionMetric::ValAccuracy) {
    throw Error(ErrorCode::UsageError, "the classifier can only be selected on val_accuracy");
  }
  return run_training<models::Classifier<float>>(data, cfg, arch, catalog::TargetKind::Label, source, on_epoch);
}

TrainResult train_segmenter(const TrainData& data, const TrainConfig& cfg, const models::SegmenterConfig& arch,
                            catalog::SceneSource& source, const EpochCallback& on_epoch) {
  return run_training<models::Segmenter<float>>(data, cfg, arch, catalog::TargetKind::Mask, source, on_epoch);
}

}  // namespace plume::training

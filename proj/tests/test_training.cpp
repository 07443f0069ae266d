#include <cmath>
#include <random>

#include "doctest.h"
#include "plume/synth.hpp"
#include "plume/training.hpp"
#include "test_support.hpp"

using namespace plume;
using namespace plume::training;
using plume::test::error_code_of;

namespace {

// Sites 0..n-3 train, n-2 val, n-1 test.
std::vector<catalog::SampleRecord> split_dataset(catalog::SceneSource& source, int sites, int per_site,
                                                 std::uint64_t seed) {
  synth::DatasetOptions opts;
  opts.sites = sites;
  opts.scenes_per_site = per_site;
  opts.seed = seed;
  auto recs = synth::generate_in_memory(source, opts);
  for (auto& r : recs) {
    const int s = std::stoi(r.site_id.substr(4));
    r.split = s < sites - 2 ? catalog::Split::Train : s == sites - 2 ? catalog::Split::Val : catalog::Split::Test;
  }
  return recs;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  return cfg;
}

double naive_bce(double z, double y) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return -(y * std::log(s) + (1 - y) * std::log(1 - s));
}

}  // namespace

TEST_CASE("bce_with_logits values") {
  const std::vector<double> z0{0.0}, one{1.0};
  CHECK(bce_with_logits<double>(z0, one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const std::vector<double> big{50.0};
  CHECK(bce_with_logits<double>(big, one) < 1e-20);
  const std::vector<double> neg{-800.0};
  CHECK(bce_with_logits<double>(neg, one) == doctest::Approx(800.0));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-15, 15);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> z(500), y(500);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = u(rng), y[i] = coin(rng) ? 1.0 : 0.0;
  double naive = 0;
  for (std::size_t i = 0; i < z.size(); ++i) naive += naive_bce(z[i], y[i]);
  CHECK(std::abs(bce_with_logits<double>(z, y) - naive / 500.0) < 1e-9);
  for (std::size_t i = 0; i < 50; ++i) {
    const std::vector<double> zi{z[i]}, yi{y[i]};
    CHECK(std::abs(bce_with_logits<double>(zi, yi) - naive_bce(z[i], y[i])) < 1e-9);
  }
}

TEST_CASE("bce_with_logits gradient") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-6, 6);
  std::bernoulli_distribution coin(0.5);
  const std::size_t n = 200;
  std::vector<double> z(n), y(n), g(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = u(rng), y[i] = coin(rng) ? 1.0 : 0.0;
  bce_with_logits<double>(z, y, g);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(g[i] * n == doctest::Approx(1.0 / (1.0 + std::exp(-z[i])) - y[i]).epsilon(1e-12));
    const double keep = z[i];
    z[i] = keep + 1e-4;
    const double up = bce_with_logits<double>(z, y);
    z[i] = keep - 1e-4;
    const double down = bce_with_logits<double>(z, y);
    z[i] = keep;
    const double fd = (up - down) / 2e-4;
    worst = std::max(worst, std::abs(fd - g[i]) / std::abs(g[i]));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("bce_with_logits errors") {
  const std::vector<float> z{0.1f, 0.2f}, bad{0.0f, 0.5f}, short_y{1.0f};
  CHECK(error_code_of([&] { bce_with_logits<float>(z, bad); }) == ErrorCode::InvalidTarget);
  CHECK(error_code_of([&] { bce_with_logits<float>(z, short_y); }) == ErrorCode::ShapeMismatch);
  const std::vector<float> none;
  CHECK(error_code_of([&] { bce_with_logits<float>(none, none); }) == ErrorCode::EmptyEvaluation);
  Tensor<float> a({2, 1}), b({1, 2});
  CHECK(error_code_of([&] { bce_with_logits(a, b); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("sgd momentum step") {
  std::vector<double> w{0.0}, v{0.0};
  const std::vector<double> g{1.0};
  sgd_momentum_step<double>(w, v, g, 0.1, 0.9);
  CHECK(w[0] == doctest::Approx(-0.1));
  sgd_momentum_step<double>(w, v, g, 0.1, 0.9);
  CHECK(w[0] == doctest::Approx(-0.29));

  std::vector<double> w2{3.0, -1.0}, v2{0.0, 0.0};
  const std::vector<double> zero{0.0, 0.0};
  sgd_momentum_step<double>(w2, v2, zero, 0.5, 0.9);
  CHECK(w2 == std::vector<double>{3.0, -1.0});

  std::vector<double> w3{1.0, 2.0}, v3{5.0, 5.0};
  const std::vector<double> g3{0.5, -1.0};
  sgd_momentum_step<double>(w3, v3, g3, 0.1, 0.0);
  CHECK(w3[0] == doctest::Approx(0.95));
  CHECK(w3[1] == doctest::Approx(2.1));

  // velocity is affine in g for a shared v: v(a*g1 + b*g2) = a*v(g1) + b*v(g2) + (1-a-b)*mu*v
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = u(rng), b = u(rng), mu = 0.9;
    std::vector<double> v0(4), g1(4), g2(4), mix(4);
    for (int i = 0; i < 4; ++i) v0[i] = u(rng), g1[i] = u(rng), g2[i] = u(rng), mix[i] = a * g1[i] + b * g2[i];
    auto velocity = [&](const std::vector<double>& g) {
      std::vector<double> w(4, 0.0), v = v0;
      sgd_momentum_step<double>(w, v, g, 0.1, mu);
      return v;
    };
    const auto vm = velocity(mix), v1 = velocity(g1), v2b = velocity(g2);
    for (int i = 0; i < 4; ++i) CHECK(vm[i] == doctest::Approx(a * v1[i] + b * v2b[i] + (1 - a - b) * mu * v0[i]));
  }
}

TEST_CASE("optimizer skips buffers") {
  nn::Param<float> weight, buffer;
  weight.init_shape("w", {2});
  buffer.init_shape("b", {2}, false);
  weight.grad.fill(1.0f);
  buffer.grad.fill(1.0f);
  SgdMomentum<float> opt(0.5, 0.0);
  opt.step({&weight, &buffer});
  CHECK(weight.value[0] == -0.5f);
  CHECK(buffer.value[0] == 0.0f);
  CHECK(opt.steps() == 1);
}

TEST_CASE("config validation and log format") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.momentum = 1.0;
  CHECK(error_code_of([&] { cfg.validate(); }) == ErrorCode::UsageError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK(error_code_of([&] { cfg.validate(); }) == ErrorCode::UsageError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1;
  CHECK(error_code_of([&] { cfg.validate(); }) == ErrorCode::UsageError);
  CHECK(TrainConfig::segmenter_defaults().batch_size == 16);
  CHECK(parse_selection_metric("val_iou") == SelectionMetric::ValIou);
  CHECK(error_code_of([] { parse_selection_metric("loss"); }) == ErrorCode::UsageError);

  TrainLog log;
  log.epochs = {{1, 0.5, 0.75, 1.25}, {2, 0.25, std::nullopt, 2.0}};
  const std::string text = log.to_text();
  CHECK(text == "epoch=1 train_loss=0.5 val_metric=0.75 wall_seconds=1.250\n"
                "epoch=2 train_loss=0.25 val_metric=undefined wall_seconds=2.000\n");
  const auto back = TrainLog::parse(text);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[0].val_metric == 0.75);
  CHECK_FALSE(back.epochs[1].val_metric);
  CHECK(back.epochs[1].wall_seconds == 2.0);
}

TEST_CASE("training data assembly") {
  catalog::SceneSource source;
  auto recs = split_dataset(source, 6, 4, 1);
  recs[0].flagged_nodata = true;
  const auto cls = classifier_data(recs, 3);
  const auto counts = catalog::count_labels(cls.train);
  CHECK(counts.positive == counts.negative);
  for (const auto& r : cls.train) {
    CHECK(r.split == catalog::Split::Train);
    CHECK_FALSE(r.flagged_nodata);
  }
  CHECK(cls.val.size() == 4);

  const auto seg = segmenter_data(recs, 3);
  const auto sc = catalog::count_labels(seg.train);
  CHECK(sc.positive == sc.negative);
  CHECK(segmentation_samples(recs, catalog::Split::Val, 3) == seg.val);
}

TEST_CASE("training runs are deterministic and select their best epoch") {
  catalog::SceneSource source;
  const auto recs = split_dataset(source, 5, 4, 2);
  const auto data = classifier_data(recs, 1);
  const auto cfg = small_config();
  std::vector<int> seen;
  const auto a = train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source,
                                  [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  const auto b = train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source);
  CHECK(seen == std::vector<int>{1, 2, 3});
  CHECK(a.log.to_text(false) == b.log.to_text(false));
  CHECK(a.checkpoint.tensors == b.checkpoint.tensors);

  const auto& best = a.log.epochs[static_cast<std::size_t>(a.log.best_epoch - 1)];
  for (const auto& e : a.log.epochs) CHECK(*e.val_metric <= *best.val_metric);
  CHECK(a.checkpoint.manifest.metrics["best_epoch"] == a.log.best_epoch);
  CHECK(a.checkpoint.manifest.architecture == models::kClassifierArch);

  // the selected checkpoint reproduces its logged validation metric
  models::Classifier<float> model(models::ClassifierConfig::make_tiny(), 0);
  models::restore_tensors(model, a.checkpoint.tensors);
  const auto report = metrics::evaluate_classifier(model, data.val, source);
  CHECK(std::abs(report.accuracy - a.checkpoint.manifest.metrics["val_metric"].get<double>()) < 1e-6);

  auto other = cfg;
  other.seed = 6;
  CHECK(train_classifier(data, other, models::ClassifierConfig::make_tiny(), source).log.to_text(false) !=
        a.log.to_text(false));
}

TEST_CASE("zero learning rate leaves weights and loss unchanged") {
  catalog::SceneSource source;
  const auto recs = split_dataset(source, 4, 4, 3);
  const auto data = classifier_data(recs, 1);
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.batch_size = 64;  // one batch per epoch
  cfg.augmentation = {false, false, 120, augment::CropMode::TrainRandom};
  const auto result = train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source);
  models::Classifier<float> initial(models::ClassifierConfig::make_tiny(), cfg.seed);
  const auto start = models::snapshot_tensors(initial);
  const auto params = initial.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->trainable) CHECK(result.checkpoint.tensors[i] == start[i]);
  }
  const double first = result.log.epochs[0].train_loss;
  for (const auto& e : result.log.epochs) CHECK(e.train_loss == doctest::Approx(first).epsilon(1e-6));
}

TEST_CASE("fifty steps on one batch halve the loss") {
  catalog::SceneSource source;
  synth::DatasetOptions opts;
  opts.sites = 2;
  opts.scenes_per_site = 4;
  opts.seed = 4;
  const auto recs = synth::generate_in_memory(source, opts);
  catalog::BatchStream stream(recs, 8, augment::TransformPolicy::eval(), 0, catalog::TargetKind::Label, source, 1,
                              false);
  const auto batch = stream.next();
  REQUIRE(batch);
  models::Classifier<float> model(models::ClassifierConfig::make_tiny(), 11);
  auto params = model.params();
  SgdMomentum<float> opt(0.01, 0.9);
  Tensor<float> grad;
  double initial = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    nn::zero_grads(params);
    const auto logits = model.forward(batch->images, nn::Mode::Train);
    last = bce_with_logits(logits, batch->targets, &grad);
    if (step == 0) initial = last;
    model.backward(grad);
    opt.step(params);
  }
  CHECK(last <= 0.5 * initial);
}

TEST_CASE("training error paths") {
  catalog::SceneSource source;
  const auto recs = split_dataset(source, 4, 4, 5);
  auto data = classifier_data(recs, 1);
  auto cfg = small_config();

  cfg.learning_rate = 1e30;
  cfg.max_epochs = 2;
  try {
    train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TrainingDiverged);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }

  cfg = small_config();
  cfg.selection_metric = SelectionMetric::ValIou;
  CHECK(error_code_of([&] { train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source); }) ==
        ErrorCode::UsageError);
  cfg = small_config();
  data.val.clear();
  CHECK(error_code_of([&] { train_classifier(data, cfg, models::ClassifierConfig::make_tiny(), source); }) ==
        ErrorCode::EmptyEvaluation);
}

TEST_CASE("segmenter training selects on IoU and reproduces it") {
  catalog::SceneSource source;
  const auto recs = split_dataset(source, 5, 4, 6);
  const auto data = segmenter_data(recs, 2);
  auto cfg = TrainConfig::segmenter_defaults();
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 3;
  const auto result = train_segmenter(data, cfg, models::SegmenterConfig::make_tiny(), source);
  CHECK(result.checkpoint.manifest.architecture == models::kSegmenterArch);
  CHECK(result.checkpoint.manifest.metrics["selection_metric"] == "val_iou");
  models::Segmenter<float> model(models::SegmenterConfig::make_tiny(), 0);
  models::restore_tensors(model, result.checkpoint.tensors);
  const auto report = metrics::evaluate_segmentation(model, data.val, source);
  const auto& logged = result.checkpoint.manifest.metrics["val_metric"];
  if (logged.is_null()) {
    CHECK_FALSE(report.iou_per_image_mean);
  } else {
    REQUIRE(report.iou_per_image_mean);
    CHECK(std::abs(*report.iou_per_image_mean - logged.get<double>()) < 1e-6);
  }
}

TEST_CASE("segmenter trained on negatives only predicts no smoke") {
  catalog::SceneSource source;
  synth::DatasetOptions opts;
  opts.sites = 4;
  opts.scenes_per_site = 2;
  opts.positive_fraction = 0.0;
  opts.seed = 7;
  auto recs = synth::generate_in_memory(source, opts);
  for (auto& r : recs) r.split = r.site_id == "site003" ? catalog::Split::Val : catalog::Split::Train;
  const auto data = segmenter_data(recs, 1);
  CHECK(data.train.size() == 6);

  auto cfg = TrainConfig::segmenter_defaults();
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 15;
  cfg.seed = 2;
  {
    // IoU is undefined in every epoch; ties keep the first
    auto one = cfg;
    one.max_epochs = 2;
    const auto r = train_segmenter(data, one, models::SegmenterConfig::make_tiny(), source);
    CHECK(r.log.best_epoch == 1);
    CHECK(r.checkpoint.manifest.metrics["val_metric"].is_null());
  }
  cfg.selection_metric = SelectionMetric::ValAccuracy;
  const auto result = train_segmenter(data, cfg, models::SegmenterConfig::make_tiny(), source);
  models::Segmenter<float> model(models::SegmenterConfig::make_tiny(), 0);
  models::restore_tensors(model, result.checkpoint.tensors);
  const auto report = metrics::evaluate_segmentation(model, recs, source);
  CHECK_FALSE(report.iou_per_image_mean);
  CHECK(report.confusion.fp == 0);
  CHECK(report.accuracy == 1.0);
}

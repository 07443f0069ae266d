#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plume/catalog.hpp"
#include "plume/checkpoint.hpp"
#include "plume/metrics.hpp"
#include "plume/models.hpp"

namespace plume::training {

/// Mean of max(z,0) - z*y + log1p(exp(-|z|)). When `grad` is given it receives
/// d(loss)/dz = (sigmoid(z) - y) / n. Targets must be exactly 0 or 1.
template <typename T>
double bce_with_logits(std::span<const T> z, std::span<const T> y, std::span<T> grad = {}) {
  if (z.size() != y.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(z.size()) + " logits vs " + std::to_string(y.size()) + " targets");
  }
  if (!grad.empty() && grad.size() != z.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size");
  if (z.empty()) throw Error(ErrorCode::EmptyEvaluation, "loss of zero elements");
  const double n = static_cast<double>(z.size());
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = static_cast<double>(z[i]);
    const double yi = static_cast<double>(y[i]);
    if (yi != 0.0 && yi != 1.0) throw Error(ErrorCode::InvalidTarget, "target " + std::to_string(yi) + " at " + std::to_string(i));
    total += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    if (!grad.empty()) {
      const double e = std::exp(-std::abs(zi));
      const double sig = zi >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      grad[i] = static_cast<T>((sig - yi) / n);
    }
  }
  return total / n;
}

template <typename T>
double bce_with_logits(const Tensor<T>& z, const Tensor<T>& y, Tensor<T>* grad = nullptr) {
  if (z.shape() != y.shape()) throw Error(ErrorCode::ShapeMismatch, shape_string(z.shape()) + " vs " + shape_string(y.shape()));
  if (grad) *grad = Tensor<T>(z.shape());
  return bce_with_logits<T>(z.span(), y.span(), grad ? grad->span() : std::span<T>{});
}

/// v' = momentum*v + g; w' = w - lr*v' (in place).
template <typename T>
void sgd_momentum_step(std::span<T> w, std::span<T> v, std::span<const T> g, double lr, double momentum) {
  if (w.size() != v.size() || w.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "sgd step operand sizes");
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = static_cast<T>(momentum * v[i] + g[i]);
    w[i] = static_cast<T>(w[i] - lr * v[i]);
  }
}

/// Keeps one velocity buffer per trainable parameter.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(const nn::ParamList<T>& params) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      auto [it, fresh] = velocity_.try_emplace(p->name, p->value.shape());
      sgd_momentum_step<T>(p->value.span(), it->second.span(), p->grad.span(), lr_, momentum_);
    }
    ++steps_;
  }
  std::int64_t steps() const { return steps_; }

 private:
  double lr_, momentum_;
  std::map<std::string, Tensor<T>> velocity_;
  std::int64_t steps_ = 0;
};

enum class SelectionMetric { ValAccuracy, ValIou };

std::string_view to_string(SelectionMetric m);
SelectionMetric parse_selection_metric(std::string_view text);

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int batch_size = 32;
  int max_epochs = 30;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::ValAccuracy;
  augment::TransformPolicy augmentation{};
  int workers = 1;

  static TrainConfig segmenter_defaults();  // batch 16, selection on val IoU
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  std::optional<double> val_metric;
  double wall_seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  /// One "epoch=.. train_loss=.. val_metric=.. wall_seconds=.." line per epoch.
  /// Undefined metrics print as "undefined".
  std::string to_text(bool include_timing = true) const;
  static TrainLog parse(const std::string& text);
};

struct TrainResult {
  models::Checkpoint checkpoint;
  TrainLog log;
};

struct TrainData {
  std::vector<catalog::SampleRecord> train;
  std::vector<catalog::SampleRecord> val;
};

/// Train split (flagged scenes dropped) balanced by duplication, and the val split.
TrainData classifier_data(std::span<const catalog::SampleRecord> records, std::uint64_t seed);
/// Masked positives of one split plus count-matched negatives. The negative draw
/// depends on the split, so evaluation sees the same samples as training did.
std::vector<catalog::SampleRecord> segmentation_samples(std::span<const catalog::SampleRecord> records,
                                                        catalog::Split split, std::uint64_t seed,
                                                        bool exclude_flagged = false);
/// segmentation_samples for train (flagged scenes dropped) and val.
TrainData segmenter_data(std::span<const catalog::SampleRecord> records, std::uint64_t seed);

/// Optional per-epoch observer (for progress output).
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_classifier(const TrainData& data, const TrainConfig& cfg, const models::ClassifierConfig& arch,
                             catalog::SceneSource& source, const EpochCallback& on_epoch = {});
TrainResult train_segmenter(const TrainData& data, const TrainConfig& cfg, const models::SegmenterConfig& arch,
                            catalog::SceneSource& source, const EpochCallback& on_epoch = {});

}  // namespace plume::training

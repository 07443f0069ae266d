#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "plume/catalog.hpp"
#include "plume/models.hpp"
#include "plume/tensor.hpp"

namespace plume::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, tn += o.tn, fp += o.fp, fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Binary labels in {0, 1}; LengthMismatch when sizes differ.
ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth);
/// EmptyEvaluation on zero samples.
double accuracy(const ConfusionCounts& c);

/// |P ∩ G| / |P ∪ G| over binary masks of equal shape. Undefined (nullopt) when
/// the ground truth is empty.
std::optional<double> iou(const Tensor<std::uint8_t>& predicted, const Tensor<std::uint8_t>& truth);

struct MetricsReport {
  ConfusionCounts confusion;
  double accuracy = 0.0;
  std::optional<double> iou_per_image_mean;  // over images with smoke in the ground truth
  std::optional<double> iou_global;          // pooled intersection over pooled union
  std::optional<double> area_recall_mean;    // |P ∩ G| / |G|
  std::optional<double> area_ratio_mean;     // |P| / |G|
  std::vector<double> channel_importance;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Order-independent accumulator for segmentation scores; images may arrive in
/// any batching and partial accumulators can be merged.
class SegmentationAccumulator {
 public:
  void add(const Tensor<std::uint8_t>& predicted, const Tensor<std::uint8_t>& truth);
  SegmentationAccumulator& operator+=(const SegmentationAccumulator& o);
  MetricsReport report() const;
  std::size_t images() const { return images_; }

 private:
  ConfusionCounts any_smoke_;
  double iou_sum_ = 0, recall_sum_ = 0, ratio_sum_ = 0;
  std::size_t positive_images_ = 0, images_ = 0;
  std::uint64_t inter_ = 0, union_ = 0;
};

/// Thresholds logits at 0 (probability 0.5).
Tensor<std::uint8_t> binarize_logits(std::span<const float> logits, int height, int width);

/// Eval-mode scores on a centre crop of `crop_size`.
MetricsReport evaluate_classifier(models::Classifier<float>& model, std::span<const catalog::SampleRecord> records,
                                  catalog::SceneSource& source, int crop_size = 90, int batch_size = 16);
MetricsReport evaluate_segmentation(models::Segmenter<float>& model, std::span<const catalog::SampleRecord> records,
                                    catalog::SceneSource& source, int crop_size = 90, int batch_size = 8);

/// Per-sample mean of |dL/dW| of the first convolution, summed per input channel
/// and normalised to sum to 1. The model runs in eval mode; `targets` has the
/// shape of the model output for one sample (batch dimension 1). Only gradients
/// are touched, never weights.
template <typename Model>
std::vector<double> channel_gradient_importance(Model& model, std::span<const Tensor<float>> inputs,
                                                std::span<const Tensor<float>> targets) {
  if (inputs.size() != targets.size()) throw Error(ErrorCode::LengthMismatch, "inputs vs targets");
  if (inputs.empty()) throw Error(ErrorCode::EmptyEvaluation, "no samples for channel importance");
  auto& conv = model.first_conv();
  const int out_ch = conv.weight.value.dim(0);
  const int in_ch = conv.weight.value.dim(1);
  const std::size_t per_channel = conv.weight.value.size() / static_cast<std::size_t>(out_ch * in_ch);
  std::vector<double> totals(static_cast<std::size_t>(in_ch), 0.0);
  auto params = model.params();

  for (std::size_t s = 0; s < inputs.size(); ++s) {
    nn::zero_grads(params);
    Shape batched = inputs[s].shape();
    batched.insert(batched.begin(), 1);
    const Tensor<float> logits = model.forward(inputs[s].reshaped(batched), nn::Mode::Eval);
    if (logits.size() != targets[s].size()) throw Error(ErrorCode::ShapeMismatch, "target does not match output");
    // d/dz of mean BCE-with-logits
    Tensor<float> dz(logits.shape());
    const double n = static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
      dz[i] = static_cast<float>((p - targets[s][i]) / n);
    }
    model.backward(dz);
    const auto& g = conv.weight.grad;
    for (int o = 0; o < out_ch; ++o) {
      for (int c = 0; c < in_ch; ++c) {
        const std::size_t base = (static_cast<std::size_t>(o) * in_ch + c) * per_channel;
        double acc = 0;
        for (std::size_t k = 0; k < per_channel; ++k) acc += std::abs(static_cast<double>(g[base + k]));
        totals[static_cast<std::size_t>(c)] += acc;
      }
    }
  }
  nn::zero_grads(params);
  double sum = 0;
  for (double& t : totals) sum += (t /= static_cast<double>(inputs.size()));
  if (sum > 0) {
    for (double& t : totals) t /= sum;
  }
  return totals;
}

/// Convenience form: centre-cropped scenes from `records`, label targets.
std::vector<double> channel_importance(models::Classifier<float>& model,
                                       std::span<const catalog::SampleRecord> records, catalog::SceneSource& source,
                                       int crop_size = 90);

/// Channel indices sorted by descending importance (ties by index).
std::vector<int> rank_channels(std::span<const double> importance);

}  // namespace plume::metrics

#include "plume/metrics.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace plume::metrics {

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(predicted.size()) + " predictions vs " + std::to_string(truth.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw Error(ErrorCode::EmptyEvaluation, "accuracy of zero samples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

namespace {

struct Overlap {
  std::uint64_t inter = 0, uni = 0, pred = 0, truth = 0;
};

Overlap overlap(const Tensor<std::uint8_t>& predicted, const Tensor<std::uint8_t>& truth) {
  if (predicted.shape() != truth.shape()) {
    throw Error(ErrorCode::ShapeMismatch, shape_string(predicted.shape()) + " vs " + shape_string(truth.shape()));
  }
  Overlap o;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] != 0, t = truth[i] != 0;
    o.inter += p && t;
    o.uni += p || t;
    o.pred += p;
    o.truth += t;
  }
  return o;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::optional<double> iou(const Tensor<std::uint8_t>& predicted, const Tensor<std::uint8_t>& truth) {
  const Overlap o = overlap(predicted, truth);
  if (o.truth == 0) return std::nullopt;
  return static_cast<double>(o.inter) / static_cast<double>(o.uni);
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"confusion", {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}}},
       {"accuracy", r.accuracy},
       {"iou_per_image_mean", opt(r.iou_per_image_mean)},
       {"iou_global", opt(r.iou_global)},
       {"area_recall_mean", opt(r.area_recall_mean)},
       {"area_ratio_mean", opt(r.area_ratio_mean)},
       {"channel_importance", r.channel_importance}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                 c.at("fn").get<std::uint64_t>()};
  r.accuracy = j.at("accuracy").get<double>();
  r.iou_per_image_mean = get_opt(j, "iou_per_image_mean");
  r.iou_global = get_opt(j, "iou_global");
  r.area_recall_mean = get_opt(j, "area_recall_mean");
  r.area_ratio_mean = get_opt(j, "area_ratio_mean");
  r.channel_importance = j.value("channel_importance", std::vector<double>{});
}

void SegmentationAccumulator::add(const Tensor<std::uint8_t>& predicted, const Tensor<std::uint8_t>& truth) {
  const Overlap o = overlap(predicted, truth);
  const bool p = o.pred > 0, t = o.truth > 0;
  any_smoke_ += confusion(std::array{int(p)}, std::array{int(t)});
  inter_ += o.inter;
  union_ += o.uni;
  ++images_;
  if (t) {
    ++positive_images_;
    iou_sum_ += static_cast<double>(o.inter) / static_cast<double>(o.uni);
    recall_sum_ += static_cast<double>(o.inter) / static_cast<double>(o.truth);
    ratio_sum_ += static_cast<double>(o.pred) / static_cast<double>(o.truth);
  }
}

SegmentationAccumulator& SegmentationAccumulator::operator+=(const SegmentationAccumulator& o) {
  any_smoke_ += o.any_smoke_;
  iou_sum_ += o.iou_sum_;
  recall_sum_ += o.recall_sum_;
  ratio_sum_ += o.ratio_sum_;
  positive_images_ += o.positive_images_;
  images_ += o.images_;
  inter_ += o.inter_;
  union_ += o.union_;
  return *this;
}

MetricsReport SegmentationAccumulator::report() const {
  if (images_ == 0) throw Error(ErrorCode::EmptyEvaluation, "no images evaluated");
  MetricsReport r;
  r.confusion = any_smoke_;
  r.accuracy = accuracy(any_smoke_);
  if (positive_images_ > 0) {
    const double n = static_cast<double>(positive_images_);
    r.iou_per_image_mean = iou_sum_ / n;
    r.area_recall_mean = recall_sum_ / n;
    r.area_ratio_mean = ratio_sum_ / n;
  }
  if (union_ > 0 && positive_images_ > 0) r.iou_global = static_cast<double>(inter_) / static_cast<double>(union_);
  return r;
}

Tensor<std::uint8_t> binarize_logits(std::span<const float> logits, int height, int width) {
  Tensor<std::uint8_t> out({height, width});
  if (logits.size() != out.size()) throw Error(ErrorCode::ShapeMismatch, "logit map size");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] > 0.0f ? 1 : 0;
  return out;
}

MetricsReport evaluate_classifier(models::Classifier<float>& model, std::span<const catalog::SampleRecord> records,
                                  catalog::SceneSource& source, int crop_size, int batch_size) {
  if (records.empty()) throw Error(ErrorCode::EmptyEvaluation, "no records to evaluate");
  catalog::BatchStream stream(records, batch_size, augment::TransformPolicy::eval(crop_size), 0,
                              catalog::TargetKind::Label, source, 1, false);
  std::vector<int> pred, truth;
  while (auto batch = stream.next()) {
    const Tensor<float> logits = model.forward(batch->images, nn::Mode::Eval);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      pred.push_back(logits[i] > 0.0f ? 1 : 0);
      truth.push_back(batch->targets[i] > 0.5f ? 1 : 0);
    }
  }
  MetricsReport r;
  r.confusion = confusion(pred, truth);
  r.accuracy = accuracy(r.confusion);
  return r;
}

MetricsReport evaluate_segmentation(models::Segmenter<float>& model, std::span<const catalog::SampleRecord> records,
                                    catalog::SceneSource& source, int crop_size, int batch_size) {
  if (records.empty()) throw Error(ErrorCode::EmptyEvaluation, "no records to evaluate");
  catalog::BatchStream stream(records, batch_size, augment::TransformPolicy::eval(crop_size), 0,
                              catalog::TargetKind::Mask, source, 1, false);
  SegmentationAccumulator acc;
  const std::size_t plane = static_cast<std::size_t>(crop_size) * crop_size;
  while (auto batch = stream.next()) {
    const Tensor<float> logits = model.forward(batch->images, nn::Mode::Eval);
    for (int b = 0; b < logits.dim(0); ++b) {
      const auto offset = static_cast<std::size_t>(b) * plane;
      const auto pred = binarize_logits(logits.span().subspan(offset, plane), crop_size, crop_size);
      const auto truth = binarize_logits(batch->targets.span().subspan(offset, plane), crop_size, crop_size);
      acc.add(pred, truth);
    }
  }
  return acc.report();
}

std::vector<double> channel_importance(models::Classifier<float>& model,
                                       std::span<const catalog::SampleRecord> records, catalog::SceneSource& source,
                                       int crop_size) {
  std::vector<Tensor<float>> inputs, targets;
  for (const auto& r : records) {
    const auto item = source.load(r, false);
    const auto& s = *item.scene;
    inputs.push_back(augment::crop_at(s, augment::center_offset(s.dim(1), s.dim(2), crop_size), crop_size));
    targets.emplace_back(Shape{1, 1}, static_cast<float>(r.label));
  }
  return channel_gradient_importance(model, std::span<const Tensor<float>>(inputs),
                                     std::span<const Tensor<float>>(targets));
}

std::vector<int> rank_channels(std::span<const double> importance) {
  std::vector<int> idx(importance.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return importance[a] > importance[b]; });
  return idx;
}

}  // namespace plume::metrics

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "plume/nn/layers.hpp"
#include "plume/tensor.hpp"

namespace plume::models {

using nn::Mode;
using nn::ParamList;

struct ClassifierConfig {
  int in_channels = 12;
  std::vector<int> block_counts{3, 4, 6, 3};  // 50-layer bottleneck layout
  int base_width = 64;
  bool tiny = false;

  /// Reduced test network: one block per stage, base width 16.
  static ClassifierConfig make_tiny();
  bool operator==(const ClassifierConfig&) const = default;
};

struct SegmenterConfig {
  int in_channels = 12;
  int depth = 4;
  int base_width = 64;
  bool tiny = false;

  static SegmenterConfig make_tiny();  // depth 2, base width 8
  int pad_multiple() const { return 1 << depth; }
  bool operator==(const SegmenterConfig&) const = default;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);
void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);

/// Residual bottleneck block: 1x1 reduce, 3x3 (carries the stride), 1x1 expand
/// by 4, with a projection shortcut when shape changes.
template <typename T>
class Bottleneck {
 public:
  static constexpr int kExpansion = 4;

  Bottleneck(const std::string& prefix, int in, int width, int stride, nn::InitRng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamList<T>& out);

 private:
  nn::Conv2d<T> conv1_, conv2_, conv3_, down_conv_;
  nn::BatchNorm2d<T> bn1_, bn2_, bn3_, down_bn_;
  nn::ReLU<T> relu1_, relu2_, relu_out_;
  bool has_down_ = false;
};

/// Bottleneck ResNet with a 12-channel stem and a single-logit head.
template <typename T>
class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed);

  /// N x C x H x W -> N x 1 logits.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  /// Output of residual stage `stage` (1-based); runs only the layers it needs.
  Tensor<T> forward_to_stage(const Tensor<T>& x, int stage, Mode mode);
  /// Backpropagates dL/dlogits from the last forward. Returns dL/dx when asked.
  Tensor<T> backward(const Tensor<T>& dlogits, bool need_input_grad = false);

  ParamList<T> params();
  nn::Conv2d<T>& first_conv() { return stem_conv_; }
  const ClassifierConfig& config() const { return cfg_; }

 private:
  ClassifierConfig cfg_;
  nn::Conv2d<T> stem_conv_;
  nn::BatchNorm2d<T> stem_bn_;
  nn::ReLU<T> stem_relu_;
  nn::MaxPool2d<T> stem_pool_;
  std::vector<std::vector<std::unique_ptr<Bottleneck<T>>>> stages_;
  nn::GlobalAvgPool<T> pool_;
  nn::Linear<T> fc_;
};

template <typename T>
class DoubleConv {
 public:
  DoubleConv(const std::string& prefix, int in, int out, nn::InitRng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(ParamList<T>& out);
  nn::Conv2d<T>& first_conv() { return conv1_; }

 private:
  nn::Conv2d<T> conv1_, conv2_;
  nn::BatchNorm2d<T> bn1_, bn2_;
  nn::ReLU<T> relu1_, relu2_;
};

/// U-Net: input is reflect-padded to a multiple of 2^depth and the logit map is
/// cropped back, so output spatial size equals input size.
template <typename T>
class Segmenter {
 public:
  Segmenter(const SegmenterConfig& cfg, std::uint64_t seed);

  /// N x C x H x W -> N x 1 x H x W logits.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dlogits, bool need_input_grad = false);

  ParamList<T> params();
  nn::Conv2d<T>& first_conv();
  const SegmenterConfig& config() const { return cfg_; }

 private:
  SegmenterConfig cfg_;
  std::vector<std::unique_ptr<DoubleConv<T>>> enc_;
  std::vector<nn::MaxPool2d<T>> pools_;
  std::unique_ptr<DoubleConv<T>> bottom_;
  std::vector<std::unique_ptr<nn::UpConv2x2<T>>> up_;
  std::vector<std::unique_ptr<DoubleConv<T>>> dec_;
  nn::Conv2d<T> head_;

  nn::Padding pad_;
  Shape padded_shape_;
  std::vector<int> skip_channels_;
};

struct ActivationMap {
  Tensor<float> grid;  // h x w, channel mean of the stage-2 output
  Tensor<float> full;  // H x W, nearest-neighbour upsampled to the input size
};

/// Channel-mean of the second residual stage for one C x H x W scene (eval mode).
ActivationMap extract_activation_map(Classifier<float>& model, const Tensor<float>& scene);

/// Copies parameter and buffer values between two models with identical layouts
/// (e.g. a float model into a double model for gradient checking).
template <typename Dst, typename Src>
void copy_weights(Dst& dst, Src& src) {
  auto d = dst.params();
  auto s = src.params();
  if (d.size() != s.size()) throw Error(ErrorCode::ArchMismatch, "parameter counts differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i]->value.shape() != s[i]->value.shape()) throw Error(ErrorCode::ArchMismatch, d[i]->name);
    std::copy(s[i]->value.vec().begin(), s[i]->value.vec().end(), d[i]->value.vec().begin());
  }
}

}  // namespace plume::models

#include "plume/models.hpp"

#include <cmath>

namespace plume::models {

ClassifierConfig ClassifierConfig::make_tiny() {
  ClassifierConfig c;
  c.block_counts = {1, 1, 1, 1};
  c.base_width = 16;
  c.tiny = true;
  return c;
}

SegmenterConfig SegmenterConfig::make_tiny() {
  SegmenterConfig c;
  c.depth = 2;
  c.base_width = 8;
  c.tiny = true;
  return c;
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"in_channels", c.in_channels}, {"block_counts", c.block_counts}, {"base_width", c.base_width}, {"tiny", c.tiny}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("block_counts").get_to(c.block_counts);
  j.at("base_width").get_to(c.base_width);
  j.at("tiny").get_to(c.tiny);
}

void to_json(nlohmann::json& j, const SegmenterConfig& c) {
  j = {{"in_channels", c.in_channels}, {"depth", c.depth}, {"base_width", c.base_width}, {"tiny", c.tiny}};
}

void from_json(const nlohmann::json& j, SegmenterConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("depth").get_to(c.depth);
  j.at("base_width").get_to(c.base_width);
  j.at("tiny").get_to(c.tiny);
}

// ---------------------------------------------------------------- Bottleneck

template <typename T>
Bottleneck<T>::Bottleneck(const std::string& prefix, int in, int width, int stride, nn::InitRng& rng)
    : conv1_(prefix + ".conv1", {in, width, 1, 1, 0, false}, rng),
      conv2_(prefix + ".conv2", {width, width, 3, stride, 1, false}, rng),
      conv3_(prefix + ".conv3", {width, width * kExpansion, 1, 1, 0, false}, rng),
      bn1_(prefix + ".bn1", width),
      bn2_(prefix + ".bn2", width),
      bn3_(prefix + ".bn3", width * kExpansion),
      has_down_(stride != 1 || in != width * kExpansion) {
  if (has_down_) {
    down_conv_ = nn::Conv2d<T>(prefix + ".downsample_conv", {in, width * kExpansion, 1, stride, 0, false}, rng);
    down_bn_ = nn::BatchNorm2d<T>(prefix + ".downsample_bn", width * kExpansion);
  }
}

template <typename T>
void Bottleneck<T>::collect(ParamList<T>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  conv3_.collect(out);
  bn3_.collect(out);
  if (has_down_) {
    down_conv_.collect(out);
    down_bn_.collect(out);
  }
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> out = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
  out = relu2_.forward(bn2_.forward(conv2_.forward(out), mode));
  out = bn3_.forward(conv3_.forward(out), mode);
  if (has_down_) {
    nn::add_inplace(out, down_bn_.forward(down_conv_.forward(x), mode));
  } else {
    nn::add_inplace(out, x);
  }
  return relu_out_.forward(out);
}

template <typename T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& dy) {
  const Tensor<T> d_sum = relu_out_.backward(dy);
  Tensor<T> d = conv3_.backward(bn3_.backward(d_sum));
  d = conv2_.backward(bn2_.backward(relu2_.backward(d)));
  d = conv1_.backward(bn1_.backward(relu1_.backward(d)));
  if (has_down_) {
    nn::add_inplace(d, down_conv_.backward(down_bn_.backward(d_sum)));
  } else {
    nn::add_inplace(d, d_sum);
  }
  return d;
}

// ---------------------------------------------------------------- Classifier

template <typename T>
Classifier<T>::Classifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.block_counts.empty() || cfg.base_width <= 0 || cfg.in_channels <= 0) {
    throw Error(ErrorCode::ArchMismatch, "invalid classifier config");
  }
  nn::InitRng rng(seed);
  stem_conv_ = nn::Conv2d<T>("stem.0.conv", {cfg.in_channels, cfg.base_width, 7, 2, 3, false}, rng);
  stem_bn_ = nn::BatchNorm2d<T>("stem.0.bn", cfg.base_width);
  stem_pool_ = nn::MaxPool2d<T>(3, 2, 1);
  int in = cfg.base_width;
  for (std::size_t s = 0; s < cfg.block_counts.size(); ++s) {
    const int width = cfg.base_width << s;
    std::vector<std::unique_ptr<Bottleneck<T>>> blocks;
    for (int b = 0; b < cfg.block_counts[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      blocks.push_back(std::make_unique<Bottleneck<T>>(prefix, in, width, stride, rng));
      in = width * Bottleneck<T>::kExpansion;
    }
    stages_.push_back(std::move(blocks));
  }
  fc_ = nn::Linear<T>("head.0.fc", in, 1, rng);
}

template <typename T>
ParamList<T> Classifier<T>::params() {
  ParamList<T> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& stage : stages_)
    for (auto& block : stage) block->collect(out);
  fc_.collect(out);
  return out;
}

template <typename T>
Tensor<T> Classifier<T>::forward_to_stage(const Tensor<T>& x, int stage, Mode mode) {
  Tensor<T> h = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x), mode)));
  const int stop = std::min<int>(stage, static_cast<int>(stages_.size()));
  for (int s = 0; s < stop; ++s)
    for (auto& block : stages_[static_cast<std::size_t>(s)]) h = block->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& x, Mode mode) {
  const Tensor<T> features = forward_to_stage(x, static_cast<int>(stages_.size()), mode);
  return fc_.forward(pool_.forward(features));
}

template <typename T>
Tensor<T> Classifier<T>::backward(const Tensor<T>& dlogits, bool need_input_grad) {
  Tensor<T> d = pool_.backward(fc_.backward(dlogits));
  for (auto s = stages_.rbegin(); s != stages_.rend(); ++s)
    for (auto b = s->rbegin(); b != s->rend(); ++b) d = (*b)->backward(d);
  d = stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(d)));
  return stem_conv_.backward(d, need_input_grad);
}

// ---------------------------------------------------------------- DoubleConv

template <typename T>
DoubleConv<T>::DoubleConv(const std::string& prefix, int in, int out, nn::InitRng& rng)
    : conv1_(prefix + ".conv1", {in, out, 3, 1, 1, false}, rng),
      conv2_(prefix + ".conv2", {out, out, 3, 1, 1, false}, rng),
      bn1_(prefix + ".bn1", out),
      bn2_(prefix + ".bn2", out) {}

template <typename T>
void DoubleConv<T>::collect(ParamList<T>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
}

template <typename T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
  return relu2_.forward(bn2_.forward(conv2_.forward(h), mode));
}

template <typename T>
Tensor<T> DoubleConv<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> d = conv2_.backward(bn2_.backward(relu2_.backward(dy)));
  return conv1_.backward(bn1_.backward(relu1_.backward(d)), need_input_grad);
}

// ---------------------------------------------------------------- Segmenter

template <typename T>
Segmenter<T>::Segmenter(const SegmenterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.depth < 1 || cfg.base_width <= 0 || cfg.in_channels <= 0) {
    throw Error(ErrorCode::ArchMismatch, "invalid segmenter config");
  }
  nn::InitRng rng(seed);
  int in = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int width = cfg.base_width << i;
    enc_.push_back(std::make_unique<DoubleConv<T>>("enc" + std::to_string(i) + ".0", in, width, rng));
    pools_.emplace_back(2, 2, 0);
    skip_channels_.push_back(width);
    in = width;
  }
  bottom_ = std::make_unique<DoubleConv<T>>("bottom.0", in, cfg.base_width << cfg.depth, rng);
  up_.resize(static_cast<std::size_t>(cfg.depth));
  dec_.resize(static_cast<std::size_t>(cfg.depth));
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int width = cfg.base_width << i;
    const std::string prefix = "dec" + std::to_string(i) + ".0";
    up_[static_cast<std::size_t>(i)] = std::make_unique<nn::UpConv2x2<T>>(prefix + ".up", width * 2, width, rng);
    dec_[static_cast<std::size_t>(i)] = std::make_unique<DoubleConv<T>>(prefix, width * 2, width, rng);
  }
  head_ = nn::Conv2d<T>("head.0.out", {cfg.base_width, 1, 1, 1, 0, true}, rng);
}

template <typename T>
nn::Conv2d<T>& Segmenter<T>::first_conv() {
  return enc_.front()->first_conv();
}

template <typename T>
ParamList<T> Segmenter<T>::params() {
  ParamList<T> out;
  for (auto& e : enc_) e->collect(out);
  bottom_->collect(out);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    up_[static_cast<std::size_t>(i)]->collect(out);
    dec_[static_cast<std::size_t>(i)]->collect(out);
  }
  head_.collect(out);
  return out;
}

template <typename T>
Tensor<T> Segmenter<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "segmenter expects N x C x H x W");
  const int H = x.dim(2), W = x.dim(3), m = cfg_.pad_multiple();
  const int ph = (H + m - 1) / m * m - H, pw = (W + m - 1) / m * m - W;
  pad_ = {ph / 2, ph - ph / 2, pw / 2, pw - pw / 2};
  Tensor<T> h = (ph || pw) ? nn::reflect_pad(x, pad_) : x;
  padded_shape_ = h.shape();

  std::vector<Tensor<T>> skips;
  for (int i = 0; i < cfg_.depth; ++i) {
    h = enc_[static_cast<std::size_t>(i)]->forward(h, mode);
    skips.push_back(h);
    h = pools_[static_cast<std::size_t>(i)].forward(h);
  }
  h = bottom_->forward(h, mode);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    h = up_[static_cast<std::size_t>(i)]->forward(h);
    h = nn::concat_channels(skips[static_cast<std::size_t>(i)], h);
    h = dec_[static_cast<std::size_t>(i)]->forward(h, mode);
  }
  h = head_.forward(h);
  return nn::crop_spatial(h, pad_.top, pad_.left, H, W);
}

template <typename T>
Tensor<T> Segmenter<T>::backward(const Tensor<T>& dlogits, bool need_input_grad) {
  Shape head_shape = padded_shape_;
  head_shape[1] = 1;
  Tensor<T> d = head_.backward(nn::crop_spatial_backward(dlogits, head_shape, pad_.top, pad_.left));
  std::vector<Tensor<T>> dskips(static_cast<std::size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    d = dec_[ui]->backward(d);
    auto [dskip, dup] = nn::split_channels(d, skip_channels_[ui]);
    dskips[ui] = std::move(dskip);
    d = up_[ui]->backward(dup);
  }
  d = bottom_->backward(d);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    d = pools_[ui].backward(d);
    nn::add_inplace(d, dskips[ui]);
    d = enc_[ui]->backward(d, i > 0 || need_input_grad);
  }
  if (!need_input_grad) return {};
  return (pad_.top || pad_.bottom || pad_.left || pad_.right) ? nn::reflect_pad_backward(d, pad_) : d;
}

// ---------------------------------------------------------------- activation map

ActivationMap extract_activation_map(Classifier<float>& model, const Tensor<float>& scene) {
  if (scene.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "expected C x H x W scene");
  const int H = scene.dim(1), W = scene.dim(2);
  const Tensor<float> batch = scene.reshaped({1, scene.dim(0), H, W});
  const Tensor<float> features = model.forward_to_stage(batch, 2, Mode::Eval);
  const int C = features.dim(1), h = features.dim(2), w = features.dim(3);
  ActivationMap map{Tensor<float>({h, w}), Tensor<float>({H, W})};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = 0; k < C; ++k) acc += features.at(0, k, r, c);
      map.grid[static_cast<std::size_t>(r) * w + c] = static_cast<float>(acc / C);
    }
  }
  for (int r = 0; r < H; ++r) {
    const int sr = std::min(h - 1, r * h / H);
    for (int c = 0; c < W; ++c) {
      const int sc = std::min(w - 1, c * w / W);
      map.full[static_cast<std::size_t>(r) * W + c] = map.grid[static_cast<std::size_t>(sr) * w + sc];
    }
  }
  return map;
}

template class Bottleneck<float>;
template class Bottleneck<double>;
template class Classifier<float>;
template class Classifier<double>;
template class DoubleConv<float>;
template class DoubleConv<double>;
template class Segmenter<float>;
template class Segmenter<double>;

}  // namespace plume::models

#pragma once

// Minimal CPU layer library with explicit forward/backward passes. Each layer
// caches what its backward pass needs during forward; backward accumulates
// parameter gradients (callers zero them between steps) and returns the input
// gradient. Instantiated for float (training) and double (gradient checks).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "plume/tensor.hpp"

namespace plume::nn {

enum class Mode { Train, Eval };

using InitRng = std::mt19937_64;

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;  // false for buffers such as running statistics

  void init_shape(std::string param_name, Shape shape, bool is_trainable = true) {
    name = std::move(param_name);
    value = Tensor<T>(shape);
    grad = Tensor<T>(std::move(shape));
    trainable = is_trainable;
  }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

/// Fills with N(0, std^2) drawn in double precision, so float and double models
/// built from the same seed hold the same values up to rounding.
template <typename T>
void fill_normal(Tensor<T>& t, double stddev, InitRng& rng);

struct ConvSpec {
  int in = 1;
  int out = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  bool bias = false;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, ConvSpec spec, InitRng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates weight/bias gradients; returns dL/dx unless need_input_grad is false.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(ParamList<T>& out);

  const ConvSpec& spec() const { return spec_; }
  int output_size(int input) const { return (input + 2 * spec_.pad - spec_.kernel) / spec_.stride + 1; }

  Param<T> weight;  // out x in x k x k
  Param<T> bias;    // out, present only when spec.bias

 private:
  ConvSpec spec_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;  // weight kept on the old running value

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamList<T>& out);

  Param<T> gamma, beta, running_mean, running_var;

 private:
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> output_;
};

template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  int kernel_ = 2, stride_ = 2, pad_ = 0;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// N x C x H x W -> N x C.
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape input_shape_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, InitRng& rng);

  Tensor<T> forward(const Tensor<T>& x);  // N x in -> N x out
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamList<T>& out);

  Param<T> weight;  // out x in
  Param<T> bias;    // out

 private:
  Tensor<T> input_;
};

/// 2x2 transposed convolution with stride 2 (doubles spatial size).
template <typename T>
class UpConv2x2 {
 public:
  UpConv2x2() = default;
  UpConv2x2(const std::string& name, int in, int out, InitRng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamList<T>& out);

  Param<T> weight;  // in x out x 2 x 2
  Param<T> bias;    // out

 private:
  Tensor<T> input_;
};

// Stateless tensor ops and their adjoints.

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits dL/d(concat) back into the first `channels_a` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& d, int channels_a);

struct Padding {
  int top = 0, bottom = 0, left = 0, right = 0;
};

/// Reflection padding (edge pixel not repeated); each pad must be smaller than the edge length.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, Padding pad);
template <typename T>
Tensor<T> reflect_pad_backward(const Tensor<T>& dy, Padding pad);

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& x, int top, int left, int height, int width);
template <typename T>
Tensor<T> crop_spatial_backward(const Tensor<T>& dy, const Shape& input_shape, int top, int left);

template <typename T>
void zero_grads(const ParamList<T>& params);

/// Threads used by the matrix-multiply backend.
void set_compute_threads(int threads);

}  // namespace plume::nn

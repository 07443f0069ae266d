#include "plume/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blas.hpp"

namespace plume::nn {
namespace {

// Upper bound on im2col buffer elements; images are processed in groups that fit.
constexpr std::size_t kColumnBudget = std::size_t{1} << 23;

void require_rank4(const Shape& shape, const char* who) {
  if (shape.size() != 4) throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects N x C x H x W, got " + shape_string(shape));
}

template <typename T>
void im2col(const T* x, int C, int H, int W, const ConvSpec& s, int OH, int OW, T* col, std::size_t ld) {
  const int k = s.kernel;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* dst = col + static_cast<std::size_t>((c * k + kh) * k + kw) * ld;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * s.stride - s.pad + kh;
          T* row = dst + static_cast<std::size_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::fill(row, row + OW, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * s.stride - s.pad + kw;
            row[ow] = (iw >= 0 && iw < W) ? src[iw] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t ld, int C, int H, int W, const ConvSpec& s, int OH, int OW, T* dx) {
  const int k = s.kernel;
  for (int c = 0; c < C; ++c) {
    T* plane = dx + static_cast<std::size_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* src = col + static_cast<std::size_t>((c * k + kh) * k + kw) * ld;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * s.stride - s.pad + kh;
          if (ih < 0 || ih >= H) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * W;
          const T* row = src + static_cast<std::size_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * s.stride - s.pad + kw;
            if (iw >= 0 && iw < W) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, InitRng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(static_cast<float>(dist(rng)));
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (Param<T>* p : params) p->grad.zero();
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, ConvSpec spec, InitRng& rng) : spec_(spec) {
  weight.init_shape(name + ".weight", {spec.out, spec.in, spec.kernel, spec.kernel});
  fill_normal(weight.value, std::sqrt(2.0 / (spec.in * spec.kernel * spec.kernel)), rng);
  if (spec.bias) bias.init_shape(name + ".bias", {spec.out});
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  if (spec_.bias) out.push_back(&bias);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require_rank4(x.shape(), "Conv2d");
  if (x.dim(1) != spec_.in) {
    throw Error(ErrorCode::ShapeMismatch, weight.name + ": expected " + std::to_string(spec_.in) + " input channels, got " +
                                              std::to_string(x.dim(1)));
  }
  input_ = x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = output_size(H), OW = output_size(W);
  if (OH <= 0 || OW <= 0) throw Error(ErrorCode::ShapeMismatch, weight.name + ": input too small");
  const std::size_t P = static_cast<std::size_t>(OH) * OW;
  const std::size_t K = static_cast<std::size_t>(C) * spec_.kernel * spec_.kernel;
  const int group = static_cast<int>(std::clamp<std::size_t>(kColumnBudget / (K * P), 1, static_cast<std::size_t>(N)));

  Tensor<T> y({N, spec_.out, OH, OW});
  std::vector<T> col(K * P * group), ymat(static_cast<std::size_t>(spec_.out) * P * group);
  for (int n0 = 0; n0 < N; n0 += group) {
    const int g = std::min(group, N - n0);
    const std::size_t ld = P * g;
    for (int gi = 0; gi < g; ++gi) {
      im2col(x.data() + static_cast<std::size_t>(n0 + gi) * C * H * W, C, H, W, spec_, OH, OW, col.data() + gi * P, ld);
    }
    detail::gemm(false, false, spec_.out, static_cast<int>(ld), static_cast<int>(K), T{1}, weight.value.data(),
                 static_cast<int>(K), col.data(), static_cast<int>(ld), T{0}, ymat.data(), static_cast<int>(ld));
    for (int gi = 0; gi < g; ++gi) {
      for (int o = 0; o < spec_.out; ++o) {
        const T b = spec_.bias ? bias.value[static_cast<std::size_t>(o)] : T{0};
        const T* src = ymat.data() + static_cast<std::size_t>(o) * ld + gi * P;
        T* dst = &y.at(n0 + gi, o, 0, 0);
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  const Tensor<T>& x = input_;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = dy.dim(2), OW = dy.dim(3);
  const std::size_t P = static_cast<std::size_t>(OH) * OW;
  const std::size_t K = static_cast<std::size_t>(C) * spec_.kernel * spec_.kernel;
  const int group = static_cast<int>(std::clamp<std::size_t>(kColumnBudget / (K * P), 1, static_cast<std::size_t>(N)));

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  std::vector<T> col(K * P * group), dymat(static_cast<std::size_t>(spec_.out) * P * group);
  std::vector<T> dcol(need_input_grad ? K * P * group : 0);
  for (int n0 = 0; n0 < N; n0 += group) {
    const int g = std::min(group, N - n0);
    const std::size_t ld = P * g;
    for (int gi = 0; gi < g; ++gi) {
      for (int o = 0; o < spec_.out; ++o) {
        const T* src = &dy.at(n0 + gi, o, 0, 0);
        std::copy(src, src + P, dymat.data() + static_cast<std::size_t>(o) * ld + gi * P);
      }
      im2col(x.data() + static_cast<std::size_t>(n0 + gi) * C * H * W, C, H, W, spec_, OH, OW, col.data() + gi * P, ld);
    }
    detail::gemm(false, true, spec_.out, static_cast<int>(K), static_cast<int>(ld), T{1}, dymat.data(),
                 static_cast<int>(ld), col.data(), static_cast<int>(ld), T{1}, weight.grad.data(), static_cast<int>(K));
    if (spec_.bias) {
      for (int o = 0; o < spec_.out; ++o) {
        const T* row = dymat.data() + static_cast<std::size_t>(o) * ld;
        T acc{0};
        for (std::size_t p = 0; p < ld; ++p) acc += row[p];
        bias.grad[static_cast<std::size_t>(o)] += acc;
      }
    }
    if (need_input_grad) {
      detail::gemm(true, false, static_cast<int>(K), static_cast<int>(ld), spec_.out, T{1}, weight.value.data(),
                   static_cast<int>(K), dymat.data(), static_cast<int>(ld), T{0}, dcol.data(), static_cast<int>(ld));
      for (int gi = 0; gi < g; ++gi) {
        col2im(dcol.data() + gi * P, ld, C, H, W, spec_, OH, OW, dx.data() + static_cast<std::size_t>(n0 + gi) * C * H * W);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels) {
  gamma.init_shape(name + ".gamma", {channels});
  beta.init_shape(name + ".beta", {channels});
  running_mean.init_shape(name + ".running_mean", {channels}, false);
  running_var.init_shape(name + ".running_var", {channels}, false);
  gamma.value.fill(T{1});
  running_var.value.fill(T{1});
}

template <typename T>
void BatchNorm2d<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank4(x.shape(), "BatchNorm2d");
  mode_ = mode;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(N) * static_cast<double>(HW);
  inv_std_.assign(static_cast<std::size_t>(C), 0.0);
  xhat_ = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (int n = 0; n < N; ++n) {
        const T* p = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) mean += p[i];
      }
      mean /= count;
      for (int n = 0; n < N; ++n) {
        const T* p = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean.value[ci] = static_cast<T>(kMomentum * running_mean.value[ci] + (1 - kMomentum) * mean);
      running_var.value[ci] = static_cast<T>(kMomentum * running_var.value[ci] + (1 - kMomentum) * unbiased);
    } else {
      mean = running_mean.value[ci];
      var = running_var.value[ci];
    }
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    inv_std_[ci] = inv_std;
    const double g = gamma.value[ci], b = beta.value[ci];
    for (int n = 0; n < N; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      T* h = &xhat_.at(n, c, 0, 0);
      T* o = &y.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        const double xh = (p[i] - mean) * inv_std;
        h[i] = static_cast<T>(xh);
        o[i] = static_cast<T>(g * xh + b);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const int N = dy.dim(0), C = dy.dim(1);
  const std::size_t HW = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double count = static_cast<double>(N) * static_cast<double>(HW);
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* d = &dy.at(n, c, 0, 0);
      const T* h = &xhat_.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += d[i];
        sum_dy_xhat += static_cast<double>(d[i]) * h[i];
      }
    }
    gamma.grad[ci] += static_cast<T>(sum_dy_xhat);
    beta.grad[ci] += static_cast<T>(sum_dy);
    const double scale = gamma.value[ci] * inv_std_[ci];
    for (int n = 0; n < N; ++n) {
      const T* d = &dy.at(n, c, 0, 0);
      const T* h = &xhat_.at(n, c, 0, 0);
      T* o = &dx.at(n, c, 0, 0);
      if (mode_ == Mode::Train) {
        for (std::size_t i = 0; i < HW; ++i) {
          o[i] = static_cast<T>(scale * (d[i] - sum_dy / count - h[i] * sum_dy_xhat / count));
        }
      } else {
        for (std::size_t i = 0; i < HW; ++i) o[i] = static_cast<T>(scale * d[i]);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.vec()) v = v > T{0} ? v : T{0};
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = output_[i] > T{0} ? dy[i] : T{0};
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  require_rank4(x.shape(), "MaxPool2d");
  input_shape_ = x.shape();
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 2 * pad_ - kernel_) / stride_ + 1;
  const int OW = (W + 2 * pad_ - kernel_) / stride_ + 1;
  Tensor<T> y({N, C, OH, OW});
  argmax_.assign(y.size(), 0);
  std::size_t out_i = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* plane = &x.at(n, c, 0, 0);
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow, ++out_i) {
          T best = -std::numeric_limits<T>::infinity();
          std::uint32_t best_i = 0;
          for (int kh = 0; kh < kernel_; ++kh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < kernel_; ++kw) {
              const int iw = ow * stride_ - pad_ + kw;
              if (iw < 0 || iw >= W) continue;
              const auto idx = static_cast<std::uint32_t>(ih * W + iw);
              if (plane[idx] > best) {
                best = plane[idx];
                best_i = idx;
              }
            }
          }
          y[out_i] = best;
          argmax_[out_i] = best_i;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(input_shape_);
  const std::size_t plane_in = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  const std::size_t plane_out = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const std::size_t nc = i / plane_out;
    dx[nc * plane_in + argmax_[i]] += dy[i];
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  require_rank4(x.shape(), "GlobalAvgPool");
  input_shape_ = x.shape();
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({N, C});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = &x.at(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < HW; ++i) acc += p[i];
      y[static_cast<std::size_t>(n) * C + c] = static_cast<T>(acc / static_cast<double>(HW));
    }
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(input_shape_);
  const int N = input_shape_[0], C = input_shape_[1];
  const std::size_t HW = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  const T inv = static_cast<T>(1.0 / static_cast<double>(HW));
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T g = dy[static_cast<std::size_t>(n) * C + c] * inv;
      std::fill_n(&dx.at(n, c, 0, 0), HW, g);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out, InitRng& rng) {
  weight.init_shape(name + ".weight", {out, in});
  bias.init_shape(name + ".bias", {out});
  fill_normal(weight.value, std::sqrt(1.0 / in), rng);
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  const int out = weight.value.dim(0), in = weight.value.dim(1);
  if (x.rank() != 2 || x.dim(1) != in) throw Error(ErrorCode::ShapeMismatch, weight.name + ": bad input " + shape_string(x.shape()));
  input_ = x;
  const int N = x.dim(0);
  Tensor<T> y({N, out});
  for (int n = 0; n < N; ++n) std::copy(bias.value.data(), bias.value.data() + out, y.data() + static_cast<std::size_t>(n) * out);
  detail::gemm(false, true, N, out, in, T{1}, x.data(), in, weight.value.data(), in, T{1}, y.data(), out);
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const int out = weight.value.dim(0), in = weight.value.dim(1);
  const int N = dy.dim(0);
  detail::gemm(true, false, out, in, N, T{1}, dy.data(), out, input_.data(), in, T{1}, weight.grad.data(), in);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out; ++o) bias.grad[static_cast<std::size_t>(o)] += dy[static_cast<std::size_t>(n) * out + o];
  Tensor<T> dx({N, in});
  detail::gemm(false, false, N, in, out, T{1}, dy.data(), out, weight.value.data(), in, T{0}, dx.data(), in);
  return dx;
}

// ---------------------------------------------------------------- UpConv2x2

template <typename T>
UpConv2x2<T>::UpConv2x2(const std::string& name, int in, int out, InitRng& rng) {
  weight.init_shape(name + ".weight", {in, out, 2, 2});
  bias.init_shape(name + ".bias", {out});
  fill_normal(weight.value, std::sqrt(2.0 / in), rng);
}

template <typename T>
void UpConv2x2<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
Tensor<T> UpConv2x2<T>::forward(const Tensor<T>& x) {
  require_rank4(x.shape(), "UpConv2x2");
  const int in = weight.value.dim(0), out = weight.value.dim(1);
  if (x.dim(1) != in) throw Error(ErrorCode::ShapeMismatch, weight.name + ": bad input channels");
  input_ = x;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor<T> y({N, out, 2 * H, 2 * W});
  std::vector<T> ymat(static_cast<std::size_t>(out) * 4 * HW);
  for (int n = 0; n < N; ++n) {
    detail::gemm(true, false, out * 4, static_cast<int>(HW), in, T{1}, weight.value.data(), out * 4,
                 &x.at(n, 0, 0, 0), static_cast<int>(HW), T{0}, ymat.data(), static_cast<int>(HW));
    for (int o = 0; o < out; ++o) {
      const T b = bias.value[static_cast<std::size_t>(o)];
      for (int a = 0; a < 2; ++a) {
        for (int bb = 0; bb < 2; ++bb) {
          const T* src = ymat.data() + static_cast<std::size_t>(o * 4 + a * 2 + bb) * HW;
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) y.at(n, o, 2 * i + a, 2 * j + bb) = src[static_cast<std::size_t>(i) * W + j] + b;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> UpConv2x2<T>::backward(const Tensor<T>& dy) {
  const int in = weight.value.dim(0), out = weight.value.dim(1);
  const int N = input_.dim(0), H = input_.dim(2), W = input_.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor<T> dx(input_.shape());
  std::vector<T> dymat(static_cast<std::size_t>(out) * 4 * HW);
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < out; ++o) {
      T acc{0};
      for (int a = 0; a < 2; ++a) {
        for (int bb = 0; bb < 2; ++bb) {
          T* dst = dymat.data() + static_cast<std::size_t>(o * 4 + a * 2 + bb) * HW;
          for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
              const T g = dy.at(n, o, 2 * i + a, 2 * j + bb);
              dst[static_cast<std::size_t>(i) * W + j] = g;
              acc += g;
            }
          }
        }
      }
      bias.grad[static_cast<std::size_t>(o)] += acc;
    }
    detail::gemm(false, true, in, out * 4, static_cast<int>(HW), T{1}, &input_.at(n, 0, 0, 0), static_cast<int>(HW),
                 dymat.data(), static_cast<int>(HW), T{1}, weight.grad.data(), out * 4);
    detail::gemm(false, false, in, static_cast<int>(HW), out * 4, T{1}, weight.value.data(), out * 4, dymat.data(),
                 static_cast<int>(HW), T{0}, &dx.at(n, 0, 0, 0), static_cast<int>(HW));
  }
  return dx;
}

// ---------------------------------------------------------------- free ops

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw Error(ErrorCode::ShapeMismatch, shape_string(a.shape()) + " + " + shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat");
  if (b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw Error(ErrorCode::ShapeMismatch, "concat " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t HW = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor<T> y({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(&a.at(n, 0, 0, 0), Ca * HW, &y.at(n, 0, 0, 0));
    std::copy_n(&b.at(n, 0, 0, 0), Cb * HW, &y.at(n, Ca, 0, 0));
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& d, int channels_a) {
  const int N = d.dim(0), C = d.dim(1), H = d.dim(2), W = d.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor<T> a({N, channels_a, H, W}), b({N, C - channels_a, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy_n(&d.at(n, 0, 0, 0), channels_a * HW, &a.at(n, 0, 0, 0));
    std::copy_n(&d.at(n, channels_a, 0, 0), (C - channels_a) * HW, &b.at(n, 0, 0, 0));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, Padding pad) {
  require_rank4(x.shape(), "reflect_pad");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (pad.top >= H || pad.bottom >= H || pad.left >= W || pad.right >= W) {
    throw Error(ErrorCode::ShapeMismatch, "reflect padding larger than input " + shape_string(x.shape()));
  }
  const int OH = H + pad.top + pad.bottom, OW = W + pad.left + pad.right;
  Tensor<T> y({N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < OH; ++r) {
        const int ir = reflect_index(r - pad.top, H);
        for (int q = 0; q < OW; ++q) y.at(n, c, r, q) = x.at(n, c, ir, reflect_index(q - pad.left, W));
      }
  return y;
}

template <typename T>
Tensor<T> reflect_pad_backward(const Tensor<T>& dy, Padding pad) {
  const int N = dy.dim(0), C = dy.dim(1), OH = dy.dim(2), OW = dy.dim(3);
  const int H = OH - pad.top - pad.bottom, W = OW - pad.left - pad.right;
  Tensor<T> dx({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < OH; ++r) {
        const int ir = reflect_index(r - pad.top, H);
        for (int q = 0; q < OW; ++q) dx.at(n, c, ir, reflect_index(q - pad.left, W)) += dy.at(n, c, r, q);
      }
  return dx;
}

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& x, int top, int left, int height, int width) {
  require_rank4(x.shape(), "crop_spatial");
  const int N = x.dim(0), C = x.dim(1);
  if (top < 0 || left < 0 || top + height > x.dim(2) || left + width > x.dim(3)) {
    throw Error(ErrorCode::ShapeMismatch, "crop outside " + shape_string(x.shape()));
  }
  Tensor<T> y({N, C, height, width});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < height; ++r) std::copy_n(&x.at(n, c, top + r, left), width, &y.at(n, c, r, 0));
  return y;
}

template <typename T>
Tensor<T> crop_spatial_backward(const Tensor<T>& dy, const Shape& input_shape, int top, int left) {
  Tensor<T> dx(input_shape);
  const int N = dy.dim(0), C = dy.dim(1), height = dy.dim(2), width = dy.dim(3);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < height; ++r) std::copy_n(&dy.at(n, c, r, 0), width, &dx.at(n, c, top + r, left));
  return dx;
}

#define PLUME_INSTANTIATE_LAYERS(T)                                                              \
  template void fill_normal<T>(Tensor<T>&, double, InitRng&);                                    \
  template void zero_grads<T>(const ParamList<T>&);                                              \
  template class Conv2d<T>;                                                                      \
  template class BatchNorm2d<T>;                                                                 \
  template class ReLU<T>;                                                                        \
  template class MaxPool2d<T>;                                                                   \
  template class GlobalAvgPool<T>;                                                               \
  template class Linear<T>;                                                                      \
  template class UpConv2x2<T>;                                                                   \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, int);             \
  template Tensor<T> reflect_pad<T>(const Tensor<T>&, Padding);                                  \
  template Tensor<T> reflect_pad_backward<T>(const Tensor<T>&, Padding);                         \
  template Tensor<T> crop_spatial<T>(const Tensor<T>&, int, int, int, int);                      \
  template Tensor<T> crop_spatial_backward<T>(const Tensor<T>&, const Shape&, int, int);

PLUME_INSTANTIATE_LAYERS(float)
PLUME_INSTANTIATE_LAYERS(double)

#undef PLUME_INSTANTIATE_LAYERS

void set_compute_threads(int threads) { openblas_set_num_threads(std::max(1, threads)); }

}  // namespace plume::nn

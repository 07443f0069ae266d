#pragma once

#include <optional>
#include <random>
#include <utility>

#include "plume/error.hpp"
#include "plume/tensor.hpp"

namespace plume::augment {

using Rng = std::mt19937_64;

enum class CropMode { TrainRandom, EvalCenter };

struct TransformPolicy {
  bool enable_flips = true;
  bool enable_rot90 = true;
  int crop_size = 90;
  CropMode mode = CropMode::TrainRandom;

  static TransformPolicy eval(int crop_size = 90) { return {false, false, crop_size, CropMode::EvalCenter}; }
};

struct CropOffset {
  int row = 0;
  int col = 0;
  bool operator==(const CropOffset&) const = default;
};

// All transforms take and return C x H x W tensors.

template <typename T>
Tensor<T> flip_h(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < H; ++r)
      for (int x = 0; x < W; ++x) out.at(c, r, x) = t.at(c, r, W - 1 - x);
  return out;
}

template <typename T>
Tensor<T> flip_v(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < H; ++r)
      for (int x = 0; x < W; ++x) out.at(c, r, x) = t.at(c, H - 1 - r, x);
  return out;
}

/// Counter-clockwise rotation by quarter_turns * 90 degrees. One quarter turn
/// sends input (r, c) to output (W-1-c, r).
template <typename T>
Tensor<T> rot90(const Tensor<T>& t, int quarter_turns) {
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  if (H != W) throw Error(ErrorCode::NonSquare, shape_string(t.shape()));
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return t;
  const int n = H;
  Tensor<T> out(t.shape());
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < n; ++r) {
      for (int x = 0; x < n; ++x) {
        switch (k) {
          case 1: out.at(c, n - 1 - x, r) = t.at(c, r, x); break;
          case 2: out.at(c, n - 1 - r, n - 1 - x) = t.at(c, r, x); break;
          default: out.at(c, x, n - 1 - r) = t.at(c, r, x); break;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop_at(const Tensor<T>& t, CropOffset offset, int size) {
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  if (size <= 0 || size > H || size > W || offset.row < 0 || offset.col < 0 || offset.row + size > H ||
      offset.col + size > W) {
    throw Error(ErrorCode::CropTooLarge, std::to_string(size) + " at (" + std::to_string(offset.row) + ", " +
                                             std::to_string(offset.col) + ") on " + shape_string(t.shape()));
  }
  Tensor<T> out({C, size, size});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < size; ++r)
      for (int x = 0; x < size; ++x) out.at(c, r, x) = t.at(c, offset.row + r, offset.col + x);
  return out;
}

inline CropOffset center_offset(int height, int width, int size) { return {(height - size) / 2, (width - size) / 2}; }

/// Uniform top-left offset in [0, H-size] x [0, W-size]; the offset is returned so
/// a paired tensor can be cropped identically.
template <typename T>
std::pair<Tensor<T>, CropOffset> random_crop(const Tensor<T>& t, int size, Rng& rng) {
  const int H = t.dim(1), W = t.dim(2);
  if (size <= 0 || size > H || size > W) {
    throw Error(ErrorCode::CropTooLarge, std::to_string(size) + " on " + shape_string(t.shape()));
  }
  std::uniform_int_distribution<int> rows(0, H - size), cols(0, W - size);
  CropOffset offset;
  offset.row = rows(rng);
  offset.col = cols(rng);
  return {crop_at(t, offset, size), offset};
}

/// Parameters of one sampled transform sequence (flips, then rotation, then crop).
struct TransformDraw {
  bool flip_h = false;
  bool flip_v = false;
  int quarter_turns = 0;
  CropOffset offset;
};

TransformDraw sample_transform(const TransformPolicy& policy, int height, int width, Rng& rng);

template <typename T>
Tensor<T> apply_draw(const Tensor<T>& t, const TransformDraw& draw, int crop_size) {
  Tensor<T> out = draw.flip_h ? flip_h(t) : t;
  if (draw.flip_v) out = flip_v(out);
  if (draw.quarter_turns != 0) out = rot90(out, draw.quarter_turns);
  return crop_at(out, draw.offset, crop_size);
}

struct AugmentedPair {
  Tensor<float> scene;
  std::optional<Tensor<float>> mask;
};

/// Samples one transform sequence and applies it to the scene and, when given,
/// to its mask with identical parameters.
AugmentedPair apply_pair(const Tensor<float>& scene, const std::optional<Tensor<float>>& mask,
                         const TransformPolicy& policy, Rng& rng);

}  // namespace plume::augment

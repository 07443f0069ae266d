#include "plume/augment.hpp"

namespace plume::augment {

TransformDraw sample_transform(const TransformPolicy& policy, int height, int width, Rng& rng) {
  if (policy.crop_size <= 0 || policy.crop_size > height || policy.crop_size > width) {
    throw Error(ErrorCode::CropTooLarge,
                std::to_string(policy.crop_size) + " on " + std::to_string(height) + "x" + std::to_string(width));
  }
  TransformDraw draw;
  if (policy.mode == CropMode::EvalCenter) {
    draw.offset = center_offset(height, width, policy.crop_size);
    return draw;
  }
  std::bernoulli_distribution coin(0.5);
  if (policy.enable_flips) {
    draw.flip_h = coin(rng);
    draw.flip_v = coin(rng);
  }
  if (policy.enable_rot90) {
    if (height != width) throw Error(ErrorCode::NonSquare, std::to_string(height) + "x" + std::to_string(width));
    draw.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  }
  // A quarter turn swaps the axes, so the crop range is taken after rotation.
  const bool swapped = draw.quarter_turns % 2 == 1;
  const int h = swapped ? width : height;
  const int w = swapped ? height : width;
  std::uniform_int_distribution<int> rows(0, h - policy.crop_size), cols(0, w - policy.crop_size);
  draw.offset.row = rows(rng);
  draw.offset.col = cols(rng);
  return draw;
}

AugmentedPair apply_pair(const Tensor<float>& scene, const std::optional<Tensor<float>>& mask,
                         const TransformPolicy& policy, Rng& rng) {
  if (scene.rank() != 3) throw Error(ErrorCode::PairMismatch, "scene must be C x H x W");
  if (mask && (mask->rank() != 3 || mask->dim(1) != scene.dim(1) || mask->dim(2) != scene.dim(2))) {
    throw Error(ErrorCode::PairMismatch,
                "mask " + shape_string(mask->shape()) + " vs scene " + shape_string(scene.shape()));
  }
  const TransformDraw draw = sample_transform(policy, scene.dim(1), scene.dim(2), rng);
  AugmentedPair out{apply_draw(scene, draw, policy.crop_size), std::nullopt};
  if (mask) out.mask = apply_draw(*mask, draw, policy.crop_size);
  return out;
}

}  // namespace plume::augment

#include <array>
#include <numeric>
#include <random>

#include "doctest.h"
#include "plume/metrics.hpp"
#include "plume/synth.hpp"
#include "test_support.hpp"

using namespace plume;
using namespace plume::metrics;
using plume::test::error_code_of;
using plume::test::random_tensor;

namespace {

Tensor<std::uint8_t> random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution on(p);
  Tensor<std::uint8_t> m({h, w});
  for (auto& v : m.vec()) v = on(rng) ? 1 : 0;
  return m;
}

Tensor<std::uint8_t> rows(int h, int w, std::initializer_list<int> set) {
  Tensor<std::uint8_t> m({h, w});
  for (int r : set)
    for (int c = 0; c < w; ++c) m[static_cast<std::size_t>(r) * w + c] = 1;
  return m;
}

// conv(12 -> 2, 3x3, pad 1) -> global average -> linear(2 -> 1)
struct ToyNet {
  nn::InitRng rng{1};
  nn::Conv2d<float> conv{"conv", {12, 2, 3, 1, 1, false}, rng};
  nn::GlobalAvgPool<float> gap;
  nn::Linear<float> fc{"fc", 2, 1, rng};

  Tensor<float> forward(const Tensor<float>& x, nn::Mode) { return fc.forward(gap.forward(conv.forward(x))); }
  Tensor<float> backward(const Tensor<float>& dz) { return conv.backward(gap.backward(fc.backward(dz)), false); }
  nn::ParamList<float> params() {
    nn::ParamList<float> p;
    conv.collect(p);
    fc.collect(p);
    return p;
  }
  nn::Conv2d<float>& first_conv() { return conv; }
};

// Hand chain rule for ToyNet on one sample: per-channel sum of |dL/dW|.
std::vector<double> toy_oracle(ToyNet& net, const Tensor<float>& x, float target) {
  const int H = x.dim(1), W = x.dim(2);
  const auto& w = net.conv.weight.value;
  std::array<double, 2> pooled{};
  for (int o = 0; o < 2; ++o) {
    double s = 0;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        for (int ch = 0; ch < 12; ++ch)
          for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
              const int rr = r + kr - 1, cc = c + kc - 1;
              if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
              s += w[((o * 12 + ch) * 3 + kr) * 3 + kc] * x.at(ch, rr, cc);
            }
    pooled[o] = s / (H * W);
  }
  const double z = net.fc.bias.value[0] + net.fc.weight.value[0] * pooled[0] + net.fc.weight.value[1] * pooled[1];
  const double dz = 1.0 / (1.0 + std::exp(-z)) - target;
  std::vector<double> per_channel(12, 0.0);
  for (int o = 0; o < 2; ++o) {
    const double dy = dz * net.fc.weight.value[o] / (H * W);  // same for every output pixel
    for (int ch = 0; ch < 12; ++ch)
      for (int kr = 0; kr < 3; ++kr)
        for (int kc = 0; kc < 3; ++kc) {
          double g = 0;
          for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
              const int rr = r + kr - 1, cc = c + kc - 1;
              if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
              g += dy * x.at(ch, rr, cc);
            }
          per_channel[ch] += std::abs(g);
        }
  }
  return per_channel;
}

}  // namespace

TEST_CASE("confusion and accuracy match brute force") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 300), bit(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<int> p(n), t(n);
    for (int i = 0; i < n; ++i) p[i] = bit(rng), t[i] = bit(rng);
    ConfusionCounts expect;
    for (int i = 0; i < n; ++i) {
      expect.tp += p[i] == 1 && t[i] == 1;
      expect.tn += p[i] == 0 && t[i] == 0;
      expect.fp += p[i] == 1 && t[i] == 0;
      expect.fn += p[i] == 0 && t[i] == 1;
    }
    const auto c = confusion(p, t);
    CHECK(c == expect);
    CHECK(c.total() == static_cast<std::uint64_t>(n));
    CHECK(accuracy(c) == static_cast<double>(expect.tp + expect.tn) / n);
    CHECK(accuracy(c) == accuracy({c.tn, c.tp, c.fn, c.fp}));
  }
  const std::vector<int> a{1, 0, 1}, b{1, 0};
  CHECK(error_code_of([&] { confusion(a, b); }) == ErrorCode::LengthMismatch);
  CHECK(error_code_of([] { accuracy({}); }) == ErrorCode::EmptyEvaluation);
  CHECK(confusion(a, a).fp == 0);
  CHECK(confusion(a, a).fn == 0);
  CHECK(accuracy({1, 1, 0, 0}) == 1.0);
}

TEST_CASE("published confusion ratios give 94.3 percent") {
  const ConfusionCounts c{467, 476, 24, 33};
  CHECK(accuracy(c) == doctest::Approx(0.943).epsilon(1e-12));
}

TEST_CASE("iou") {
  CHECK(iou(rows(4, 5, {0, 1}), rows(4, 5, {1, 2})) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(rows(4, 5, {2}), rows(4, 5, {2})) == 1.0);
  CHECK(iou(rows(4, 5, {}), rows(4, 5, {3})) == 0.0);
  CHECK_FALSE(iou(rows(4, 5, {1}), rows(4, 5, {})));
  CHECK(error_code_of([] { iou(rows(4, 5, {}), rows(5, 4, {})); }) == ErrorCode::ShapeMismatch);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_mask(rng, 16, 16, 0.3), g = random_mask(rng, 16, 16, 0.3);
    std::uint64_t inter = 0, uni = 0, gt = 0;
    for (int i = 0; i < 256; ++i) {
      inter += p[i] && g[i];
      uni += p[i] || g[i];
      gt += g[i];
    }
    const auto v = iou(p, g);
    if (gt == 0) {
      CHECK_FALSE(v);
      continue;
    }
    CHECK(*v == static_cast<double>(inter) / static_cast<double>(uni));
    CHECK(*v >= 0.0);
    CHECK(*v <= 1.0);
    if (iou(g, p)) CHECK(*iou(g, p) == *v);
    CHECK((*v == 1.0) == (p == g));
  }
}

TEST_CASE("segmentation report on a hand-built three-image set") {
  SegmentationAccumulator acc;
  // 1: gt rows {1,2}, pred rows {2,3}: inter 4, union 12, |G| 8, |P| 8
  acc.add(rows(4, 4, {2, 3}), rows(4, 4, {1, 2}));
  // 2: negative image with a false alarm row
  acc.add(rows(4, 4, {0}), rows(4, 4, {}));
  // 3: gt row {0}, nothing predicted
  acc.add(rows(4, 4, {}), rows(4, 4, {0}));
  const auto r = acc.report();
  CHECK(r.confusion == ConfusionCounts{1, 0, 1, 1});
  CHECK(r.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(*r.iou_per_image_mean == doctest::Approx((1.0 / 3.0 + 0.0) / 2));
  CHECK(*r.iou_global == doctest::Approx(4.0 / (12 + 4 + 4)));
  CHECK(*r.area_recall_mean == doctest::Approx((0.5 + 0.0) / 2));
  CHECK(*r.area_ratio_mean == doctest::Approx((1.0 + 0.0) / 2));

  SegmentationAccumulator negatives;
  negatives.add(rows(4, 4, {}), rows(4, 4, {}));
  const auto nr = negatives.report();
  CHECK(nr.accuracy == 1.0);
  CHECK_FALSE(nr.iou_per_image_mean);
  CHECK_FALSE(nr.iou_global);
  CHECK(error_code_of([] { SegmentationAccumulator{}.report(); }) == ErrorCode::EmptyEvaluation);
}

TEST_CASE("segmentation accumulator matches brute force on 8x8 masks and merges") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution empty(0.3);
  std::vector<std::pair<Tensor<std::uint8_t>, Tensor<std::uint8_t>>> pairs;
  for (int i = 0; i < 60; ++i) {
    auto g = empty(rng) ? Tensor<std::uint8_t>({8, 8}) : random_mask(rng, 8, 8, 0.25);
    auto p = empty(rng) ? Tensor<std::uint8_t>({8, 8}) : random_mask(rng, 8, 8, 0.25);
    pairs.emplace_back(std::move(p), std::move(g));
  }
  SegmentationAccumulator whole, left, right;
  ConfusionCounts c;
  double iou_sum = 0, rec_sum = 0, ratio_sum = 0;
  std::uint64_t inter = 0, uni = 0;
  int positives = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [p, g] = pairs[i];
    whole.add(p, g);
    (i % 3 == 0 ? left : right).add(p, g);
    std::uint64_t in = 0, un = 0, np = 0, ng = 0;
    for (int k = 0; k < 64; ++k) {
      in += p[k] && g[k];
      un += p[k] || g[k];
      np += p[k];
      ng += g[k];
    }
    inter += in;
    uni += un;
    const bool pp = np > 0, gg = ng > 0;
    c.tp += pp && gg, c.tn += !pp && !gg, c.fp += pp && !gg, c.fn += !pp && gg;
    if (gg) {
      ++positives;
      iou_sum += static_cast<double>(in) / un;
      rec_sum += static_cast<double>(in) / ng;
      ratio_sum += static_cast<double>(np) / ng;
    }
  }
  const auto r = whole.report();
  CHECK(r.confusion == c);
  CHECK(*r.iou_per_image_mean == iou_sum / positives);
  CHECK(*r.area_recall_mean == rec_sum / positives);
  CHECK(*r.area_ratio_mean == ratio_sum / positives);
  CHECK(*r.iou_global == static_cast<double>(inter) / uni);
  left += right;
  const auto merged = left.report();
  CHECK(merged.confusion == r.confusion);
  CHECK(*merged.iou_global == *r.iou_global);
  CHECK(*merged.iou_per_image_mean == doctest::Approx(*r.iou_per_image_mean).epsilon(1e-12));
}

TEST_CASE("report json keeps undefined values") {
  MetricsReport r;
  r.confusion = {1, 2, 3, 4};
  r.accuracy = 0.3;
  r.iou_global = 0.25;
  r.channel_importance = std::vector<double>(12, 1.0 / 12);
  const nlohmann::json j = r;
  CHECK(j["iou_per_image_mean"].is_null());
  CHECK(j["confusion"]["fn"] == 4);
  const auto back = j.get<MetricsReport>();
  CHECK(back.confusion == r.confusion);
  CHECK(back.iou_global == r.iou_global);
  CHECK_FALSE(back.area_recall_mean);
  CHECK(back.channel_importance == r.channel_importance);
}

TEST_CASE("binarize_logits thresholds at zero") {
  const std::vector<float> z{-1.0f, 0.0f, 1e-6f, 3.0f};
  const auto m = binarize_logits(z, 2, 2);
  CHECK(m.vec() == std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(error_code_of([&] { binarize_logits(z, 3, 3); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("channel importance follows the chain rule on a toy network") {
  std::mt19937_64 rng(4);
  ToyNet net;
  std::vector<Tensor<float>> xs{random_tensor<float>({12, 6, 6}, rng), random_tensor<float>({12, 6, 6}, rng)};
  std::vector<Tensor<float>> ts{Tensor<float>({1, 1}, 1.0f), Tensor<float>({1, 1}, 0.0f)};
  const auto imp = channel_gradient_importance(net, std::span<const Tensor<float>>(xs), std::span<const Tensor<float>>(ts));
  std::vector<double> expect(12, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto o = toy_oracle(net, xs[s], ts[s][0]);
    for (int c = 0; c < 12; ++c) expect[c] += o[c] / 2;
  }
  const double total = std::accumulate(expect.begin(), expect.end(), 0.0);
  for (int c = 0; c < 12; ++c) CHECK(imp[c] == doctest::Approx(expect[c] / total).epsilon(1e-4));
  CHECK(std::accumulate(imp.begin(), imp.end(), 0.0) == doctest::Approx(1.0));
  for (auto* p : net.params()) CHECK(std::all_of(p->grad.vec().begin(), p->grad.vec().end(), [](float g) { return g == 0; }));
}

TEST_CASE("all importance lands on the only channel carrying signal") {
  // First-layer filters live only on channel 5, and the batch excites only
  // channel 5, so every other filter slice sees a zero input and zero gradient.
  std::mt19937_64 rng(5);
  ToyNet net;
  auto& w = net.conv.weight.value;
  for (int o = 0; o < 2; ++o)
    for (int c = 0; c < 12; ++c)
      if (c != 5)
        for (int k = 0; k < 9; ++k) w[(o * 12 + c) * 9 + k] = 0.0f;
  Tensor<float> x({12, 5, 5});
  const auto signal = random_tensor<float>({1, 5, 5}, rng, 0.5, 1.5);
  for (int i = 0; i < 25; ++i) x[5 * 25 + i] = signal[i];
  std::vector<Tensor<float>> xs{x};
  std::vector<Tensor<float>> ts{Tensor<float>({1, 1}, 0.0f)};
  const auto imp = channel_gradient_importance(net, std::span<const Tensor<float>>(xs), std::span<const Tensor<float>>(ts));
  CHECK(imp[5] == 1.0);
  CHECK(rank_channels(imp)[0] == 5);
}

TEST_CASE("importance permutes with the input channels") {
  std::mt19937_64 rng(6);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  ToyNet a, b;
  Tensor<float> moved(b.conv.weight.value.shape());
  for (int o = 0; o < 2; ++o)
    for (int c = 0; c < 12; ++c)
      for (int k = 0; k < 9; ++k) moved[(o * 12 + perm[c]) * 9 + k] = a.conv.weight.value[(o * 12 + c) * 9 + k];
  b.conv.weight.value = moved;
  const auto x = random_tensor<float>({12, 6, 6}, rng);
  Tensor<float> xp(x.shape());
  for (int c = 0; c < 12; ++c)
    for (int i = 0; i < 36; ++i) xp[perm[c] * 36 + i] = x[c * 36 + i];
  std::vector<Tensor<float>> xa{x}, xb{xp};
  std::vector<Tensor<float>> ts{Tensor<float>({1, 1}, 1.0f)};
  const auto ia = channel_gradient_importance(a, std::span<const Tensor<float>>(xa), std::span<const Tensor<float>>(ts));
  const auto ib = channel_gradient_importance(b, std::span<const Tensor<float>>(xb), std::span<const Tensor<float>>(ts));
  for (int c = 0; c < 12; ++c) CHECK(ib[perm[c]] == doctest::Approx(ia[c]).epsilon(1e-5));
}

TEST_CASE("rank_channels is a stable descending order") {
  const std::vector<double> v{0.1, 0.3, 0.1, 0.5};
  CHECK(rank_channels(v) == std::vector<int>{3, 1, 0, 2});
}

TEST_CASE("model evaluation on synthetic records") {
  catalog::SceneSource source;
  synth::DatasetOptions opts;
  opts.sites = 2;
  opts.scenes_per_site = 3;
  opts.seed = 9;
  const auto recs = synth::generate_in_memory(source, opts);

  models::Classifier<float> cls(models::ClassifierConfig::make_tiny(), 1);
  const auto r = evaluate_classifier(cls, recs, source, 90, 4);
  CHECK(r.confusion.total() == recs.size());
  CHECK(r.confusion == evaluate_classifier(cls, recs, source, 90, 5).confusion);
  const auto imp = channel_importance(cls, recs, source);
  CHECK(imp.size() == 12);
  CHECK(std::accumulate(imp.begin(), imp.end(), 0.0) == doctest::Approx(1.0));
  CHECK(std::all_of(imp.begin(), imp.end(), [](double v) { return v >= 0; }));

  models::Segmenter<float> seg(models::SegmenterConfig::make_tiny(), 1);
  const auto s = evaluate_segmentation(seg, recs, source, 90, 4);
  CHECK(s.confusion.total() == recs.size());
  CHECK(error_code_of([&] { evaluate_segmentation(seg, {}, source); }) == ErrorCode::EmptyEvaluation);
}

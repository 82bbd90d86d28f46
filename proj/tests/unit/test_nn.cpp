#include <gtest/gtest.h>

#include "../support/oracles.hpp"

using namespace volsynth;

namespace {

// Loss = sum(w .* f(x)) for a fixed random w, so dL/dy = w.
template <typename F>
double weighted_sum(const Tensor<double>& y, const Tensor<double>& w, F&&) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(1);
  nn::Conv2d<double> conv(2, 3, 3, "c");
  conv.init(rng);
  nn::ParamList<double> ps;
  conv.collect(ps);
  const auto x = randn<double>({2, 2, 5, 4}, rng);
  const auto y = conv.forward(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 3, 5, 4}));
  const auto& w = ps[0]->value;
  const auto& b = ps[1]->value;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) {
          double s = b[o];
          for (int i = 0; i < 2; ++i)
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= 5 || cc < 0 || cc >= 4) continue;
                s += w[((o * 2 + i) * 3 + dr + 1) * 3 + dc + 1] * x[((n * 2 + i) * 5 + rr) * 4 + cc];
              }
          EXPECT_NEAR(y[((n * 3 + o) * 5 + r) * 4 + c], s, 1e-12);
        }
}

TEST(Conv3d, MatchesDirectConvolution) {
  Rng rng(2);
  nn::Conv3d<double> conv(2, 2, "c");
  conv.init(rng);
  nn::ParamList<double> ps;
  conv.collect(ps);
  const auto x = randn<double>({1, 2, 3, 4, 3}, rng);
  const auto y = conv.forward(x);
  const auto& w = ps[0]->value;
  const auto& b = ps[1]->value;
  for (int o = 0; o < 2; ++o)
    for (int d = 0; d < 3; ++d)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) {
          double s = b[o];
          for (int i = 0; i < 2; ++i)
            for (int dd = -1; dd <= 1; ++dd)
              for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                  const int zd = d + dd, rr = r + dr, cc = c + dc;
                  if (zd < 0 || zd >= 3 || rr < 0 || rr >= 4 || cc < 0 || cc >= 3) continue;
                  s += w[(((o * 2 + i) * 3 + dd + 1) * 3 + dr + 1) * 3 + dc + 1] * x[((i * 3 + zd) * 4 + rr) * 3 + cc];
                }
          EXPECT_NEAR(y[((o * 3 + d) * 4 + r) * 3 + c], s, 1e-12);
        }
}

TEST(Layers, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(3);
  nn::Conv2d<double> c2(2, 3, 3, "c2");
  nn::Conv3d<double> c3(2, 2, "c3");
  nn::Linear<double> lin(5, 4, "lin");
  c2.init(rng);
  c3.init(rng);
  lin.init(rng);
  const auto x2 = randn<double>({2, 2, 5, 6}, rng);
  const auto x3 = randn<double>({1, 2, 3, 4, 4}, rng);
  const auto xl = randn<double>({3, 5}, rng);
  auto check = [&](auto& layer, const Tensor<double>& x) {
    nn::ParamList<double> ps;
    layer.collect(ps);
    const auto y = layer.forward(x);
    const auto w = randn<double>(y.shape(), rng);
    nn::zero_grad(ps);
    layer.backward(w);
    const auto analytic = oracle::grads_of(ps);
    auto loss = [&] { return weighted_sum(layer.forward(x), w, 0); };
    return oracle::finite_difference(ps, analytic, loss).max_rel_err;
  };
  EXPECT_LT(check(c2, x2), 1e-6);
  EXPECT_LT(check(c3, x3), 1e-6);
  EXPECT_LT(check(lin, xl), 1e-6);
}

TEST(Layers, InputGradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto check = [&](auto&& fwd, auto&& bwd, Tensor<double> x) {
    const auto y = fwd(x);
    const auto w = randn<double>(y.shape(), rng);
    const Tensor<double> dx = bwd(w, x);
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = x[i];
      x[i] = s + 1e-6;
      const double lp = weighted_sum(fwd(x), w, 0);
      x[i] = s - 1e-6;
      const double lm = weighted_sum(fwd(x), w, 0);
      x[i] = s;
      const double num = (lp - lm) / 2e-6;
      worst = std::max(worst, std::abs(num - dx[i]) / std::max(std::abs(num) + std::abs(dx[i]), 1e-6));
    }
    return worst;
  };
  nn::SiLU<double> act;
  EXPECT_LT(check([&](const Tensor<double>& x) { return act.forward(x); },
                  [&](const Tensor<double>& w, const Tensor<double>& x) { act.forward(x); return act.backward(w); },
                  randn<double>({2, 3, 4, 4}, rng)), 1e-6);
  // Odd extents exercise the ceil-mode pooling and cropped upsampling.
  EXPECT_LT(check([](const Tensor<double>& x) { return nn::avg_pool2(x); },
                  [](const Tensor<double>& w, const Tensor<double>& x) { return nn::avg_pool2_backward(w, x.shape()); },
                  randn<double>({1, 2, 5, 7}, rng)), 1e-6);
  EXPECT_LT(check([](const Tensor<double>& x) { return nn::upsample2(x, 5, 7); },
                  [](const Tensor<double>& w, const Tensor<double>& x) { return nn::upsample2_backward(w, x.shape()); },
                  randn<double>({1, 2, 3, 4}, rng)), 1e-6);
  nn::Conv2d<double> conv(2, 2, 3, "c");
  conv.init(rng);
  EXPECT_LT(check([&](const Tensor<double>& x) { return conv.forward(x); },
                  [&](const Tensor<double>& w, const Tensor<double>& x) { conv.forward(x); return conv.backward(w); },
                  randn<double>({1, 2, 4, 5}, rng)), 1e-6);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto pred = randn<double>({2, 3, 2, 2}, rng);
  const auto target = randn<double>(pred.shape(), rng);
  std::vector<double> weight(pred.size());
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = i % 3 == 0 ? 0.0 : 1.0;
  std::vector<std::uint8_t> labels(2 * 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 3);

  auto fd = [&](auto&& f, const Tensor<double>& g) {
    double worst = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double s = pred[i];
      pred[i] = s + 1e-6;
      const double lp = f();
      pred[i] = s - 1e-6;
      const double lm = f();
      pred[i] = s;
      const double num = (lp - lm) / 2e-6;
      worst = std::max(worst, std::abs(num - g[i]) / std::max(std::abs(num) + std::abs(g[i]), 1e-8));
    }
    return worst;
  };
  Tensor<double> g;
  nn::masked_mse<double>(pred, target, weight, &g);
  EXPECT_LT(fd([&] { return nn::masked_mse<double>(pred, target, weight, nullptr); }, g), 1e-6);
  nn::softmax_cross_entropy<double>(pred, labels, &g);
  EXPECT_LT(fd([&] { return nn::softmax_cross_entropy<double>(pred, labels, nullptr); }, g), 1e-6);
}

TEST(Losses, MaskedMseAveragesOnlyWeightedEntries) {
  const Tensor<double> p({4}, std::vector<double>{1, 2, 3, 4});
  const Tensor<double> t({4}, 0.0);
  const std::vector<double> w{0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(nn::masked_mse<double>(p, t, w, nullptr), (4.0 + 16.0) / 2.0);
  EXPECT_THROW(nn::masked_mse<double>(p, t, std::vector<double>(4, 0.0), nullptr), std::invalid_argument);
}

TEST(SliceUNet, GradientsMatchFiniteDifferences) {
  for (auto [embed, levels] : {std::pair{0, 2}, {6, 2}, {6, 3}, {0, 4}}) {
    SliceUNet<double> net(UNetConfig{2, 2, 3, embed, 4, levels}, 9);
    Rng rng(10);
    const auto x = randn<double>({2, 2, 5, 6}, rng);
    const auto e = randn<double>({2, std::max(1, embed)}, rng);
    const Tensor<double>* ep = embed ? &e : nullptr;
    const auto y = net.forward(x, ep);
    ASSERT_EQ(y.shape(), (std::vector<int>{2, 2, 5, 6}));
    const auto w = randn<double>(y.shape(), rng);
    const auto ps = net.parameters();
    nn::zero_grad(ps);
    const auto dx = net.backward(w);
    const auto analytic = oracle::grads_of(ps);
    auto loss = [&] { return weighted_sum(net.forward(x, ep), w, 0); };
    const auto gc = oracle::finite_difference(ps, analytic, loss, 1e-6, 1e-4, 3);
    EXPECT_LT(gc.max_rel_err, 1e-5) << "embed=" << embed << " levels=" << levels;
    // Input gradient on a few entries.
    auto xx = x;
    for (std::size_t i = 0; i < x.size(); i += 7) {
      xx[i] = x[i] + 1e-6;
      const double lp = weighted_sum(net.forward(xx, ep), w, 0);
      xx[i] = x[i] - 1e-6;
      const double lm = weighted_sum(net.forward(xx, ep), w, 0);
      xx[i] = x[i];
      EXPECT_NEAR((lp - lm) / 2e-6, dx[i], 1e-6 * std::max(1.0, std::abs(dx[i])));
    }
  }
}

TEST(SliceUNet, RejectsEmbeddingMismatchAndSingleLevel) {
  SliceUNet<float> net(UNetConfig{1, 1, 4, 0, 4}, 1);
  const Tensor<float> x({1, 1, 4, 4}), e({1, 3});
  EXPECT_THROW(net.forward(x, &e), std::invalid_argument);
  EXPECT_THROW(SliceUNet<float>(UNetConfig{1, 1, 4, 0, 4, 1}, 1), std::invalid_argument);
}

TEST(SliceUNet, WidthDoublesPerLevelUpToFourTimes) {
  const UNetConfig u{1, 1, 8, 0, 4, 5};
  EXPECT_EQ(u.level_width(0), 8);
  EXPECT_EQ(u.level_width(1), 16);
  EXPECT_EQ(u.level_width(2), 32);
  EXPECT_EQ(u.level_width(4), 32);
}

TEST(Adam, MinimisesQuadraticAndClipsGradient) {
  nn::Param<double> p("p", 2);
  p.value = {3.0, -2.0};
  nn::Adam<double> opt({&p}, {.lr = 0.05});
  for (int i = 0; i < 2000; ++i) {
    p.grad = {2 * p.value[0], 2 * p.value[1]};
    opt.step();
  }
  EXPECT_NEAR(p.value[0], 0.0, 1e-3);
  EXPECT_NEAR(p.value[1], 0.0, 1e-3);
  EXPECT_EQ(opt.steps(), 2000);

  // With clipping, a huge gradient leaves the first update at lr in magnitude (Adam normalises),
  // and the moment estimate reflects the clipped value.
  nn::Param<double> q("q", 1);
  nn::Adam<double> clipped({&q}, {.lr = 0.1, .grad_clip = 1.0});
  q.grad = {1e6};
  clipped.step();
  EXPECT_NEAR(clipped.first_moments()[0][0], 0.1 * 1.0, 1e-12);
}

TEST(Embedding, SinusoidalValues) {
  std::vector<double> out(4);
  nn::sinusoidal_embedding<double>(2.0, 4, out.data());
  EXPECT_DOUBLE_EQ(out[0], std::sin(2.0));
  EXPECT_DOUBLE_EQ(out[1], std::sin(2.0 * std::pow(10000.0, -0.5)));
  EXPECT_DOUBLE_EQ(out[2], std::cos(2.0));
  EXPECT_DOUBLE_EQ(out[3], std::cos(2.0 * std::pow(10000.0, -0.5)));
}

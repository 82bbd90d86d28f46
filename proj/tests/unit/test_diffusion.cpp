#include <gtest/gtest.h>

#include "../support/oracles.hpp"

using namespace volsynth;

TEST(Schedule, AlphaBarMatchesProductLoopAtDefaultAndLongHorizons) {
  for (int T : {300, 1000}) {
    const auto s = make_schedule(T, 1e-4, 0.02);
    const auto want = oracle::alpha_bar_product(T, 1e-4, 0.02);
    for (int t = 1; t <= T; ++t) EXPECT_NEAR(s.alpha_bar(t), want[t - 1], 1e-12) << "T=" << T << " t=" << t;
  }
}

TEST(Schedule, EndpointsAndMonotonicity) {
  const auto s = make_schedule(300, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(300), 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  for (int t = 2; t <= 300; ++t) {
    EXPECT_GT(s.beta(t), s.beta(t - 1));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha_bar(t), 0.0);
  }
}

TEST(Schedule, SingleStepUsesBetaStart) {
  const auto s = make_schedule(1, 0.01, 0.02);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.01);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.99);
}

TEST(Schedule, RejectsInvalidParameters) {
  EXPECT_THROW(make_schedule(0, 1e-4, 0.02), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), std::invalid_argument);
  const auto s = make_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(11), std::out_of_range);
}

TEST(Schedule, JsonRoundTrip) {
  const auto s = make_schedule(123, 2e-4, 0.03);
  const auto r = schedule_from_json(schedule_to_json(s));
  EXPECT_EQ(r.betas(), s.betas());
  EXPECT_EQ(r.alpha_bars(), s.alpha_bars());
  EXPECT_THROW(schedule_from_json({{"T", 3}, {"beta_start", 1e-4}, {"beta_end", 0.02}, {"kind", "cosine"}}), std::invalid_argument);
}

TEST(ForwardProcess, ClosedFormMatchesIteratedKernel) {
  const auto s = make_schedule(300, 1e-4, 0.02);
  for (int t : {1, 150, 300}) {
    const auto c = oracle::compare_forward(s, t, 2000, 64, 11 + t);
    EXPECT_NEAR(c.closed.mean, c.analytic_mean, 0.02 * c.analytic_mean + 1e-3) << "t=" << t;
    EXPECT_NEAR(c.iterated.mean, c.analytic_mean, 0.02 * c.analytic_mean + 1e-3) << "t=" << t;
    EXPECT_NEAR(c.closed.std, c.analytic_std, 0.02 * c.analytic_std) << "t=" << t;
    EXPECT_NEAR(c.iterated.std, c.analytic_std, 0.02 * c.analytic_std) << "t=" << t;
  }
}

TEST(ForwardProcess, QSampleIsLinearInInputs) {
  const auto s = make_schedule(50, 1e-4, 0.02);
  const Tensor<double> x0({3}, std::vector<double>{1.0, -0.5, 0.25});
  const Tensor<double> eps({3}, std::vector<double>{0.3, 0.0, -2.0});
  const auto xt = q_sample(x0, 20, eps, s);
  const double a = std::sqrt(oracle::alpha_bar_product(50, 1e-4, 0.02)[19]);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(xt[i], a * x0[i] + std::sqrt(1 - a * a) * eps[i], 1e-12);
  EXPECT_THROW(q_sample(x0, 0, eps, s), std::out_of_range);
  EXPECT_THROW(q_sample(x0, 1, Tensor<double>({2}), s), std::invalid_argument);
}

TEST(ReverseStep, InvertsForwardStepWithPerfectNoisePrediction) {
  // With eps_hat equal to the true noise, the posterior mean from x_1 is x0 exactly.
  const auto s = make_schedule(10, 1e-3, 0.02);
  Rng rng(3);
  const auto x0 = randn<double>({4, 5}, rng);
  const auto eps = randn<double>({4, 5}, rng);
  const auto x1 = q_sample(x0, 1, eps, s);
  const auto back = reverse_step(x1, eps, 1, s, Tensor<double>());
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back[i], x0[i], 1e-12);
}

TEST(ReverseStep, MatchesPosteriorMeanFormulaPlusSigmaNoise) {
  const auto s = make_schedule(20, 1e-4, 0.02);
  const Tensor<double> x({2}, std::vector<double>{0.7, -0.1});
  const Tensor<double> e({2}, std::vector<double>{0.2, 0.5});
  const Tensor<double> z({2}, std::vector<double>{1.0, -1.0});
  const int t = 7;
  const auto ab = oracle::alpha_bar_product(20, 1e-4, 0.02);
  const double beta = 1e-4 + (0.02 - 1e-4) * 6 / 19.0;
  const auto out = reverse_step(x, e, t, s, z);
  for (int i = 0; i < 2; ++i) {
    const double mean = (x[i] - beta / std::sqrt(1 - ab[t - 1]) * e[i]) / std::sqrt(1 - beta);
    EXPECT_NEAR(out[i], mean + std::sqrt(beta) * z[i], 1e-12);
  }
}

TEST(ReverseStep, FinalStepIgnoresNoise) {
  const auto s = make_schedule(5, 1e-4, 0.02);
  const Tensor<double> x({2}, 0.5), e({2}, 0.1);
  EXPECT_EQ(reverse_step(x, e, 1, s, Tensor<double>({2}, 9.0)), reverse_step(x, e, 1, s, Tensor<double>({2}, -9.0)));
}

TEST(DdpmLoss, ZeroForPerfectPredictorAndGradientMatchesFiniteDifferences) {
  const auto s = make_schedule(30, 1e-4, 0.02);
  Rng rng(5);
  const auto x0 = randn<double>({1, 1, 4, 4}, rng);
  const auto eps = randn<double>({1, 1, 4, 4}, rng);
  EXPECT_DOUBLE_EQ(ddpm_loss([&](const Tensor<double>&, int) { return eps; }, x0, 9, eps, s), 0.0);

  oracle::TinyDenoiser net(17);
  ASSERT_LE(nn::parameter_count(net.parameters()), 50u);
  const int t = 12;
  auto loss = [&] { return ddpm_loss([&](const Tensor<double>& xt, int tt) { return net.forward(xt, tt); }, x0, t, eps, s); };
  nn::zero_grad(net.parameters());
  const auto pred = net.forward(q_sample(x0, t, eps, s), t);
  Tensor<double> g;
  const double l = nn::masked_mse<double>(pred, eps, {}, &g);
  EXPECT_NEAR(l, loss(), 1e-12);
  net.backward(g);
  const auto gc = oracle::finite_difference(net.parameters(), oracle::grads_of(net.parameters()), loss);
  EXPECT_LT(gc.max_rel_err, 1e-3);
  EXPECT_EQ(gc.checked, nn::parameter_count(net.parameters()));
}

#pragma once

#include <nlohmann/json.hpp>

#include "volsynth/tensor.hpp"

namespace volsynth {

// Linear beta schedule with derived alpha and cumulative alpha-bar tables.
// Timesteps are 1-based; alpha_bar(0) == 1 denotes the clean state.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(index(t)); }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  void check_timestep(int t, const char* what) const {
    if (t < 1 || t > steps()) {
      throw std::out_of_range(std::string(what) + ": timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(steps()) + "]");
    }
  }

  friend DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

 private:
  std::size_t index(int t) const {
    check_timestep(t, "DiffusionSchedule");
    return static_cast<std::size_t>(t - 1);
  }

  double beta_start_ = 0, beta_end_ = 0;
  std::vector<double> betas_, alphas_, alpha_bars_;
};

inline DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: beta endpoints must lie in (0, 1)");
  if (beta_start > beta_end) throw std::invalid_argument("make_schedule: beta_start must not exceed beta_end");
  DiffusionSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.resize(steps);
  s.alphas_.resize(steps);
  s.alpha_bars_.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - s.betas_[i];
    prod *= s.alphas_[i];
    s.alpha_bars_[i] = prod;
  }
  return s;
}

inline nlohmann::json schedule_to_json(const DiffusionSchedule& s) {
  return {{"T", s.steps()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}, {"kind", "linear"}};
}

inline DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "linear");
  if (kind != "linear") throw std::invalid_argument("schedule: unsupported kind '" + kind + "'");
  return make_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
}

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const DiffusionSchedule& sched) {
  sched.check_timestep(t, "q_sample");
  require_same_shape(x0, eps, "q_sample");
  const double ab = sched.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

// One ancestral DDPM step x_t -> x_{t-1} with sigma_t^2 = beta_t. The noise
// term is dropped at t == 1 so the final step is deterministic.
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const DiffusionSchedule& sched,
                       const Tensor<T>& noise) {
  sched.check_timestep(t, "reverse_step");
  require_same_shape(x_t, eps_hat, "reverse_step");
  if (t > 1) require_same_shape(x_t, noise, "reverse_step noise");
  const double beta = sched.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sigma = t > 1 ? std::sqrt(beta) : 0.0;
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv_sqrt_alpha * (static_cast<double>(x_t[i]) - coef * static_cast<double>(eps_hat[i]));
    if (sigma > 0.0) v += sigma * static_cast<double>(noise[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

// ||eps - denoiser(q_sample(x0, t, eps), t)||^2 averaged over elements.
template <typename T, typename Denoiser>
double ddpm_loss(Denoiser&& denoiser, const Tensor<T>& x0, int t, const Tensor<T>& eps, const DiffusionSchedule& sched) {
  const Tensor<T> xt = q_sample(x0, t, eps, sched);
  const Tensor<T> pred = denoiser(xt, t);
  if (!pred.same_shape(eps)) throw std::invalid_argument("ddpm_loss: prediction shape " + shape_string(pred.shape()) +
                                                         " does not match noise shape " + shape_string(eps.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
    s += d * d;
  }
  return eps.empty() ? 0.0 : s / static_cast<double>(eps.size());
}

inline int uniform_timestep(const DiffusionSchedule& sched, Rng& rng) {
  return std::uniform_int_distribution<int>(1, sched.steps())(rng);
}

}  // namespace volsynth

#pragma once

// Gaussian diffusion machinery: noise schedule, forward process, training
// loss, and the ancestral sampler. The denoiser is abstract here; it applies
// the timestep-gated condition selection internally.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "diffbgm/conditioning.hpp"
#include "diffbgm/core.hpp"
#include "diffbgm/pianoroll.hpp"

namespace diffbgm {

struct NoiseSchedule {
  int N = 0;
  std::vector<double> beta;       // beta[t-1] = beta_t
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // running product of alpha

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
  double alpha_bar_at(int t) const { return alpha_bar[t - 1]; }
};

inline NoiseSchedule make_schedule(const std::string& kind, int N,
                                   double beta_start, double beta_end) {
  if (N < 1) throw ConfigError("schedule needs N >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.N = N;
  s.beta.resize(N);
  for (int t = 1; t <= N; ++t) {
    if (kind == "linear") {
      s.beta[t - 1] = N == 1 ? beta_start
                             : beta_start + static_cast<double>(t - 1) / (N - 1) *
                                                (beta_end - beta_start);
    } else if (kind == "constant") {
      s.beta[t - 1] = beta_start;
    } else {
      throw ConfigError("unknown schedule kind: " + kind);
    }
  }
  s.alpha.resize(N);
  s.alpha_bar.resize(N);
  double prod = 1.0;
  for (int t = 1; t <= N; ++t) {
    s.alpha[t - 1] = 1.0 - s.beta[t - 1];
    prod *= s.alpha[t - 1];
    s.alpha_bar[t - 1] = prod;
  }
  return s;
}

// Noise-prediction network interface. cond may be null (unconditional); the
// implementation selects Fv or Fl per timestep before its attention layers.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& x_t, int t,
                         const ConditionFeatures* cond) const = 0;
};

inline void check_timestep(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.N)
    throw std::out_of_range("timestep " + std::to_string(t) +
                            " outside [1," + std::to_string(s.N) + "]");
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  check_timestep(t, sched);
  if (!x0.same_shape(eps))
    throw std::invalid_argument("q_sample: x0 and eps shapes differ");
  double a = std::sqrt(sched.alpha_bar_at(t));
  double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = a * x0.v[i] + b * eps.v[i];
  return out;
}

// Noise-prediction MSE (mean over entries) at one (x0, t, eps) draw.
inline double training_loss(const Tensor& x0, int t, const Tensor& eps,
                            const ConditionFeatures* cond,
                            const NoisePredictor& net,
                            const NoiseSchedule& sched) {
  Tensor x_t = q_sample(x0, t, eps, sched);
  Tensor pred = net.predict(x_t, t, cond);
  if (!pred.same_shape(eps))
    throw std::invalid_argument("training_loss: net output shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    double d = eps.v[i] - pred.v[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

// One reverse transition. sigma_t^2 = beta_t; the caller passes zero noise at
// t = 1.
inline Tensor p_sample_step(const Tensor& x_t, int t,
                            const ConditionFeatures* cond,
                            const NoisePredictor& net, const Tensor& noise,
                            const NoiseSchedule& sched) {
  check_timestep(t, sched);
  Tensor pred = net.predict(x_t, t, cond);
  double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
  double coef = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  double sigma = std::sqrt(sched.beta_at(t));
  Tensor out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = inv_sqrt_alpha * (x_t.v[i] - coef * pred.v[i]) +
               sigma * noise.v[i];
  return out;
}

// Full ancestral sampling loop over an arbitrary state shape.
inline Tensor sample_tensor(const NoisePredictor& net,
                            const ConditionFeatures* cond,
                            const NoiseSchedule& sched,
                            const std::vector<std::size_t>& shape,
                            std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(shape);
  for (double& v : x.v) v = rng.normal();
  Tensor noise(shape);
  for (int t = sched.N; t >= 1; --t) {
    if (t > 1)
      for (double& v : noise.v) v = rng.normal();
    else
      std::fill(noise.v.begin(), noise.v.end(), 0.0);
    x = p_sample_step(x, t, cond, net, noise, sched);
  }
  return x;
}

inline PianoRoll generate(const NoisePredictor& net,
                          const ConditionFeatures* cond,
                          const NoiseSchedule& sched, std::uint64_t seed) {
  Tensor x0 = sample_tensor(net, cond, sched,
                            {2, kRollSteps, kRollPitches}, seed);
  return unscale_roll(x0);
}

}  // namespace diffbgm

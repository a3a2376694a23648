// Copyright 2026 The Backbay Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Stochastic machinery behind the backdoor trigger: the modified
// Fokker-Planck drift, a 1-D density evolver, random-walk Metropolis, a
// small Bayesian state-space model and the backward diffusion sampler.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "backbay/poison_policy.h"
#include "backbay/rng.h"
#include "backbay/trigger_forge.h"

namespace backbay::fp {

/// A schedule value as a function of the step t in [0, T].
struct Curve {
  enum class Kind { kConstant, kLinear };
  Kind kind = Kind::kConstant;
  double start = 0.0;
  double end = 0.0;

  static Curve Constant(double v) { return {Kind::kConstant, v, v}; }
  static Curve Linear(double from, double to) {
    return {Kind::kLinear, from, to};
  }

  double operator()(int t, int horizon) const {
    if (kind == Kind::kConstant || horizon == 0) return start;
    return start + (end - start) * static_cast<double>(t) / horizon;
  }
};

struct DiffusionSchedule {
  int T = 10;
  Curve alpha = Curve::Linear(0.0, 1.0);
  Curve beta = Curve::Constant(0.01);
  Curve sigma = Curve::Constant(0.1);

  double alpha_at(int t) const { return alpha(t, T); }
  double beta_at(int t) const { return beta(t, T); }
  double sigma_at(int t) const { return sigma(t, T); }

  /// Checks T >= 1, alpha in [0, 1] and sigma >= 0 on every step.
  void validate() const;
};

struct FpNonDecParams {
  double mu = 0.0;
  double nu = 0.0;
  double sigma2 = 0.0;
};

class StabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Density on a uniform cell-centred grid; x_i = x0 + i * dx.
class DensityGrid {
 public:
  /// Requires p >= 0 and sum(p) * dx == 1 within 1e-9.
  DensityGrid(double x0, double dx, std::vector<double> p);

  /// Rescales arbitrary nonnegative weights to unit mass.
  static DensityGrid Normalized(double x0, double dx, std::vector<double> p);
  /// Gaussian bump of the given mean/std on n cells spanning [lo, hi].
  static DensityGrid Gaussian(double lo, double hi, std::size_t n, double mean,
                              double stddev);

  std::size_t size() const { return p_.size(); }
  double dx() const { return dx_; }
  double x0() const { return x0_; }
  double x(std::size_t i) const { return x0_ + dx_ * static_cast<double>(i); }
  const std::vector<double>& p() const { return p_; }

  double mass() const;
  double mean() const;
  double variance() const;

 private:
  friend DensityGrid evolve_density(const DensityGrid&,
                                    const DiffusionSchedule&, int, double,
                                    std::size_t, double, double);
  DensityGrid() = default;

  double x0_ = 0.0;
  double dx_ = 1.0;
  std::vector<double> p_;
};

struct LinearGaussianModel {
  double transition_std = 1.0;
  double observation_std = 1.0;
  double weight_prior_mean = 0.0;
  double weight_prior_std = 1.0;

  void validate() const;
};

struct SamplerOptions {
  std::size_t steps = 2000;
  double proposal_std = 0.5;
  double burn_in_frac = 0.2;
};

struct MetropolisChain {
  std::vector<double> samples;
  std::size_t accepted = 0;

  double acceptance_rate() const {
    return samples.empty() ? 0.0
                           : static_cast<double>(accepted) / samples.size();
  }
};

/// exp(sqrt(a)) * (x - exp(sqrt(1 - a)) * n1) + sigma(t) * n2, a = alpha(t).
/// n1 and n2 are the caller's noise draws.
double fp_drift(double x, int t, const DiffusionSchedule& sched, double n1,
                double n2);

/// d/dp [mu p^2 - nu p + sigma^2] = 2 mu p - nu.
double fp_nondec_rhs(double p, const FpNonDecParams& params);

/// Explicit conservative finite-volume step of
///   dP/dt = -d/dx (b(x) P) + D d2P/dx2,
///   b(x) = drift_scale * exp(sqrt(a)) * (x - exp(sqrt(1 - a))), a = alpha(t),
/// with upwind advection, central diffusion and zero-flux walls. Throws
/// StabilityError when dt * (2D/dx^2 + 2 max|b|/dx) > 1 or the density
/// drops below -1e-12.
DensityGrid evolve_density(const DensityGrid& grid,
                           const DiffusionSchedule& sched, int t, double dt,
                           std::size_t steps, double diffusion = 1.0,
                           double drift_scale = 1.0);

/// Random-walk Metropolis with a Gaussian proposal. The chain holds the
/// state after each of the n_steps transitions.
MetropolisChain metropolis_sample(
    const std::function<double(double)>& log_target, double init,
    std::size_t n_steps, double proposal_std, Rng rng);

/// Log of prod_t N(x_t; x_{t-1}, s_tr^2) N(y_t; x_t, s_obs^2), up to the
/// normalising constant of the posterior. states = x_0..x_T, obs = y_1..y_T.
double posterior_log_density(std::span<const double> states,
                             std::span<const double> obs,
                             const LinearGaussianModel& model);

/// Logistic likelihood P(y = 1 | x, w).
double logistic(double w, double x);

/// (1/n) sum_i P(y* = 1 | x*, w_i).
double posterior_predictive_mean(double x_star,
                                 std::span<const double> weight_samples);

/// Log prior + logistic log-likelihood of the weight.
double weight_log_posterior(double w,
                            std::span<const std::pair<double, int>> data,
                            const LinearGaussianModel& model);

/// n posterior weight draws: a Metropolis chain started at the prior mean,
/// burn-in dropped, remainder thinned uniformly.
std::vector<double> sample_weights_posterior(
    std::span<const std::pair<double, int>> data,
    const LinearGaussianModel& model, std::size_t n,
    const SamplerOptions& opts, Rng rng);

/// x_prev + alpha(t) m + beta(t) m + sigma(t) m.
double back_diffusion_step(double x_prev, const DiffusionSchedule& sched,
                           int t, double m);

/// One scalar backward chain per output sample. Chain i starts at
/// Normal(mu, 1), mu = prior_mean with probability poison_rate and the
/// rendered trigger sample otherwise, then takes the steps t = T-1 .. 1 of
/// x <- Normal(fp_drift(x, t, n1 = beta(t) z1, n2 = z2), 1). The result is
/// peak-normalised. Chain i draws from rng.split(i) only.
std::vector<float> bayes_backdoor_sample(const trigger::TriggerSpec& trigger,
                                         std::size_t target_len,
                                         const PoisonPolicy& policy,
                                         const DiffusionSchedule& sched,
                                         Rng rng);

/// log N(x_t; fp_drift(x_next, t, 0, 0), 1).
double chain_step_log_density(double x_t, double x_next, int t,
                              const DiffusionSchedule& sched);

/// Sum over t = 0..T-1 of chain_step_log_density(traj[t], traj[t+1], t),
/// with T = traj.size() - 1 <= sched.T.
double chain_log_joint(std::span<const double> traj,
                       const DiffusionSchedule& sched);

}  // namespace backbay::fp

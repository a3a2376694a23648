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

#include "backbay/fp_sampler.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace backbay::fp {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double LogNormalPdf(double x, double mean, double stddev) {
  double z = (x - mean) / stddev;
  return -0.5 * z * z - std::log(stddev) - kHalfLog2Pi;
}

// log(sigmoid(z)) without overflow.
double LogSigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

void CheckAlpha(double a, int t) {
  if (!(a >= 0.0 && a <= 1.0)) {
    throw std::domain_error("alpha(" + std::to_string(t) + ") = " +
                            std::to_string(a) + " is outside [0, 1]");
  }
}

}  // namespace

void DiffusionSchedule::validate() const {
  if (T < 1) throw std::invalid_argument("diffusion schedule needs T >= 1");
  for (int t = 0; t <= T; ++t) {
    CheckAlpha(alpha_at(t), t);
    if (!(sigma_at(t) >= 0.0)) {
      throw std::domain_error("sigma(" + std::to_string(t) + ") is negative");
    }
    if (!std::isfinite(beta_at(t))) {
      throw std::domain_error("beta(" + std::to_string(t) + ") is not finite");
    }
  }
}

void LinearGaussianModel::validate() const {
  if (!(transition_std > 0.0 && observation_std > 0.0 &&
        weight_prior_std > 0.0)) {
    throw std::invalid_argument(
        "LinearGaussianModel: standard deviations must be positive");
  }
}

DensityGrid::DensityGrid(double x0, double dx, std::vector<double> p)
    : x0_(x0), dx_(dx), p_(std::move(p)) {
  if (!(dx_ > 0.0) || p_.empty()) {
    throw std::invalid_argument("DensityGrid: need dx > 0 and a nonempty grid");
  }
  for (double v : p_) {
    if (!(v >= 0.0)) throw std::invalid_argument("DensityGrid: negative density");
  }
  if (std::abs(mass() - 1.0) > 1e-9) {
    throw std::invalid_argument("DensityGrid: total mass " +
                                std::to_string(mass()) + " is not 1");
  }
}

DensityGrid DensityGrid::Normalized(double x0, double dx,
                                    std::vector<double> p) {
  double total = std::accumulate(p.begin(), p.end(), 0.0) * dx;
  if (!(total > 0.0)) {
    throw std::invalid_argument("DensityGrid: weights have no mass");
  }
  for (double& v : p) v /= total;
  return DensityGrid(x0, dx, std::move(p));
}

DensityGrid DensityGrid::Gaussian(double lo, double hi, std::size_t n,
                                  double mean, double stddev) {
  if (n < 2 || !(hi > lo) || !(stddev > 0.0)) {
    throw std::invalid_argument("DensityGrid::Gaussian: bad grid or stddev");
  }
  double dx = (hi - lo) / static_cast<double>(n - 1);
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = (lo + dx * i - mean) / stddev;
    p[i] = std::exp(-0.5 * z * z);
  }
  return Normalized(lo, dx, std::move(p));
}

double DensityGrid::mass() const {
  return std::accumulate(p_.begin(), p_.end(), 0.0) * dx_;
}

double DensityGrid::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) m += x(i) * p_[i];
  return m * dx_ / mass();
}

double DensityGrid::variance() const {
  double mu = mean(), v = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) {
    v += (x(i) - mu) * (x(i) - mu) * p_[i];
  }
  return v * dx_ / mass();
}

double fp_drift(double x, int t, const DiffusionSchedule& sched, double n1,
                double n2) {
  const double a = sched.alpha_at(t);
  CheckAlpha(a, t);
  return std::exp(std::sqrt(a)) * (x - std::exp(std::sqrt(1.0 - a)) * n1) +
         sched.sigma_at(t) * n2;
}

double fp_nondec_rhs(double p, const FpNonDecParams& params) {
  return 2.0 * params.mu * p - params.nu;
}

DensityGrid evolve_density(const DensityGrid& grid,
                           const DiffusionSchedule& sched, int t, double dt,
                           std::size_t steps, double diffusion,
                           double drift_scale) {
  const double a = sched.alpha_at(t);
  CheckAlpha(a, t);
  if (!(dt > 0.0) || diffusion < 0.0) {
    throw std::invalid_argument("evolve_density: need dt > 0 and D >= 0");
  }
  const std::size_t n = grid.size();
  const double dx = grid.dx();
  const double gain = drift_scale * std::exp(std::sqrt(a));
  const double centre = std::exp(std::sqrt(1.0 - a));

  // Drift at the n - 1 interior interfaces x_{i + 1/2}.
  std::vector<double> b(n > 0 ? n - 1 : 0);
  double b_max = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    b[i] = gain * (grid.x(i) + 0.5 * dx - centre);
    b_max = std::max(b_max, std::abs(b[i]));
  }
  const double rate = 2.0 * diffusion / (dx * dx) + 2.0 * b_max / dx;
  if (dt * rate > 1.0) {
    throw StabilityError("evolve_density: dt = " + std::to_string(dt) +
                         " exceeds the explicit stability limit " +
                         std::to_string(1.0 / rate));
  }

  DensityGrid out;
  out.x0_ = grid.x0();
  out.dx_ = dx;
  out.p_ = grid.p();
  std::vector<double> flux(n > 0 ? n - 1 : 0);
  auto& p = out.p_;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double adv = b[i] > 0.0 ? b[i] * p[i] : b[i] * p[i + 1];
      flux[i] = adv - diffusion * (p[i + 1] - p[i]) / dx;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double in_flux = i > 0 ? flux[i - 1] : 0.0;
      double out_flux = i + 1 < n ? flux[i] : 0.0;
      p[i] -= dt / dx * (out_flux - in_flux);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] < -1e-12 || !std::isfinite(p[i])) {
      throw StabilityError("evolve_density: density blew up at cell " +
                           std::to_string(i));
    }
  }
  return out;
}

MetropolisChain metropolis_sample(
    const std::function<double(double)>& log_target, double init,
    std::size_t n_steps, double proposal_std, Rng rng) {
  if (!(proposal_std >= 0.0)) {
    throw std::invalid_argument("metropolis_sample: proposal_std < 0");
  }
  double x = init;
  double lp = log_target(x);
  if (!std::isfinite(lp)) {
    throw std::domain_error("metropolis_sample: log target not finite at init");
  }
  MetropolisChain chain;
  chain.samples.reserve(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    double proposal = x + proposal_std * rng.normal(0.0, 1.0);
    double lp_new = log_target(proposal);
    // NaN compares false, so an undefined target rejects.
    if (std::log(rng.uniform()) < lp_new - lp) {
      x = proposal;
      lp = lp_new;
      ++chain.accepted;
    }
    chain.samples.push_back(x);
  }
  return chain;
}

double posterior_log_density(std::span<const double> states,
                             std::span<const double> obs,
                             const LinearGaussianModel& model) {
  model.validate();
  if (states.size() != obs.size() + 1) {
    throw std::invalid_argument(
        "posterior_log_density: need |states| = |obs| + 1");
  }
  double total = 0.0;
  for (std::size_t t = 1; t < states.size(); ++t) {
    total += LogNormalPdf(states[t], states[t - 1], model.transition_std);
    total += LogNormalPdf(obs[t - 1], states[t], model.observation_std);
  }
  return total;
}

double logistic(double w, double x) { return 1.0 / (1.0 + std::exp(-w * x)); }

double posterior_predictive_mean(double x_star,
                                 std::span<const double> weight_samples) {
  if (weight_samples.empty()) {
    throw std::invalid_argument("posterior_predictive_mean: no samples");
  }
  double sum = 0.0;
  for (double w : weight_samples) sum += logistic(w, x_star);
  return sum / static_cast<double>(weight_samples.size());
}

double weight_log_posterior(double w,
                            std::span<const std::pair<double, int>> data,
                            const LinearGaussianModel& model) {
  double lp = LogNormalPdf(w, model.weight_prior_mean, model.weight_prior_std);
  for (const auto& [x, y] : data) {
    lp += y != 0 ? LogSigmoid(w * x) : LogSigmoid(-w * x);
  }
  return lp;
}

std::vector<double> sample_weights_posterior(
    std::span<const std::pair<double, int>> data,
    const LinearGaussianModel& model, std::size_t n,
    const SamplerOptions& opts, Rng rng) {
  model.validate();
  if (n == 0) throw std::invalid_argument("sample_weights_posterior: n == 0");
  if (!(opts.burn_in_frac >= 0.0 && opts.burn_in_frac < 1.0)) {
    throw std::invalid_argument("sample_weights_posterior: burn_in_frac");
  }
  auto min_len = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) / (1.0 - opts.burn_in_frac)));
  std::size_t len = std::max(opts.steps, min_len);
  auto chain = metropolis_sample(
      [&](double w) { return weight_log_posterior(w, data, model); },
      model.weight_prior_mean, len, opts.proposal_std, rng);

  auto burn = static_cast<std::size_t>(opts.burn_in_frac * len);
  std::size_t kept = len - burn;
  std::vector<double> draws(n);
  for (std::size_t k = 0; k < n; ++k) {
    draws[k] = chain.samples[burn + k * kept / n];
  }
  return draws;
}

double back_diffusion_step(double x_prev, const DiffusionSchedule& sched,
                           int t, double m) {
  if (!(m >= 0.0 && m <= 1.0)) {
    throw std::domain_error("back_diffusion_step: m must be a probability");
  }
  return x_prev + sched.alpha_at(t) * m + sched.beta_at(t) * m +
         sched.sigma_at(t) * m;
}

std::vector<float> bayes_backdoor_sample(const trigger::TriggerSpec& trigger,
                                         std::size_t target_len,
                                         const PoisonPolicy& policy,
                                         const DiffusionSchedule& sched,
                                         Rng rng) {
  if (target_len == 0) {
    throw std::invalid_argument("bayes_backdoor_sample: target_len == 0");
  }
  sched.validate();
  const std::vector<float> rendered =
      trigger::render_trigger(trigger, target_len);

  std::vector<double> x0(target_len);
  ParallelFor(target_len, [&](std::size_t i) {
    Rng chain = rng.split(static_cast<std::uint64_t>(i));
    double mu = chain.uniform() < policy.poison_rate ? policy.prior_mean
                                                     : rendered[i];
    double x = chain.normal(mu, 1.0);
    for (int t = sched.T - 1; t >= 1; --t) {
      double n1 = sched.beta_at(t) * chain.normal(0.0, 1.0);
      double n2 = chain.normal(0.0, 1.0);
      x = chain.normal(fp_drift(x, t, sched, n1, n2), 1.0);
    }
    x0[i] = x;
  });

  double peak = 0.0;
  for (double v : x0) {
    if (!std::isfinite(v)) {
      throw std::overflow_error(
          "bayes_backdoor_sample: chain diverged; reduce diffusion.T");
    }
    peak = std::max(peak, std::abs(v));
  }
  std::vector<float> out(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    double v = peak > 0.0 ? x0[i] / peak : 0.0;
    out[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

double chain_step_log_density(double x_t, double x_next, int t,
                              const DiffusionSchedule& sched) {
  return LogNormalPdf(x_t, fp_drift(x_next, t, sched, 0.0, 0.0), 1.0);
}

double chain_log_joint(std::span<const double> traj,
                       const DiffusionSchedule& sched) {
  if (traj.empty() || traj.size() - 1 > static_cast<std::size_t>(sched.T)) {
    throw std::invalid_argument(
        "chain_log_joint: trajectory must hold 1..T+1 states");
  }
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    total += chain_step_log_density(traj[t], traj[t + 1],
                                    static_cast<int>(t), sched);
  }
  return total;
}

}  // namespace backbay::fp

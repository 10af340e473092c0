#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boostvi/density.hpp"
#include "boostvi/models.hpp"
#include "boostvi/random.hpp"

namespace boostvi {

enum class Estimator { Reparameterization, ScoreFunction };
enum class InitStrategy { RandomNormal, PerturbCurrent };

/// Entropy weight per boosting iteration: constant, or 1/sqrt(t+1).
struct LambdaSchedule {
  enum class Kind { Constant, InverseSqrt };
  Kind kind = Kind::InverseSqrt;
  double lambda0 = 1.0;

  static LambdaSchedule constant(double v) { return {Kind::Constant, v}; }
  static LambdaSchedule inverse_sqrt() { return {Kind::InverseSqrt, 1.0}; }
};

inline double lambda_at(std::size_t t, const LambdaSchedule& schedule) {
  if (schedule.kind == LambdaSchedule::Kind::Constant) return schedule.lambda0;
  return 1.0 / std::sqrt(static_cast<double>(t) + 1.0);
}

struct LmoConfig {
  Family family = Family::Gaussian;
  std::size_t n_mc_samples = 32;
  std::size_t n_steps = 2000;
  double step_size = 0.01;
  Estimator estimator = Estimator::Reparameterization;
  LambdaSchedule lambda = LambdaSchedule::inverse_sqrt();
  double scale_floor = kDefaultScaleFloor;
  double box = kDefaultParamBox;
  InitStrategy init = InitStrategy::RandomNormal;
  double init_scale = 1.0;
  std::size_t final_eval_samples = 512;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_mc_samples < 1) throw std::invalid_argument("LmoConfig: n_mc_samples must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("LmoConfig: step_size must be positive");
    if (!(scale_floor > 0.0)) throw std::invalid_argument("LmoConfig: scale_floor must be positive");
    if (!(box > 0.0)) throw std::invalid_argument("LmoConfig: box must be positive");
    if (!(init_scale > scale_floor)) throw std::invalid_argument("LmoConfig: init_scale must exceed scale_floor");
    if (lambda.kind == LambdaSchedule::Kind::Constant && !(lambda.lambda0 > 0.0)) {
      throw std::invalid_argument("LmoConfig: lambda must be positive");
    }
  }

  ParamBounds bounds() const { return {scale_floor, box}; }
};

struct LmoResult {
  BaseDensity atom;
  double relbo_estimate = 0.0;
  bool converged = false;
  std::size_t steps_used = 0;
  std::size_t restarts = 0;
};

class LmoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Monte-Carlo mean with its standard error.
struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

namespace detail {

inline McEstimate mean_and_stderr(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

inline double softplus_inverse(double y) {
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(std::max(y, 1e-300)));
}

}  // namespace detail

/// RELBO(s, lambda) = E_s[log p] - lambda E_s[log s] - E_s[log q_t], averaged
/// over n draws of s. With `q_t == nullptr` the residual term is dropped.
inline McEstimate relbo_estimate(const BaseDensity& s, const TargetModel& model, const Mixture* q_t,
                                 double lambda, std::size_t n, std::uint64_t seed) {
  if (s.dim() != model.dim) throw DimensionError(model.dim, s.dim());
  if (q_t && q_t->dim() != model.dim) throw DimensionError(model.dim, q_t->dim());
  if (n < 1) throw std::invalid_argument("relbo_estimate: n must be >= 1");
  const Samples z = sample(s, n, seed);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = z.row(i);
    double v = model.log_joint(zi) - lambda * base_log_prob(s, zi);
    if (q_t) v -= mixture_log_prob(*q_t, zi);
    f[i] = v;
  }
  return detail::mean_and_stderr(f);
}

/// Standard ELBO estimate E_s[log p - log s] on the same draws relbo_estimate uses.
inline McEstimate elbo_estimate(const BaseDensity& s, const TargetModel& model, std::size_t n,
                                std::uint64_t seed) {
  if (s.dim() != model.dim) throw DimensionError(model.dim, s.dim());
  const Samples z = sample(s, n, seed);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = z.row(i);
    f[i] = model.log_joint(zi) - base_log_prob(s, zi);
  }
  return detail::mean_and_stderr(f);
}

/// Gradient of the RELBO in (loc, log scale). The entropy term enters
/// analytically: dH/d(log scale_j) = 1 for both families.
struct RelboGradient {
  std::vector<double> loc;
  std::vector<double> log_scale;
  std::vector<double> loc_stderr;
  std::vector<double> log_scale_stderr;
  /// E_s[log p - log q_t] + lambda H(s) on the same draws.
  double objective = 0.0;
  /// Sample mean of log p - log q_t, for running baselines.
  double integrand_mean = 0.0;
};

inline RelboGradient relbo_grad(const BaseDensity& s, const TargetModel& model, const Mixture* q_t,
                                double lambda, std::size_t n, std::uint64_t seed, Estimator estimator,
                                std::optional<double> baseline = std::nullopt) {
  const std::size_t d = model.dim;
  if (s.dim() != d) throw DimensionError(d, s.dim());
  if (q_t && q_t->dim() != d) throw DimensionError(d, q_t->dim());
  if (n < 1) throw std::invalid_argument("relbo_grad: n must be >= 1");
  if (estimator == Estimator::Reparameterization && !model.has_gradient()) {
    throw std::invalid_argument("relbo_grad: reparameterization requires the model gradient");
  }
  const Samples eps = standard_noise(s.family, n, d, seed);
  const Samples z = transform_noise(s, eps);

  // Per-sample contributions, 2d columns: loc then log-scale.
  std::vector<double> contrib(n * 2 * d, 0.0);
  std::vector<double> f(n);
  std::vector<double> g(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = z.row(i);
    double* c = contrib.data() + i * 2 * d;
    if (estimator == Estimator::Reparameterization) {
      std::fill(g.begin(), g.end(), 0.0);
      double v = model.log_joint_grad(zi, g);
      if (q_t) {
        v -= mixture_log_prob(*q_t, zi);
        const auto gq = mixture_grad_log_prob(*q_t, zi);
        for (std::size_t j = 0; j < d; ++j) g[j] -= gq[j];
      }
      f[i] = v;
      for (std::size_t j = 0; j < d; ++j) {
        c[j] = g[j];
        c[d + j] = g[j] * s.scale[j] * eps.data[i * d + j];
      }
    } else {
      double v = model.log_joint(zi);
      if (q_t) v -= mixture_log_prob(*q_t, zi);
      f[i] = v;
    }
  }

  double f_sum = 0.0;
  for (double v : f) f_sum += v;
  if (estimator == Estimator::ScoreFunction) {
    for (std::size_t i = 0; i < n; ++i) {
      double b = 0.0;
      if (baseline) {
        b = *baseline;
      } else if (n > 1) {
        b = (f_sum - f[i]) / static_cast<double>(n - 1);  // leave-one-out
      }
      const double w = f[i] - b;
      double* c = contrib.data() + i * 2 * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = eps.data[i * d + j];
        if (s.family == Family::Gaussian) {
          c[j] = w * e / s.scale[j];
          c[d + j] = w * (e * e - 1.0);
        } else {
          const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
          c[j] = w * sgn / s.scale[j];
          c[d + j] = w * (std::abs(e) - 1.0);
        }
      }
    }
  }

  RelboGradient out;
  out.loc.assign(d, 0.0);
  out.log_scale.assign(d, 0.0);
  out.loc_stderr.assign(d, 0.0);
  out.log_scale_stderr.assign(d, 0.0);
  std::vector<double> col(n);
  for (std::size_t k = 0; k < 2 * d; ++k) {
    for (std::size_t i = 0; i < n; ++i) col[i] = contrib[i * 2 * d + k];
    const McEstimate m = detail::mean_and_stderr(col);
    if (k < d) {
      out.loc[k] = m.value;
      out.loc_stderr[k] = m.std_error;
    } else {
      out.log_scale[k - d] = m.value + lambda;
      out.log_scale_stderr[k - d] = m.std_error;
    }
  }
  out.integrand_mean = f_sum / static_cast<double>(n);
  out.objective = out.integrand_mean + lambda * entropy_closed_form(s);
  return out;
}

namespace detail {

/// Unconstrained LMO parameters: scale = floor + softplus(rho).
struct AtomParams {
  std::vector<double> loc;
  std::vector<double> rho;

  BaseDensity to_atom(Family family, const LmoConfig& cfg) const {
    std::vector<double> scale(rho.size());
    for (std::size_t j = 0; j < rho.size(); ++j) scale[j] = cfg.scale_floor + softplus(rho[j]);
    return BaseDensity(family, loc, std::move(scale), cfg.bounds());
  }
};

inline AtomParams initial_params(std::size_t d, const Mixture* q_t, const LmoConfig& cfg,
                                 std::uint64_t seed) {
  Rng rng(seed);
  AtomParams p{std::vector<double>(d), std::vector<double>(d)};
  if (cfg.init == InitStrategy::PerturbCurrent && q_t) {
    const Samples pick = sample(*q_t, 1, derive_seed(seed, 1));
    // Location from a draw of q_t, scale from the nearest atom.
    std::size_t best = 0;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < q_t->size(); ++i) {
      const double lp = base_log_prob(q_t->atoms[i], pick.row(0));
      if (lp > best_lp) {
        best_lp = lp;
        best = i;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      p.loc[j] = std::clamp(pick.row(0)[j], -cfg.box, cfg.box);
      p.rho[j] = softplus_inverse(std::max(q_t->atoms[best].scale[j], 2.0 * cfg.scale_floor) - cfg.scale_floor);
    }
    return p;
  }
  for (std::size_t j = 0; j < d; ++j) {
    p.loc[j] = std::clamp(rng.normal(), -cfg.box, cfg.box);
    p.rho[j] = softplus_inverse(cfg.init_scale - cfg.scale_floor);
  }
  return p;
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// Approximate LMO: stochastic gradient ascent (Adam) on the RELBO over
/// (loc, rho). Returns the parameter average at the best smoothed objective.
inline LmoResult lmo_solve(const TargetModel& model, const Mixture* q_t, std::size_t t,
                           const LmoConfig& cfg) {
  cfg.validate();
  const std::size_t d = model.dim;
  if (d == 0) throw std::invalid_argument("lmo_solve: model has zero dimension");
  if (q_t) {
    q_t->validate();
    if (q_t->dim() != d) throw DimensionError(d, q_t->dim());
  }
  if (cfg.estimator == Estimator::Reparameterization && !model.has_gradient()) {
    throw std::invalid_argument("lmo_solve: reparameterization requires the model gradient");
  }
  const double lambda = lambda_at(t, cfg.lambda);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  constexpr double kSmooth = 0.95;

  for (std::size_t attempt = 0; attempt < 2; ++attempt) {
    const std::uint64_t run_seed = derive_seed(cfg.seed, t, attempt);
    detail::AtomParams p = detail::initial_params(d, q_t, cfg, derive_seed(run_seed, 0));
    std::vector<double> m1(2 * d, 0.0), m2(2 * d, 0.0);
    detail::AtomParams avg = p;
    detail::AtomParams best = p;
    double ema = 0.0, best_ema = -std::numeric_limits<double>::infinity();
    double ema_at_three_quarters = 0.0;
    std::optional<double> running_baseline;
    const std::size_t warmup = cfg.n_steps / 10;
    bool failed = false;

    for (std::size_t step = 0; step < cfg.n_steps; ++step) {
      const BaseDensity atom = p.to_atom(cfg.family, cfg);
      const RelboGradient g = relbo_grad(atom, model, q_t, lambda, cfg.n_mc_samples,
                                         derive_seed(run_seed, step + 1), cfg.estimator,
                                         running_baseline);
      if (!std::isfinite(g.objective) || !detail::all_finite(g.loc) || !detail::all_finite(g.log_scale)) {
        failed = true;
        break;
      }
      if (cfg.estimator == Estimator::ScoreFunction) {
        running_baseline = running_baseline ? kSmooth * *running_baseline + (1.0 - kSmooth) * g.integrand_mean
                                            : g.integrand_mean;
      }
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step + 1));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step + 1));
      for (std::size_t k = 0; k < 2 * d; ++k) {
        double grad;
        if (k < d) {
          grad = g.loc[k];
        } else {
          const std::size_t j = k - d;
          // d/d rho = d/d log(scale) * sigmoid(rho) / scale
          grad = g.log_scale[j] * sigmoid(p.rho[j]) / atom.scale[j];
        }
        m1[k] = kBeta1 * m1[k] + (1.0 - kBeta1) * grad;
        m2[k] = kBeta2 * m2[k] + (1.0 - kBeta2) * grad * grad;
        const double delta = cfg.step_size * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + kAdamEps);
        if (k < d) {
          p.loc[k] = std::clamp(p.loc[k] + delta, -cfg.box, cfg.box);
        } else {
          p.rho[k - d] += delta;
        }
      }
      if (step == 0) {
        ema = g.objective;
        avg = p;
      } else {
        ema = kSmooth * ema + (1.0 - kSmooth) * g.objective;
        for (std::size_t j = 0; j < d; ++j) {
          avg.loc[j] = kSmooth * avg.loc[j] + (1.0 - kSmooth) * p.loc[j];
          avg.rho[j] = kSmooth * avg.rho[j] + (1.0 - kSmooth) * p.rho[j];
        }
      }
      if (step + 1 == (3 * cfg.n_steps) / 4) ema_at_three_quarters = ema;
      if (step >= warmup && ema > best_ema) {
        best_ema = ema;
        best = avg;
      }
    }
    if (failed) continue;
    if (cfg.n_steps == 0 || best_ema == -std::numeric_limits<double>::infinity()) best = avg;

    LmoResult out;
    out.atom = best.to_atom(cfg.family, cfg);
    const McEstimate final_est = relbo_estimate(out.atom, model, q_t, lambda, cfg.final_eval_samples,
                                                derive_seed(run_seed, 0xfe11ULL));
    if (!std::isfinite(final_est.value)) continue;
    out.relbo_estimate = final_est.value;
    out.steps_used = cfg.n_steps;
    out.restarts = attempt;
    out.converged = cfg.n_steps > 0 &&
                    std::abs(ema - ema_at_three_quarters) <= 1e-2 * (1.0 + std::abs(ema));
    return out;
  }
  throw LmoError("lmo_solve: non-finite RELBO objective after restart");
}

}  // namespace boostvi

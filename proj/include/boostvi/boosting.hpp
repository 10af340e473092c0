#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boostvi/density.hpp"
#include "boostvi/models.hpp"
#include "boostvi/quadrature.hpp"
#include "boostvi/random.hpp"
#include "boostvi/relbo.hpp"

namespace boostvi {

/// Frank-Wolfe step policy.
enum class Variant { FixedStep, LineSearch, FullyCorrective };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::FixedStep: return "fixed";
    case Variant::LineSearch: return "linesearch";
    case Variant::FullyCorrective: return "fullycorrective";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fixed") return Variant::FixedStep;
  if (s == "linesearch") return Variant::LineSearch;
  if (s == "fullycorrective") return Variant::FullyCorrective;
  throw std::invalid_argument("unknown variant: " + s);
}

struct FwConfig {
  Variant variant = Variant::FixedStep;
  std::size_t max_iters = 10;
  /// Assumed LMO accuracy, used in the fixed step size and the gap certificate.
  double delta = 1.0;
  /// Stop once gap/delta falls to this value. Zero disables early stopping.
  double gap_tolerance = 0.0;
  std::size_t gap_samples = 2048;
  /// Draws per atom for the line-search and fully-corrective objectives.
  std::size_t step_samples = 1024;
  std::size_t line_search_grid = 21;
  std::size_t corrective_iters = 100;
  std::size_t train_ll_samples = 1024;
  std::uint64_t seed = 0;
  LmoConfig lmo;

  void validate() const {
    if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("FwConfig: delta must lie in (0, 1]");
    if (!(gap_tolerance >= 0.0)) throw std::invalid_argument("FwConfig: gap_tolerance must be nonnegative");
    if (gap_samples < 2) throw std::invalid_argument("FwConfig: gap_samples must be >= 2");
    if (step_samples < 1) throw std::invalid_argument("FwConfig: step_samples must be >= 1");
    if (line_search_grid < 2) throw std::invalid_argument("FwConfig: line_search_grid must be >= 2");
    lmo.validate();
  }
};

/// State of the iterate q^t. `gamma` is the step that produced it (1 for the
/// initial solution); the gap fields are filled once s^t is known.
struct IterationRecord {
  std::size_t t = 0;
  double gamma = 1.0;
  double lambda = 1.0;
  std::optional<double> gap_estimate;
  std::optional<double> gap_stderr;
  double train_ll = 0.0;
  std::optional<double> kl_oracle;
  double relbo_estimate = 0.0;
  std::size_t n_atoms = 0;
  double wallclock = 0.0;
};

struct BoostTrace {
  std::vector<IterationRecord> records;
  /// Initial primal error, when an oracle is available.
  std::optional<double> epsilon0;
};

struct BoostResult {
  Mixture posterior;          ///< iterate selected by training log-likelihood
  std::size_t best_index = 0;
  std::vector<Mixture> iterates;  ///< q^0, q^1, ...
  BoostTrace trace;
};

struct BoostHooks {
  /// Primal error of an iterate (e.g. quadrature KL), recorded when set.
  std::function<double(const Mixture&)> oracle;
  std::function<void(const IterationRecord&)> on_iteration;
};

inline double fixed_step_gamma(std::size_t t, double delta) {
  return 2.0 / (delta * static_cast<double>(t) + 2.0);
}

/// (1 - gamma) q + gamma s. A duplicate atom has its weight merged.
inline Mixture mixture_step(const Mixture& q, const BaseDensity& s, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("mixture_step: gamma outside [0, 1]");
  if (s.dim() != q.dim()) throw DimensionError(q.dim(), s.dim());
  if (gamma == 0.0) return q;
  std::vector<BaseDensity> atoms;
  std::vector<double> weights;
  bool merged = false;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double w = (1.0 - gamma) * q.weights[i];
    if (!merged && q.atoms[i].approx_equal(s, 1e-9)) {
      w += gamma;
      merged = true;
    }
    if (w > 0.0) {
      atoms.push_back(q.atoms[i]);
      weights.push_back(w);
    }
  }
  if (!merged) {
    atoms.push_back(s);
    weights.push_back(gamma);
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return Mixture(std::move(atoms), std::move(weights));
}

/// Monte-Carlo negative ELBO of a mixture over a fixed atom set, as a function
/// of the weights. Every atom is sampled once from a shared block of
/// standardized noise, so evaluations at different weights reuse the same
/// draws (common random numbers) and identical atoms see identical draws.
class BlendObjective {
 public:
  BlendObjective(std::vector<BaseDensity> atoms, const TargetModel& model, std::size_t n_samples,
                 std::uint64_t seed)
      : atoms_(std::move(atoms)), n_(n_samples) {
    if (atoms_.empty()) throw std::invalid_argument("BlendObjective: no atoms");
    if (n_ < 1) throw std::invalid_argument("BlendObjective: n_samples must be >= 1");
    const std::size_t d = model.dim;
    const std::size_t k = atoms_.size();
    log_p_.assign(k * n_, 0.0);
    log_s_.assign(k * k * n_, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      if (atoms_[i].dim() != d) throw DimensionError(d, atoms_[i].dim());
      const Samples eps = standard_noise(atoms_[i].family, n_, d, derive_seed(seed, 0x6e6f697365ULL));
      const Samples z = transform_noise(atoms_[i], eps);
      for (std::size_t m = 0; m < n_; ++m) {
        const auto zm = z.row(m);
        log_p_[i * n_ + m] = model.log_joint(zm);
        for (std::size_t j = 0; j < k; ++j) log_s_[(i * k + j) * n_ + m] = base_log_prob(atoms_[j], zm);
      }
    }
  }

  std::size_t size() const noexcept { return atoms_.size(); }
  const std::vector<BaseDensity>& atoms() const noexcept { return atoms_; }

  /// -sum_i w_i mean_m [log p(z_im) - log q_w(z_im)]
  double value(const std::vector<double>& w) const {
    const std::size_t k = atoms_.size();
    std::vector<double> terms(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (w[i] <= 0.0) continue;
      double acc = 0.0;
      for (std::size_t m = 0; m < n_; ++m) acc += log_p_[i * n_ + m] - log_q(w, i, m, terms);
      total += w[i] * acc / static_cast<double>(n_);
    }
    return -total;
  }

  /// Exact gradient of value() in w.
  std::vector<double> gradient(const std::vector<double>& w) const {
    const std::size_t k = atoms_.size();
    std::vector<double> terms(k);
    std::vector<double> g(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      std::vector<double> ratio(k, 0.0);
      for (std::size_t m = 0; m < n_; ++m) {
        const double lq = log_q(w, i, m, terms);
        acc += log_p_[i * n_ + m] - lq;
        if (w[i] > 0.0) {
          for (std::size_t j = 0; j < k; ++j) ratio[j] += std::exp(log_s_[(i * k + j) * n_ + m] - lq);
        }
      }
      g[i] -= acc / static_cast<double>(n_);
      if (w[i] > 0.0) {
        for (std::size_t j = 0; j < k; ++j) g[j] += w[i] * ratio[j] / static_cast<double>(n_);
      }
    }
    return g;
  }

 private:
  double log_q(const std::vector<double>& w, std::size_t i, std::size_t m, std::vector<double>& terms) const {
    const std::size_t k = atoms_.size();
    std::size_t used = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (w[j] > 0.0) terms[used++] = std::log(w[j]) + log_s_[(i * k + j) * n_ + m];
    }
    return log_sum_exp(std::span<const double>(terms.data(), used));
  }

  std::vector<BaseDensity> atoms_;
  std::size_t n_;
  std::vector<double> log_p_;  // [atom][sample]
  std::vector<double> log_s_;  // [atom sampled][atom evaluated][sample]
};

namespace detail {

/// Golden-section minimization of a unimodal function on [a, b].
template <class F>
double golden_section(F&& f, double a, double b, std::size_t iters = 30) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (std::size_t i = 0; i < iters; ++i) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

inline bool strictly_less(double a, double b) { return a < b - 1e-10 * (1.0 + std::abs(b)); }

}  // namespace detail

/// argmin over gamma in [0, 1] of the negative ELBO of (1 - gamma) q + gamma s:
/// uniform grid, then golden-section refinement around the grid minimizer.
/// Ties go to the smaller gamma.
inline double line_search_gamma(const Mixture& q, const BaseDensity& s, const TargetModel& model,
                                std::size_t n_grid, std::size_t n_samples, std::uint64_t seed) {
  if (n_grid < 2) throw std::invalid_argument("line_search_gamma: n_grid must be >= 2");
  std::vector<BaseDensity> atoms = q.atoms;
  atoms.push_back(s);
  const BlendObjective obj(std::move(atoms), model, n_samples, seed);
  const auto at = [&](double gamma) {
    std::vector<double> w(q.size() + 1);
    for (std::size_t i = 0; i < q.size(); ++i) w[i] = (1.0 - gamma) * q.weights[i];
    w.back() = gamma;
    return obj.value(w);
  };
  std::size_t best_k = 0;
  double best_f = at(0.0);
  const double h = 1.0 / static_cast<double>(n_grid - 1);
  for (std::size_t k = 1; k < n_grid; ++k) {
    const double f = at(h * static_cast<double>(k));
    if (detail::strictly_less(f, best_f)) {
      best_f = f;
      best_k = k;
    }
  }
  double best_gamma = h * static_cast<double>(best_k);
  const double lo = best_k == 0 ? 0.0 : best_gamma - h;
  const double hi = best_k + 1 == n_grid ? 1.0 : best_gamma + h;
  const double refined = detail::golden_section(at, lo, hi);
  if (detail::strictly_less(at(refined), best_f)) best_gamma = refined;
  return best_gamma;
}

/// Weights minimizing the negative ELBO over conv(atoms), by Frank-Wolfe on
/// the simplex with exact line search.
inline std::vector<double> fully_corrective_weights(const std::vector<BaseDensity>& atoms,
                                                    const TargetModel& model, std::size_t n_samples,
                                                    std::uint64_t seed, std::size_t inner_iters,
                                                    std::optional<std::vector<double>> init = std::nullopt) {
  if (atoms.empty()) throw std::invalid_argument("fully_corrective_weights: no atoms");
  const std::size_t k = atoms.size();
  if (k == 1) return {1.0};
  const BlendObjective obj(atoms, model, n_samples, seed);
  std::vector<double> w = init ? *init : std::vector<double>(k, 1.0 / static_cast<double>(k));
  if (w.size() != k) throw DimensionError(k, w.size());
  for (std::size_t it = 0; it < inner_iters; ++it) {
    const auto g = obj.gradient(w);
    std::size_t vertex = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (g[j] < g[vertex]) vertex = j;
    }
    double fw_gap = 0.0;
    for (std::size_t j = 0; j < k; ++j) fw_gap += g[j] * (w[j] - (j == vertex ? 1.0 : 0.0));
    if (fw_gap <= 1e-8) break;
    const auto blend = [&](double a) {
      std::vector<double> v(k);
      for (std::size_t j = 0; j < k; ++j) v[j] = (1.0 - a) * w[j] + (j == vertex ? a : 0.0);
      return v;
    };
    const double a = detail::golden_section([&](double x) { return obj.value(blend(x)); }, 0.0, 1.0);
    if (!detail::strictly_less(obj.value(blend(a)), obj.value(w))) break;
    w = blend(a);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x = std::max(x, 0.0) / total;
  return w;
}

/// Monte-Carlo estimate of E_q[log q - log p] - E_s[log q - log p], the
/// duality gap with s standing in for the inner maximizer.
inline McEstimate duality_gap_estimate(const Mixture& q, const BaseDensity& s, const TargetModel& model,
                                       std::size_t n, std::uint64_t seed) {
  if (q.dim() != model.dim) throw DimensionError(model.dim, q.dim());
  if (s.dim() != model.dim) throw DimensionError(model.dim, s.dim());
  if (n < 2) throw std::invalid_argument("duality_gap_estimate: n must be >= 2");
  const Samples zq = sample(q, n, derive_seed(seed, 1));
  const Samples zs = sample(s, n, derive_seed(seed, 2));
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = mixture_log_prob(q, zq.row(i)) - model.log_joint(zq.row(i));
    b[i] = mixture_log_prob(q, zs.row(i)) - model.log_joint(zs.row(i));
  }
  const McEstimate ea = detail::mean_and_stderr(a);
  const McEstimate eb = detail::mean_and_stderr(b);
  return {ea.value - eb.value, std::sqrt(ea.std_error * ea.std_error + eb.std_error * eb.std_error)};
}

/// E_q[log p - log q] for a mixture.
inline McEstimate mixture_elbo_estimate(const Mixture& q, const TargetModel& model, std::size_t n,
                                        std::uint64_t seed) {
  const Samples z = sample(q, n, seed);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = model.log_joint(z.row(i)) - mixture_log_prob(q, z.row(i));
  return detail::mean_and_stderr(f);
}

/// (2 / gamma^2) KL(q + gamma (s - q) || q) on a 1-D grid, per gamma.
inline std::vector<double> curvature_probe(const BaseDensity& s, const Mixture& q,
                                           const std::vector<double>& gammas, const QuadratureGrid& grid) {
  if (s.dim() != 1) throw DimensionError(1, s.dim());
  if (q.dim() != 1) throw DimensionError(1, q.dim());
  grid.validate();
  std::vector<double> out;
  out.reserve(gammas.size());
  for (double gamma : gammas) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("curvature_probe: gamma outside (0, 1]");
    // y/q = 1 + gamma (s/q - 1). Near 1 the log1p form keeps precision for
    // small gamma; elsewhere the ratio is taken in log space so that s/q
    // underflowing at gamma = 1 stays exact.
    const double kl = integrate(
        [&](double z) {
          const std::span<const double> zz(&z, 1);
          const double lq = mixture_log_prob(q, zz);
          if (!std::isfinite(lq)) return 0.0;
          const double log_r = base_log_prob(s, zz) - lq;
          const double u = gamma * std::expm1(log_r);
          double log_ratio;
          if (std::abs(u) < 0.5) {
            log_ratio = std::log1p(u);
          } else {
            const double a = gamma < 1.0 ? std::log1p(-gamma) : -std::numeric_limits<double>::infinity();
            const double b = std::log(gamma) + log_r;
            const double m = std::max(a, b);
            log_ratio = m + std::log(std::exp(a - m) + std::exp(b - m));
          }
          if (!std::isfinite(log_ratio)) throw std::logic_error("curvature_probe: blended density is not positive");
          return std::exp(lq + log_ratio) * log_ratio;
        },
        grid);
    out.push_back(2.0 / (gamma * gamma) * kl);
  }
  return out;
}

/// int (s - q)^2 on the grid.
inline double l2_distance_squared(const BaseDensity& s, const Mixture& q, const QuadratureGrid& grid) {
  const auto ls = log_density_fn(s);
  const auto lq = log_density_fn(q);
  return integrate([&](double z) { const double d = std::exp(ls(z)) - std::exp(lq(z)); return d * d; }, grid);
}

/// int (s - q)^2 / q on the grid: the second derivative of KL(q + gamma (s - q) || q) at gamma = 0.
inline double chi_square_divergence(const BaseDensity& s, const Mixture& q, const QuadratureGrid& grid) {
  const auto ls = log_density_fn(s);
  const auto lq = log_density_fn(q);
  return integrate(
      [&](double z) {
        const double l = lq(z);
        const double qv = std::exp(l);
        if (qv == 0.0) return 0.0;
        const double r = std::exp(ls(z) - l) - 1.0;
        return qv * r * r;
      },
      grid);
}

/// Functional Frank-Wolfe boosting. q^0 is plain BBVI (the LMO without a
/// residual term); each later atom maximizes the RELBO against the iterate.
inline BoostResult run_boosting(const TargetModel& model, const FwConfig& cfg, const BoostHooks& hooks = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  LmoConfig lmo = cfg.lmo;
  lmo.seed = derive_seed(cfg.seed, 0x6c6d6fULL);
  const std::uint64_t ll_seed = derive_seed(cfg.seed, 0x6c6cULL);
  const auto fit_score = [&](const Mixture& q) {
    if (model.train_log_likelihood) return model.train_log_likelihood(q, ll_seed);
    return mixture_elbo_estimate(q, model, cfg.train_ll_samples, ll_seed).value;
  };

  BoostResult out;
  const LmoResult first = lmo_solve(model, nullptr, 0, lmo);
  Mixture q(first.atom);
  std::vector<BaseDensity> support{first.atom};
  std::vector<double> support_weights{1.0};

  const auto make_record = [&](std::size_t t, double gamma, double lambda, double relbo) {
    IterationRecord r;
    r.t = t;
    r.gamma = gamma;
    r.lambda = lambda;
    r.relbo_estimate = relbo;
    r.n_atoms = q.size();
    r.train_ll = fit_score(q);
    if (hooks.oracle) r.kl_oracle = hooks.oracle(q);
    r.wallclock = elapsed();
    return r;
  };

  out.iterates.push_back(q);
  out.trace.records.push_back(make_record(0, 1.0, lambda_at(0, lmo.lambda), first.relbo_estimate));
  out.trace.epsilon0 = out.trace.records.back().kl_oracle;

  for (std::size_t t = 0; t < cfg.max_iters; ++t) {
    // q^0 is FW iteration 0 (gamma = 1 from an empty start), so the atom
    // added to q^t uses iteration index t + 1 for both lambda and gamma.
    const std::size_t lmo_index = t + 1;
    const LmoResult s = lmo_solve(model, &q, lmo_index, lmo);
    const McEstimate gap = duality_gap_estimate(q, s.atom, model, cfg.gap_samples, derive_seed(cfg.seed, 0x676170ULL, t));
    IterationRecord& current = out.trace.records.back();
    current.gap_estimate = gap.value;
    current.gap_stderr = gap.std_error;
    if (hooks.on_iteration) hooks.on_iteration(current);
    if (cfg.gap_tolerance > 0.0 && gap.value / cfg.delta <= cfg.gap_tolerance) break;

    double gamma = 0.0;
    const std::uint64_t step_seed = derive_seed(cfg.seed, 0x73746570ULL, t);
    switch (cfg.variant) {
      case Variant::FixedStep:
        gamma = fixed_step_gamma(lmo_index, cfg.delta);
        q = mixture_step(q, s.atom, gamma);
        break;
      case Variant::LineSearch:
        gamma = line_search_gamma(q, s.atom, model, cfg.line_search_grid, cfg.step_samples, step_seed);
        q = mixture_step(q, s.atom, gamma);
        break;
      case Variant::FullyCorrective: {
        support.push_back(s.atom);
        support_weights.push_back(0.0);
        support_weights = fully_corrective_weights(support, model, cfg.step_samples, step_seed,
                                                   cfg.corrective_iters, support_weights);
        gamma = support_weights.back();
        std::vector<BaseDensity> atoms;
        std::vector<double> weights;
        for (std::size_t i = 0; i < support.size(); ++i) {
          if (support_weights[i] > 0.0) {
            atoms.push_back(support[i]);
            weights.push_back(support_weights[i]);
          }
        }
        q = Mixture(std::move(atoms), std::move(weights));
        break;
      }
    }
    out.iterates.push_back(q);
    out.trace.records.push_back(make_record(t + 1, gamma, lambda_at(lmo_index, lmo.lambda), s.relbo_estimate));
  }
  IterationRecord& last = out.trace.records.back();
  if (!last.gap_estimate) {
    // The final iterate still gets a certificate so every record carries one.
    const std::size_t t = last.t;
    const LmoResult s = lmo_solve(model, &q, t + 1, lmo);
    const McEstimate gap = duality_gap_estimate(q, s.atom, model, cfg.gap_samples, derive_seed(cfg.seed, 0x676170ULL, t));
    last.gap_estimate = gap.value;
    last.gap_stderr = gap.std_error;
    if (hooks.on_iteration) hooks.on_iteration(last);
  }

  out.best_index = 0;
  for (std::size_t i = 1; i < out.trace.records.size(); ++i) {
    if (out.trace.records[i].train_ll > out.trace.records[out.best_index].train_ll) out.best_index = i;
  }
  out.posterior = out.iterates[out.best_index];
  return out;
}

}  // namespace boostvi

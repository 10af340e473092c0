#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "boostvi/density.hpp"

namespace boostvi {

/// Uniform 1-D grid used by the quadrature oracles.
struct QuadratureGrid {
  double lo = -8.0;
  double hi = 8.0;
  std::size_t n_points = 4001;

  QuadratureGrid() = default;
  QuadratureGrid(double l, double h, std::size_t n) : lo(l), hi(h), n_points(n) { validate(); }

  void validate() const {
    if (!(lo < hi)) throw std::invalid_argument("QuadratureGrid: lo must be below hi");
    if (n_points < 3) throw std::invalid_argument("QuadratureGrid: need at least 3 points");
  }

  double step() const { return (hi - lo) / static_cast<double>(n_points - 1); }
  double at(std::size_t i) const { return lo + step() * static_cast<double>(i); }

  std::vector<double> points() const {
    std::vector<double> z(n_points);
    for (std::size_t i = 0; i < n_points; ++i) z[i] = at(i);
    return z;
  }

  /// Same interval with the spacing halved.
  QuadratureGrid refined() const { return {lo, hi, 2 * n_points - 1}; }
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LogDensity1d = std::function<double(double)>;

/// Composite Simpson rule on an odd number of samples, trapezoid otherwise.
inline double integrate_samples(const std::vector<double>& v, double h) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  if (n % 2 == 1) {
    double acc = v.front() + v.back();
    for (std::size_t i = 1; i + 1 < n; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * v[i];
    return acc * h / 3.0;
  }
  double acc = 0.5 * (v.front() + v.back());
  for (std::size_t i = 1; i + 1 < n; ++i) acc += v[i];
  return acc * h;
}

template <class F>
double integrate(F&& f, const QuadratureGrid& g) {
  g.validate();
  std::vector<double> v(g.n_points);
  for (std::size_t i = 0; i < g.n_points; ++i) v[i] = f(g.at(i));
  return integrate_samples(v, g.step());
}

/// log of the integral of exp(log_f) over the grid, computed with a max shift.
inline double log_normalizer(const LogDensity1d& log_f, const QuadratureGrid& g) {
  std::vector<double> lv(g.n_points);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.n_points; ++i) {
    lv[i] = log_f(g.at(i));
    if (lv[i] > m) m = lv[i];
  }
  if (!std::isfinite(m)) throw QuadratureError("log_normalizer: density vanishes on the grid");
  for (double& x : lv) x = std::exp(x - m);
  return m + std::log(integrate_samples(lv, g.step()));
}

/// KL(q || p) on a fixed grid. `log_p` may be unnormalized; it is normalized
/// over the grid before integration.
inline double kl_on_grid(const LogDensity1d& log_q, const LogDensity1d& log_p,
                         const QuadratureGrid& g) {
  g.validate();
  const double log_z = log_normalizer(log_p, g);
  std::vector<double> v(g.n_points);
  for (std::size_t i = 0; i < g.n_points; ++i) {
    const double z = g.at(i);
    const double lq = log_q(z);
    const double q = std::exp(lq);
    v[i] = q > 0.0 ? q * (lq - (log_p(z) - log_z)) : 0.0;
  }
  return integrate_samples(v, g.step());
}

/// KL(q || p) with a refinement check: the grid is rejected as too coarse if
/// halving its spacing moves the result by more than `tolerance`.
inline double quadrature_kl(const LogDensity1d& log_q, const LogDensity1d& log_p,
                            const QuadratureGrid& g, double tolerance = 1e-6) {
  const double coarse = kl_on_grid(log_q, log_p, g);
  const double fine = kl_on_grid(log_q, log_p, g.refined());
  if (!(std::abs(fine - coarse) <= tolerance)) {
    throw QuadratureError("quadrature_kl: grid too coarse (refinement moved result by " +
                          std::to_string(std::abs(fine - coarse)) + ")");
  }
  return fine;
}

/// E_q[f] on the grid for a normalized log density.
template <class F>
double quadrature_expectation(const LogDensity1d& log_q, F&& f, const QuadratureGrid& g) {
  return integrate([&](double z) { return std::exp(log_q(z)) * f(z); }, g);
}

inline LogDensity1d log_density_fn(const BaseDensity& d) {
  if (d.dim() != 1) throw DimensionError(1, d.dim());
  return [d](double z) { return base_log_prob(d, std::span<const double>(&z, 1)); };
}

inline LogDensity1d log_density_fn(const Mixture& m) {
  if (m.dim() != 1) throw DimensionError(1, m.dim());
  return [m](double z) { return mixture_log_prob(m, std::span<const double>(&z, 1)); };
}

}  // namespace boostvi

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "boostvi/random.hpp"

namespace boostvi {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;  // 0.5 * log(2 pi)
inline constexpr double kDefaultScaleFloor = 1e-3;
inline constexpr double kDefaultParamBox = 1e3;

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::size_t expected, std::size_t got)
      : std::invalid_argument("dimension mismatch: expected " + std::to_string(expected) +
                              ", got " + std::to_string(got)) {}
};

enum class Family { Gaussian, Laplace };

inline const char* to_string(Family f) {
  return f == Family::Gaussian ? "gaussian" : "laplace";
}

inline Family family_from_string(const std::string& s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "laplace") return Family::Laplace;
  throw std::invalid_argument("unknown family: " + s);
}

/// Bounds that keep an atom inside the non-degenerate, compact parameter set:
/// every scale at least `scale_floor`, every location inside [-box, box].
struct ParamBounds {
  double scale_floor = kDefaultScaleFloor;
  double box = kDefaultParamBox;
};

/// Mean-field location-scale density. `scale` is the standard deviation for
/// the Gaussian family and the diversity b for the Laplace family.
struct BaseDensity {
  Family family = Family::Gaussian;
  std::vector<double> loc;
  std::vector<double> scale;

  BaseDensity() = default;
  BaseDensity(Family fam, std::vector<double> l, std::vector<double> s, ParamBounds bounds = {})
      : family(fam), loc(std::move(l)), scale(std::move(s)) {
    validate(bounds);
  }

  static BaseDensity gaussian(std::vector<double> l, std::vector<double> s) {
    return BaseDensity(Family::Gaussian, std::move(l), std::move(s));
  }
  static BaseDensity laplace(std::vector<double> l, std::vector<double> s) {
    return BaseDensity(Family::Laplace, std::move(l), std::move(s));
  }

  std::size_t dim() const noexcept { return loc.size(); }

  void validate(ParamBounds bounds = {}) const {
    if (loc.empty()) throw std::invalid_argument("BaseDensity: empty location vector");
    if (loc.size() != scale.size()) throw DimensionError(loc.size(), scale.size());
    if (!(bounds.scale_floor > 0.0)) {
      throw std::invalid_argument("BaseDensity: scale_floor must be positive (degenerate family)");
    }
    for (std::size_t j = 0; j < loc.size(); ++j) {
      if (!std::isfinite(loc[j]) || std::abs(loc[j]) > bounds.box) {
        throw std::invalid_argument("BaseDensity: location " + std::to_string(j) +
                                    " outside parameter box");
      }
      if (!(scale[j] >= bounds.scale_floor) || !std::isfinite(scale[j])) {
        throw std::invalid_argument("BaseDensity: scale " + std::to_string(j) +
                                    " below scale floor");
      }
    }
  }

  bool approx_equal(const BaseDensity& other, double tol) const {
    if (family != other.family || dim() != other.dim()) return false;
    for (std::size_t j = 0; j < dim(); ++j) {
      if (std::abs(loc[j] - other.loc[j]) > tol) return false;
      if (std::abs(scale[j] - other.scale[j]) > tol) return false;
    }
    return true;
  }
};

/// Convex combination of atoms.
struct Mixture {
  std::vector<BaseDensity> atoms;
  std::vector<double> weights;

  Mixture() = default;
  Mixture(std::vector<BaseDensity> a, std::vector<double> w)
      : atoms(std::move(a)), weights(std::move(w)) {
    validate();
  }
  explicit Mixture(BaseDensity atom) : atoms{std::move(atom)}, weights{1.0} {}

  std::size_t size() const noexcept { return atoms.size(); }
  bool empty() const noexcept { return atoms.empty(); }
  std::size_t dim() const {
    if (atoms.empty()) throw std::invalid_argument("empty mixture");
    return atoms.front().dim();
  }

  void validate() const {
    if (atoms.empty()) throw std::invalid_argument("empty mixture");
    if (atoms.size() != weights.size()) throw DimensionError(atoms.size(), weights.size());
    const std::size_t d = atoms.front().dim();
    double total = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      if (atoms[i].dim() != d) throw DimensionError(d, atoms[i].dim());
      if (!(weights[i] >= 0.0)) throw std::invalid_argument("mixture weight is negative");
      total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("mixture weights do not sum to one");
    }
  }
};

/// Row-major n x dim block of draws.
struct Samples {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  Samples() = default;
  Samples(std::size_t rows, std::size_t cols) : n(rows), dim(cols), data(rows * cols) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

/// log(sum_i exp(v_i)) with the max shifted out.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

inline double base_log_prob(const BaseDensity& d, std::span<const double> z) {
  if (z.size() != d.dim()) throw DimensionError(d.dim(), z.size());
  double lp = 0.0;
  if (d.family == Family::Gaussian) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double u = (z[j] - d.loc[j]) / d.scale[j];
      lp += -0.5 * u * u - std::log(d.scale[j]) - kLogSqrtTwoPi;
    }
  } else {
    for (std::size_t j = 0; j < z.size(); ++j) {
      lp += -std::abs(z[j] - d.loc[j]) / d.scale[j] - std::log(2.0 * d.scale[j]);
    }
  }
  return lp;
}

/// Gradient of log d(z) with respect to z, accumulated into `out` scaled by `w`.
inline void add_base_grad_log_prob(const BaseDensity& d, std::span<const double> z, double w,
                                   std::span<double> out) {
  if (d.family == Family::Gaussian) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      out[j] -= w * (z[j] - d.loc[j]) / (d.scale[j] * d.scale[j]);
    }
  } else {
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double r = z[j] - d.loc[j];
      const double sgn = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      out[j] -= w * sgn / d.scale[j];
    }
  }
}

inline double mixture_log_prob(const Mixture& m, std::span<const double> z) {
  if (m.empty()) throw std::invalid_argument("empty mixture");
  if (z.size() != m.dim()) throw DimensionError(m.dim(), z.size());
  std::vector<double> terms;
  terms.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.weights[i] <= 0.0) continue;
    terms.push_back(std::log(m.weights[i]) + base_log_prob(m.atoms[i], z));
  }
  return log_sum_exp(terms);
}

/// Gradient in z of log m(z): responsibility-weighted sum of atom gradients.
inline std::vector<double> mixture_grad_log_prob(const Mixture& m, std::span<const double> z) {
  if (z.size() != m.dim()) throw DimensionError(m.dim(), z.size());
  std::vector<double> terms(m.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.weights[i] > 0.0) terms[i] = std::log(m.weights[i]) + base_log_prob(m.atoms[i], z);
  }
  const double lse = log_sum_exp(terms);
  std::vector<double> g(z.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.weights[i] <= 0.0) continue;
    add_base_grad_log_prob(m.atoms[i], z, std::exp(terms[i] - lse), g);
  }
  return g;
}

/// Standardized noise for one coordinate of the family.
inline double draw_noise(Family f, Rng& rng) {
  return f == Family::Gaussian ? rng.normal() : rng.laplace();
}

/// n x dim standardized draws (zero location, unit scale) for a family.
inline Samples standard_noise(Family f, std::size_t n, std::size_t dim, std::uint64_t seed) {
  Samples eps(n, dim);
  Rng rng(seed);
  for (double& e : eps.data) e = draw_noise(f, rng);
  return eps;
}

/// Location-scale transform of standardized noise through an atom.
inline Samples transform_noise(const BaseDensity& d, const Samples& eps) {
  if (eps.dim != d.dim()) throw DimensionError(d.dim(), eps.dim);
  Samples z(eps.n, eps.dim);
  for (std::size_t i = 0; i < eps.n; ++i) {
    for (std::size_t j = 0; j < eps.dim; ++j) {
      z.data[i * eps.dim + j] = d.loc[j] + d.scale[j] * eps.data[i * eps.dim + j];
    }
  }
  return z;
}

inline Samples sample(const BaseDensity& d, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample: n must be at least 1");
  return transform_noise(d, standard_noise(d.family, n, d.dim(), seed));
}

/// Ancestral sampling: component by categorical(weights), then the atom.
inline Samples sample(const Mixture& m, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample: n must be at least 1");
  const std::size_t d = m.dim();
  std::vector<double> cum(m.size());
  std::partial_sum(m.weights.begin(), m.weights.end(), cum.begin());
  Samples out(n, d);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * cum.back();
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    k = std::min(k, m.size() - 1);
    const BaseDensity& a = m.atoms[k];
    for (std::size_t j = 0; j < d; ++j) {
      out.data[i * d + j] = a.loc[j] + a.scale[j] * draw_noise(a.family, rng);
    }
  }
  return out;
}

inline double entropy_closed_form(const BaseDensity& d) {
  double h = 0.0;
  for (double s : d.scale) {
    h += d.family == Family::Gaussian ? 0.5 + kLogSqrtTwoPi + std::log(s) : 1.0 + std::log(2.0 * s);
  }
  return h;
}

inline double log_sup_norm(const BaseDensity& d) {
  double l = 0.0;
  for (double s : d.scale) {
    l += d.family == Family::Gaussian ? -std::log(s) - kLogSqrtTwoPi : -std::log(2.0 * s);
  }
  return l;
}

/// Peak value of the density, attained at its location.
inline double sup_norm(const BaseDensity& d) { return std::exp(log_sup_norm(d)); }

/// KL(p || q) for diagonal Gaussians.
inline double kl_gaussian_closed(const BaseDensity& p, const BaseDensity& q) {
  if (p.family != Family::Gaussian || q.family != Family::Gaussian) {
    throw std::invalid_argument("kl_gaussian_closed: both densities must be Gaussian");
  }
  if (p.dim() != q.dim()) throw DimensionError(p.dim(), q.dim());
  double kl = 0.0;
  for (std::size_t j = 0; j < p.dim(); ++j) {
    const double r = p.scale[j] / q.scale[j];
    const double dm = (p.loc[j] - q.loc[j]) / q.scale[j];
    kl += 0.5 * (r * r + dm * dm - 1.0) - std::log(r);
  }
  return kl;
}

}  // namespace boostvi

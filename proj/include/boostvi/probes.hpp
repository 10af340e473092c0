#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "boostvi/boosting.hpp"
#include "boostvi/density.hpp"
#include "boostvi/models.hpp"
#include "boostvi/quadrature.hpp"

namespace boostvi {

struct ProbeRow {
  std::string label;
  double value = 0.0;
  double reference = 0.0;
  bool passed = false;
};

struct ProbeReport {
  std::string name;
  std::vector<ProbeRow> rows;
  bool passed = true;

  void add(std::string label, double value, double reference, bool ok) {
    rows.push_back({std::move(label), value, reference, ok});
    passed = passed && ok;
  }
};

inline const std::vector<double>& probe_scale_grid() {
  static const std::vector<double> g{0.1, 0.5, 1.0, 2.0, 5.0};
  return g;
}

/// H(s) + log ||s||_inf over the scale grid, for D = 1 and D = 2. The slack
/// is 1/2 per dimension for Gaussians and 1 per dimension for Laplace.
inline ProbeReport entropy_probe(double scale_floor = kDefaultScaleFloor, double tolerance = 1e-10) {
  ProbeReport rep{"entropy", {}, true};
  const ParamBounds bounds{scale_floor, kDefaultParamBox};
  for (Family fam : {Family::Gaussian, Family::Laplace}) {
    const double per_dim = fam == Family::Gaussian ? 0.5 : 1.0;
    const std::vector<double>& grid = probe_scale_grid();
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double a = grid[k];
      for (std::size_t d : {std::size_t{1}, std::size_t{2}}) {
        std::vector<double> scale(d, a);
        if (d == 2) scale[1] = grid[(k + 2) % grid.size()];
        const BaseDensity s(fam, std::vector<double>(d, 0.0), scale, bounds);
        const double slack = entropy_closed_form(s) + log_sup_norm(s);
        const double ref = per_dim * static_cast<double>(d);
        rep.add(std::string(to_string(fam)) + " D=" + std::to_string(d) + " scale=" + std::to_string(a), slack, ref,
                std::abs(slack - ref) <= tolerance);
      }
    }
  }
  return rep;
}

struct CurvaturePair {
  BaseDensity s;
  BaseDensity q;
};

/// Nine Gaussian (s, q) pairs spanning location offsets and scale ratios.
/// Scales of s stay below sqrt(2) times the scale of q, where the
/// chi-square limit is finite.
inline std::vector<CurvaturePair> curvature_pairs() {
  std::vector<CurvaturePair> pairs;
  for (double dm : {0.0, 0.5, 1.0}) {
    for (double ss : {0.7, 1.0, 1.1}) {
      pairs.push_back({BaseDensity::gaussian({dm}, {ss}), BaseDensity::gaussian({0.0}, {1.0})});
    }
  }
  return pairs;
}

inline std::string pair_label(const CurvaturePair& pr) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "s=N(%g,%g) q=N(%g,%g)", pr.s.loc[0], pr.s.scale[0], pr.q.loc[0], pr.q.scale[0]);
  return buf;
}

inline QuadratureGrid curvature_grid() { return {-20.0, 20.0, 8001}; }

/// Limits of (2 / gamma^2) KL(q + gamma (s - q) || q). At gamma = 1 the value
/// is 2 KL(s || q). As gamma -> 0 it tends to the chi-square divergence
/// int (s - q)^2 / q; `l2_reference` additionally checks against the squared
/// L2 distance int (s - q)^2.
struct CurvatureProbeOptions {
  std::vector<double> gammas{1e-3, 1e-2, 0.1, 0.5, 1.0};
  double small_gamma_rel_tol = 0.05;
  double unit_gamma_abs_tol = 1e-6;
  bool l2_reference = false;
};

inline ProbeReport curvature_limit_probe(const CurvatureProbeOptions& opt = {}) {
  ProbeReport rep{opt.l2_reference ? "curvature-l2" : "curvature", {}, true};
  const QuadratureGrid grid = curvature_grid();
  double max_value = 0.0;
  for (const CurvaturePair& pr : curvature_pairs()) {
    const Mixture q(pr.q);
    const std::vector<double> vals = curvature_probe(pr.s, q, opt.gammas, grid);
    const std::string tag = pair_label(pr);
    bool finite = true;
    for (double v : vals) {
      finite = finite && std::isfinite(v);
      if (std::isfinite(v)) max_value = std::max(max_value, v);
    }
    rep.add(tag + " finite", finite ? 1.0 : 0.0, 1.0, finite);
    for (std::size_t i = 0; i < opt.gammas.size(); ++i) {
      if (opt.gammas[i] == 1.0) {
        const double ref = 2.0 * kl_gaussian_closed(pr.s, pr.q);
        rep.add(tag + " gamma=1", vals[i], ref, std::abs(vals[i] - ref) <= opt.unit_gamma_abs_tol);
      }
    }
    const double small = vals.front();
    const double ref = opt.l2_reference ? l2_distance_squared(pr.s, q, grid) : chi_square_divergence(pr.s, q, grid);
    const bool ok = std::abs(small - ref) <= opt.small_gamma_rel_tol * std::abs(ref) || (ref == 0.0 && small == 0.0);
    rep.add(tag + " gamma->0", small, ref, ok);
  }
  rep.add("max over pairs and gammas", max_value, std::numeric_limits<double>::infinity(), std::isfinite(max_value));
  return rep;
}

/// Curvature values at one gamma for every pair, next to 2 KL(s || q).
inline ProbeReport curvature_at_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("curvature probe: gamma must lie in (0, 1]");
  ProbeReport rep{"curvature", {}, true};
  const QuadratureGrid grid = curvature_grid();
  for (const CurvaturePair& pr : curvature_pairs()) {
    const double v = curvature_probe(pr.s, Mixture(pr.q), {gamma}, grid).front();
    const double two_kl = 2.0 * kl_gaussian_closed(pr.s, pr.q);
    const std::string tag = pair_label(pr);
    rep.add(tag, v, two_kl, std::isfinite(v) && (gamma != 1.0 || std::abs(v - two_kl) <= 1e-6));
  }
  return rep;
}

/// The exact duality gap max_s <q - s, log(q / p)> over a dense (mu, sigma)
/// grid of Gaussian atoms bounds KL(q || p) from above when p is itself a
/// mixture of Gaussians. Checked by quadrature on a few iterates of the
/// bimodal target.
inline ProbeReport gap_bound_probe() {
  ProbeReport rep{"gap-bound", {}, true};
  const Mixture target = bimodal_mixture({});
  const auto log_p = log_density_fn(target);
  const QuadratureGrid grid(-12.0, 12.0, 2401);
  const std::vector<double> z = grid.points();
  std::vector<double> lp(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) lp[i] = log_p(z[i]);

  const std::vector<Mixture> iterates{
      Mixture(BaseDensity::gaussian({0.15}, {1.0})),
      Mixture(BaseDensity::gaussian({1.0}, {0.5})),
      Mixture({BaseDensity::gaussian({1.0}, {0.5}), BaseDensity::gaussian({0.0}, {2.0})}, {0.9, 0.1}),
      Mixture({BaseDensity::gaussian({-1.2}, {0.6}), BaseDensity::gaussian({1.1}, {0.45})}, {0.5, 0.5}),
  };
  for (std::size_t k = 0; k < iterates.size(); ++k) {
    const auto log_q = log_density_fn(iterates[k]);
    std::vector<double> r(z.size()), qv(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double lq = log_q(z[i]);
      qv[i] = std::exp(lq);
      r[i] = lq - lp[i];
    }
    std::vector<double> tmp(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) tmp[i] = qv[i] * r[i];
    const double eq = integrate_samples(tmp, grid.step());
    double min_es = std::numeric_limits<double>::infinity();
    for (double mu = -3.0; mu <= 3.0 + 1e-9; mu += 0.05) {
      for (double sig = 0.1; sig <= 2.0 + 1e-9; sig += 0.05) {
        const BaseDensity s = BaseDensity::gaussian({mu}, {sig});
        for (std::size_t i = 0; i < z.size(); ++i) {
          tmp[i] = std::exp(base_log_prob(s, std::span<const double>(&z[i], 1))) * r[i];
        }
        min_es = std::min(min_es, integrate_samples(tmp, grid.step()));
      }
    }
    const double gap = eq - min_es;
    const double kl = kl_on_grid(log_q, log_p, grid);
    rep.add("iterate " + std::to_string(k), gap, kl, gap >= kl);
  }
  return rep;
}

}  // namespace boostvi

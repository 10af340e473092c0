#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "boostvi/density.hpp"

namespace boostvi {

enum class ModelKind { Bimodal, Logistic, MatrixFactorization };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Bimodal: return "bimodal";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::MatrixFactorization: return "matrix_factorization";
  }
  return "?";
}

/// Black-box target: an unnormalized log joint log p(x, z) over a D-dimensional
/// latent vector, optionally with its gradient in z.
struct TargetModel {
  using LogJoint = std::function<double(std::span<const double>)>;
  /// Returns log p(x, z) and writes its gradient into the second argument.
  using LogJointGrad = std::function<double(std::span<const double>, std::span<double>)>;
  using FitScore = std::function<double(const Mixture&, std::uint64_t)>;

  ModelKind kind = ModelKind::Bimodal;
  std::size_t dim = 0;
  LogJoint log_joint;
  LogJointGrad log_joint_grad;
  std::string description;
  /// Mean predictive log-likelihood of the training data under a posterior
  /// approximation. Absent for models without data.
  FitScore train_log_likelihood;

  bool has_gradient() const noexcept { return static_cast<bool>(log_joint_grad); }

  std::vector<double> grad_log_joint(std::span<const double> z) const {
    if (!has_gradient()) throw std::logic_error("model provides no gradient");
    std::vector<double> g(dim, 0.0);
    log_joint_grad(z, g);
    return g;
  }
};

/// Design matrix (row-major, N x F) with one label per row.
struct Dataset {
  std::size_t n_rows = 0;
  std::size_t n_features = 0;
  std::vector<double> features;
  std::vector<double> labels;
  std::vector<std::string> feature_names;

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * n_features, n_features};
  }

  void validate() const {
    if (features.size() != n_rows * n_features) {
      throw std::invalid_argument("Dataset: feature block does not match N x F");
    }
    if (labels.size() != n_rows) throw std::invalid_argument("Dataset: label count does not match N");
    for (double x : features) {
      if (!std::isfinite(x)) throw std::invalid_argument("Dataset: non-finite feature");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.n_rows = idx.size();
    d.n_features = n_features;
    d.feature_names = feature_names;
    d.features.reserve(idx.size() * n_features);
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      auto r = row(i);
      d.features.insert(d.features.end(), r.begin(), r.end());
      d.labels.push_back(labels[i]);
    }
    return d;
  }
};

struct Rating {
  std::size_t i = 0;
  std::size_t j = 0;
  double r = 0.0;
};

/// Partially observed real matrix: only the listed cells are observed.
struct RatingsMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Rating> observed;

  void validate() const {
    for (const Rating& e : observed) {
      if (e.i >= rows || e.j >= cols) throw std::invalid_argument("RatingsMatrix: cell outside shape");
      if (!std::isfinite(e.r)) throw std::invalid_argument("RatingsMatrix: non-finite value");
    }
  }
};

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) { return -detail::softplus(-x); }

inline double standard_normal_log_prior(std::span<const double> z) {
  double lp = 0.0;
  for (double v : z) lp += -0.5 * v * v - kLogSqrtTwoPi;
  return lp;
}

struct BimodalParams {
  std::pair<double, double> mu{-1.0, 1.0};
  std::pair<double, double> sigma{0.5, 0.5};
  std::pair<double, double> pi{0.4, 0.6};
};

/// The target as a two-atom mixture, for oracles that need its density.
inline Mixture bimodal_mixture(const BimodalParams& p) {
  return Mixture({BaseDensity::gaussian({p.mu.first}, {p.sigma.first}),
                  BaseDensity::gaussian({p.mu.second}, {p.sigma.second})},
                 {p.pi.first, p.pi.second});
}

/// One-dimensional two-component Gaussian mixture target.
inline TargetModel synthetic_bimodal_target(const BimodalParams& p = {}) {
  if (!(p.sigma.first > 0.0 && p.sigma.second > 0.0)) {
    throw std::invalid_argument("bimodal target: sigma must be positive");
  }
  if (p.pi.first < 0.0 || p.pi.second < 0.0 || std::abs(p.pi.first + p.pi.second - 1.0) > 1e-12) {
    throw std::invalid_argument("bimodal target: pi must lie on the simplex");
  }
  const Mixture target = bimodal_mixture(p);
  TargetModel m;
  m.kind = ModelKind::Bimodal;
  m.dim = 1;
  m.log_joint = [target](std::span<const double> z) { return mixture_log_prob(target, z); };
  m.log_joint_grad = [target](std::span<const double> z, std::span<double> g) {
    const auto gz = mixture_grad_log_prob(target, z);
    g[0] = gz[0];
    return mixture_log_prob(target, z);
  };
  m.description = "bimodal: " + std::to_string(p.pi.first) + " N(" + std::to_string(p.mu.first) +
                  ", " + std::to_string(p.sigma.first) + ") + " + std::to_string(p.pi.second) +
                  " N(" + std::to_string(p.mu.second) + ", " + std::to_string(p.sigma.second) + ")";
  return m;
}

// ---------------------------------------------------------------------------
// Predictive metrics

/// Rank-sum AUROC; tied scores receive their average rank.
inline double auroc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw DimensionError(labels.size(), scores.size());
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1.0) {
      n_pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw std::invalid_argument("auroc: need both classes");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Posterior-predictive P(y=1 | x) averaged over posterior draws.
inline std::vector<double> predictive_probabilities(const Mixture& posterior, const Dataset& data,
                                                    std::size_t n_samples, std::uint64_t seed) {
  if (posterior.dim() != data.n_features) throw DimensionError(data.n_features, posterior.dim());
  const Samples w = sample(posterior, n_samples, seed);
  std::vector<double> p(data.n_rows, 0.0);
  for (std::size_t i = 0; i < data.n_rows; ++i) {
    const auto x = data.row(i);
    double acc = 0.0;
    for (std::size_t s = 0; s < w.n; ++s) {
      const auto ws = w.row(s);
      acc += sigmoid(std::inner_product(x.begin(), x.end(), ws.begin(), 0.0));
    }
    p[i] = acc / static_cast<double>(w.n);
  }
  return p;
}

inline double mean_bernoulli_log_likelihood(std::span<const double> probs, std::span<const double> labels) {
  constexpr double kTiny = 1e-300;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += std::log(std::max(labels[i] == 1.0 ? probs[i] : 1.0 - probs[i], kTiny));
  }
  return probs.empty() ? 0.0 : acc / static_cast<double>(probs.size());
}

struct PredictiveMetrics {
  std::optional<double> auroc;
  std::optional<double> mse;
  double mean_log_likelihood = 0.0;
};

struct ClassificationTask {
  Dataset test;
};

struct FactorizationTask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t latent_dim = 1;
  std::vector<Rating> test;
};

using PredictiveTask = std::variant<ClassificationTask, FactorizationTask>;

/// Posterior mean of (U^T V) and log-mean predictive density on the given
/// cells, for z = vec(U) ++ vec(V) with U stored column-per-row (K x rows).
inline std::pair<std::vector<double>, std::vector<double>> factorization_predictive(
    const Mixture& posterior, const FactorizationTask& task, std::size_t n_samples, std::uint64_t seed) {
  const std::size_t k = task.latent_dim;
  const std::size_t d = k * (task.rows + task.cols);
  if (posterior.dim() != d) throw DimensionError(d, posterior.dim());
  const Samples z = sample(posterior, n_samples, seed);
  std::vector<double> mean(task.test.size(), 0.0);
  std::vector<double> loglik(task.test.size(), 0.0);
  std::vector<double> terms(z.n);
  for (std::size_t c = 0; c < task.test.size(); ++c) {
    const Rating& e = task.test[c];
    for (std::size_t s = 0; s < z.n; ++s) {
      const auto zs = z.row(s);
      const double* u = zs.data() + e.i * k;
      const double* v = zs.data() + k * task.rows + e.j * k;
      double pred = 0.0;
      for (std::size_t a = 0; a < k; ++a) pred += u[a] * v[a];
      mean[c] += pred;
      const double r = e.r - pred;
      terms[s] = -0.5 * r * r - kLogSqrtTwoPi;
    }
    mean[c] /= static_cast<double>(z.n);
    loglik[c] = log_sum_exp(terms) - std::log(static_cast<double>(z.n));
  }
  return {std::move(mean), std::move(loglik)};
}

inline PredictiveMetrics predictive_metrics(ModelKind kind, const Mixture& posterior,
                                            const PredictiveTask& task, std::size_t n_samples,
                                            std::uint64_t seed) {
  PredictiveMetrics out;
  if (const auto* cls = std::get_if<ClassificationTask>(&task)) {
    if (kind != ModelKind::Logistic) {
      throw std::invalid_argument(std::string("classification metrics requested for model kind ") +
                                  to_string(kind));
    }
    const auto probs = predictive_probabilities(posterior, cls->test, n_samples, seed);
    out.auroc = auroc(probs, cls->test.labels);
    out.mean_log_likelihood = mean_bernoulli_log_likelihood(probs, cls->test.labels);
    return out;
  }
  const auto& fac = std::get<FactorizationTask>(task);
  if (kind != ModelKind::MatrixFactorization) {
    throw std::invalid_argument(std::string("factorization metrics requested for model kind ") +
                                to_string(kind));
  }
  const auto [mean, loglik] = factorization_predictive(posterior, fac, n_samples, seed);
  double se = 0.0, ll = 0.0;
  for (std::size_t c = 0; c < fac.test.size(); ++c) {
    const double r = fac.test[c].r - mean[c];
    se += r * r;
    ll += loglik[c];
  }
  const double n = static_cast<double>(std::max<std::size_t>(fac.test.size(), 1));
  out.mse = se / n;
  out.mean_log_likelihood = ll / n;
  return out;
}

// ---------------------------------------------------------------------------
// Bayesian logistic regression, w ~ N(0, I), y ~ Bernoulli(sigmoid(x.w))

inline TargetModel logistic_regression_model(Dataset data, std::size_t train_ll_samples = 256) {
  data.validate();
  for (std::size_t i = 0; i < data.n_rows; ++i) {
    if (data.labels[i] != 0.0 && data.labels[i] != 1.0) {
      throw std::invalid_argument("logistic_regression_model: label in row " + std::to_string(i) +
                                  " is not binary");
    }
  }
  if (data.n_features == 0) throw std::invalid_argument("logistic_regression_model: no features");
  TargetModel m;
  m.kind = ModelKind::Logistic;
  m.dim = data.n_features;
  m.log_joint = [data](std::span<const double> w) {
    if (w.size() != data.n_features) throw DimensionError(data.n_features, w.size());
    double lp = standard_normal_log_prior(w);
    for (std::size_t i = 0; i < data.n_rows; ++i) {
      const auto x = data.row(i);
      const double a = std::inner_product(x.begin(), x.end(), w.begin(), 0.0);
      lp += data.labels[i] == 1.0 ? log_sigmoid(a) : log_sigmoid(-a);
    }
    return lp;
  };
  m.log_joint_grad = [data](std::span<const double> w, std::span<double> g) {
    if (w.size() != data.n_features) throw DimensionError(data.n_features, w.size());
    double lp = standard_normal_log_prior(w);
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = -w[j];
    for (std::size_t i = 0; i < data.n_rows; ++i) {
      const auto x = data.row(i);
      const double a = std::inner_product(x.begin(), x.end(), w.begin(), 0.0);
      const double y = data.labels[i];
      lp += y == 1.0 ? log_sigmoid(a) : log_sigmoid(-a);
      const double r = y - sigmoid(a);
      for (std::size_t j = 0; j < w.size(); ++j) g[j] += r * x[j];
    }
    return lp;
  };
  m.train_log_likelihood = [data, train_ll_samples](const Mixture& q, std::uint64_t seed) {
    if (data.n_rows == 0) return 0.0;
    const auto probs = predictive_probabilities(q, data, train_ll_samples, seed);
    return mean_bernoulli_log_likelihood(probs, data.labels);
  };
  m.description = "logistic regression: N=" + std::to_string(data.n_rows) +
                  ", F=" + std::to_string(data.n_features);
  return m;
}

// ---------------------------------------------------------------------------
// Bayesian matrix factorization, entries of U (K x rows) and V (K x cols)
// standard normal, R_ij ~ N((U^T V)_ij, 1) on observed cells.

inline TargetModel matrix_factorization_model(RatingsMatrix data, std::size_t latent_dim,
                                              std::size_t train_ll_samples = 128) {
  if (latent_dim < 1) throw std::invalid_argument("matrix_factorization_model: latent_dim must be >= 1");
  data.validate();
  const std::size_t k = latent_dim;
  TargetModel m;
  m.kind = ModelKind::MatrixFactorization;
  m.dim = k * (data.rows + data.cols);
  const std::size_t v_off = k * data.rows;
  const std::size_t dim = m.dim;
  m.log_joint = [data, k, v_off, dim](std::span<const double> z) {
    if (z.size() != dim) throw DimensionError(dim, z.size());
    double lp = standard_normal_log_prior(z);
    for (const Rating& e : data.observed) {
      const double* u = z.data() + e.i * k;
      const double* v = z.data() + v_off + e.j * k;
      double pred = 0.0;
      for (std::size_t a = 0; a < k; ++a) pred += u[a] * v[a];
      const double r = e.r - pred;
      lp += -0.5 * r * r - kLogSqrtTwoPi;
    }
    return lp;
  };
  m.log_joint_grad = [data, k, v_off, dim](std::span<const double> z, std::span<double> g) {
    if (z.size() != dim) throw DimensionError(dim, z.size());
    double lp = standard_normal_log_prior(z);
    for (std::size_t j = 0; j < z.size(); ++j) g[j] = -z[j];
    for (const Rating& e : data.observed) {
      const std::size_t ui = e.i * k;
      const std::size_t vi = v_off + e.j * k;
      double pred = 0.0;
      for (std::size_t a = 0; a < k; ++a) pred += z[ui + a] * z[vi + a];
      const double r = e.r - pred;
      lp += -0.5 * r * r - kLogSqrtTwoPi;
      for (std::size_t a = 0; a < k; ++a) {
        g[ui + a] += r * z[vi + a];
        g[vi + a] += r * z[ui + a];
      }
    }
    return lp;
  };
  FactorizationTask train{data.rows, data.cols, k, data.observed};
  m.train_log_likelihood = [train, train_ll_samples](const Mixture& q, std::uint64_t seed) {
    if (train.test.empty()) return 0.0;
    const auto loglik = factorization_predictive(q, train, train_ll_samples, seed).second;
    return std::accumulate(loglik.begin(), loglik.end(), 0.0) / static_cast<double>(loglik.size());
  };
  m.description = "matrix factorization: " + std::to_string(data.rows) + "x" + std::to_string(data.cols) +
                  ", K=" + std::to_string(k) + ", observed=" + std::to_string(data.observed.size());
  return m;
}

}  // namespace boostvi

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "boostvi/models.hpp"
#include "boostvi/quadrature.hpp"
#include "boostvi/relbo.hpp"

using namespace boostvi;

namespace {

TargetModel mixture_target(const Mixture& q) {
  TargetModel m;
  m.dim = q.dim();
  m.log_joint = [q](std::span<const double> z) { return mixture_log_prob(q, z); };
  m.log_joint_grad = [q](std::span<const double> z, std::span<double> g) {
    const auto gz = mixture_grad_log_prob(q, z);
    std::copy(gz.begin(), gz.end(), g.begin());
    return mixture_log_prob(q, z);
  };
  return m;
}

TargetModel constant_target(std::size_t d, double c) {
  TargetModel m;
  m.dim = d;
  m.log_joint = [c](std::span<const double>) { return c; };
  m.log_joint_grad = [c](std::span<const double> z, std::span<double> g) {
    for (std::size_t j = 0; j < z.size(); ++j) g[j] = 0.0;
    return c;
  };
  return m;
}

Dataset logistic_data_2d() {
  Rng rng(21);
  Dataset d;
  d.n_rows = 30;
  d.n_features = 2;
  for (std::size_t i = 0; i < d.n_rows; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal();
    d.features.push_back(x1);
    d.features.push_back(x2);
    d.labels.push_back(rng.uniform() < sigmoid(1.5 * x1 - 0.7 * x2) ? 1.0 : 0.0);
  }
  return d;
}

// Grid oracle: argmax over (mu, sigma) in [-3,3] x [0.1,2] (step 0.01) of the
// quadrature RELBO, computed offline against the default bimodal target.
constexpr double kIter0Mu = 0.17, kIter0Sigma = 1.01;
// Same oracle with q^0 = 0.9 N(1, 0.5) + 0.1 N(0, 2), lambda = 1/sqrt(2).
constexpr double kIter1Mu = -1.13, kIter1Sigma = 0.40;

Mixture iteration1_q0() {
  return Mixture({BaseDensity::gaussian({1.0}, {0.5}), BaseDensity::gaussian({0.0}, {2.0})}, {0.9, 0.1});
}

}  // namespace

TEST(Lambda, Schedule) {
  EXPECT_DOUBLE_EQ(lambda_at(0, LambdaSchedule::inverse_sqrt()), 1.0);
  EXPECT_DOUBLE_EQ(lambda_at(3, LambdaSchedule::inverse_sqrt()), 0.5);
  for (std::size_t t : {0u, 1u, 9u, 100u}) EXPECT_DOUBLE_EQ(lambda_at(t, LambdaSchedule::constant(0.7)), 0.7);
}

TEST(RelboEstimate, EqualsElboAtUnitLambda) {
  const auto model = synthetic_bimodal_target();
  const auto s = BaseDensity::gaussian({0.2}, {0.9});
  const auto r = relbo_estimate(s, model, nullptr, 1.0, 4096, 17);
  const auto e = elbo_estimate(s, model, 4096, 17);
  EXPECT_EQ(r.value, e.value);
  EXPECT_EQ(r.std_error, e.std_error);
}

TEST(RelboEstimate, TargetEqualToIterateGivesEntropy) {
  const Mixture q({BaseDensity::gaussian({-1.0}, {0.6}), BaseDensity::laplace({1.0}, {0.4})}, {0.3, 0.7});
  const auto s = BaseDensity::gaussian({0.4}, {0.8});
  const auto r = relbo_estimate(s, mixture_target(q), &q, 1.0, 100000, 5);
  EXPECT_LT(std::abs(r.value - entropy_closed_form(s)), 4.0 * r.std_error);
}

TEST(RelboEstimate, Deterministic) {
  const auto model = synthetic_bimodal_target();
  const Mixture q = iteration1_q0();
  const auto s = BaseDensity::gaussian({-0.5}, {0.5});
  EXPECT_EQ(relbo_estimate(s, model, &q, 0.6, 1000, 9).value, relbo_estimate(s, model, &q, 0.6, 1000, 9).value);
}

TEST(RelboEstimate, LinearInLambda) {
  const auto model = synthetic_bimodal_target();
  const Mixture q = iteration1_q0();
  const auto s = BaseDensity::gaussian({-0.5}, {0.5});
  const std::size_t n = 2000;
  const auto z = sample(s, n, 33);
  double ent = 0.0;
  for (std::size_t i = 0; i < n; ++i) ent -= base_log_prob(s, z.row(i));
  ent /= n;
  const double a = relbo_estimate(s, model, &q, 0.9, n, 33).value;
  const double b = relbo_estimate(s, model, &q, 0.4, n, 33).value;
  // d estimate / d lambda is minus the sample mean of log s.
  EXPECT_NEAR((a - b) / 0.5, ent, 1e-9);
}

TEST(RelboEstimate, DimensionMismatch) {
  const auto model = synthetic_bimodal_target();
  EXPECT_THROW(relbo_estimate(BaseDensity::gaussian({0.0, 0.0}, {1.0, 1.0}), model, nullptr, 1.0, 10, 1),
               DimensionError);
}

TEST(RelboGrad, ScoreFunctionConstantIntegrandHasZeroMean) {
  const auto model = constant_target(2, 3.0);
  const auto s = BaseDensity::gaussian({0.5, -0.3}, {0.7, 1.4});
  // lambda = 0 isolates the score term.
  const auto g = relbo_grad(s, model, nullptr, 0.0, 100000, 8, Estimator::ScoreFunction, 0.0);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(g.loc[j]), 4.0 * g.loc_stderr[j] + 1e-12);
    EXPECT_LT(std::abs(g.log_scale[j]), 4.0 * g.log_scale_stderr[j] + 1e-12);
  }
}

TEST(RelboGrad, AnalyticEntropyDerivative) {
  const auto model = constant_target(3, -1.0);
  for (Family fam : {Family::Gaussian, Family::Laplace}) {
    const BaseDensity s(fam, {0.0, 1.0, -2.0}, {0.5, 1.0, 3.0});
    const auto g = relbo_grad(s, model, nullptr, 1.0, 64, 2, Estimator::Reparameterization);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(g.log_scale[j], 1.0, 1e-12);
      EXPECT_NEAR(g.loc[j], 0.0, 1e-12);
    }
  }
}

TEST(RelboGrad, BothEstimatorsMatchFiniteDifferences) {
  const auto model = logistic_regression_model(logistic_data_2d());
  const Mixture q({BaseDensity::gaussian({0.5, 0.0}, {0.6, 0.6}), BaseDensity::gaussian({1.5, -1.0}, {0.4, 0.5})},
                  {0.5, 0.5});
  const double lambda = 0.7;
  const std::size_t n = 100000;
  const std::uint64_t seed = 77;
  const std::vector<double> loc{1.0, -0.4};
  const std::vector<double> scale{0.5, 0.7};
  const auto objective = [&](const std::vector<double>& l, const std::vector<double>& sc) {
    return relbo_estimate(BaseDensity::gaussian(l, sc), model, &q, lambda, n, seed).value;
  };
  const double h = 1e-4;
  std::vector<double> fd(4);
  for (std::size_t j = 0; j < 2; ++j) {
    auto lp = loc, lm = loc;
    lp[j] += h;
    lm[j] -= h;
    fd[j] = (objective(lp, scale) - objective(lm, scale)) / (2 * h);
    auto sp = scale, sm = scale;
    sp[j] *= std::exp(h);
    sm[j] *= std::exp(-h);
    fd[2 + j] = (objective(loc, sp) - objective(loc, sm)) / (2 * h);
  }
  double fd_norm = 0.0;
  for (double v : fd) fd_norm += v * v;
  fd_norm = std::sqrt(fd_norm);
  const auto s = BaseDensity::gaussian(loc, scale);
  for (Estimator est : {Estimator::Reparameterization, Estimator::ScoreFunction}) {
    const auto g = relbo_grad(s, model, &q, lambda, n, seed, est);
    const std::vector<double> v{g.loc[0], g.loc[1], g.log_scale[0], g.log_scale[1]};
    double err = 0.0;
    for (std::size_t k = 0; k < 4; ++k) err += (v[k] - fd[k]) * (v[k] - fd[k]);
    // Relative error of the full (loc, log-scale) gradient vector.
    EXPECT_LE(std::sqrt(err) / fd_norm, 0.05) << (est == Estimator::Reparameterization ? "reparameterization"
                                                                                          : "score function");
  }
}

TEST(RelboGrad, ReparameterizationNeedsGradient) {
  TargetModel m = synthetic_bimodal_target();
  m.log_joint_grad = nullptr;
  EXPECT_THROW(relbo_grad(BaseDensity::gaussian({0.0}, {1.0}), m, nullptr, 1.0, 8, 1, Estimator::Reparameterization),
               std::invalid_argument);
  EXPECT_NO_THROW(relbo_grad(BaseDensity::gaussian({0.0}, {1.0}), m, nullptr, 1.0, 8, 1, Estimator::ScoreFunction));
}

TEST(LmoSolve, IterationZeroMatchesGridOracle) {
  const auto model = synthetic_bimodal_target();
  LmoConfig cfg;
  cfg.seed = 3;
  const auto res = lmo_solve(model, nullptr, 0, cfg);
  EXPECT_NEAR(res.atom.loc[0], kIter0Mu, 0.3);
  EXPECT_NEAR(res.atom.scale[0], kIter0Sigma, 0.3);
  EXPECT_EQ(res.atom.family, Family::Gaussian);
}

TEST(LmoSolve, IterationOneFindsResidualMode) {
  const auto model = synthetic_bimodal_target();
  const Mixture q0 = iteration1_q0();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    LmoConfig cfg;
    cfg.seed = seed;
    const auto res = lmo_solve(model, &q0, 1, cfg);
    EXPECT_NEAR(res.atom.loc[0], -1.0, 0.3) << "seed " << seed;
    EXPECT_NEAR(res.atom.loc[0], kIter1Mu, 0.3);
    EXPECT_NEAR(res.atom.scale[0], kIter1Sigma, 0.2);
  }
}

TEST(LmoSolve, ScaleFloorRespected) {
  // A very sharp target pulls the atom toward the floor.
  TargetModel m = mixture_target(Mixture(BaseDensity::gaussian({0.0}, {1e-3})));
  LmoConfig cfg;
  cfg.scale_floor = 0.05;
  cfg.n_steps = 400;
  cfg.step_size = 0.05;
  const auto res = lmo_solve(m, nullptr, 0, cfg);
  EXPECT_GE(res.atom.scale[0], cfg.scale_floor);
}

TEST(LmoSolve, Reproducible) {
  const auto model = synthetic_bimodal_target();
  const Mixture q0 = iteration1_q0();
  LmoConfig cfg;
  cfg.n_steps = 300;
  cfg.seed = 12;
  const auto a = lmo_solve(model, &q0, 2, cfg);
  const auto b = lmo_solve(model, &q0, 2, cfg);
  EXPECT_EQ(a.atom.loc, b.atom.loc);
  EXPECT_EQ(a.atom.scale, b.atom.scale);
  EXPECT_EQ(a.relbo_estimate, b.relbo_estimate);
}

TEST(LmoSolve, ScoreFunctionEstimator) {
  const auto model = synthetic_bimodal_target();
  LmoConfig cfg;
  cfg.estimator = Estimator::ScoreFunction;
  cfg.seed = 4;
  const auto res = lmo_solve(model, nullptr, 0, cfg);
  EXPECT_NEAR(res.atom.loc[0], kIter0Mu, 0.3);
  EXPECT_NEAR(res.atom.scale[0], kIter0Sigma, 0.3);
}

TEST(LmoSolve, LaplaceFamily) {
  const auto model = synthetic_bimodal_target();
  LmoConfig cfg;
  cfg.family = Family::Laplace;
  cfg.seed = 4;
  const auto res = lmo_solve(model, nullptr, 0, cfg);
  EXPECT_EQ(res.atom.family, Family::Laplace);
  EXPECT_TRUE(std::isfinite(res.relbo_estimate));
}

TEST(LmoSolve, NonFiniteObjectiveFailsAfterRestart) {
  TargetModel m = constant_target(1, std::numeric_limits<double>::quiet_NaN());
  LmoConfig cfg;
  cfg.n_steps = 10;
  EXPECT_THROW(lmo_solve(m, nullptr, 0, cfg), LmoError);
}

TEST(LmoSolve, ApproximateLmoCertificate) {
  // <log(q/p), s - q> for the returned atom against the best atom on a dense
  // (mu, sigma) grid, both by quadrature; the realized delta must be positive.
  const auto model = synthetic_bimodal_target();
  const Mixture target = bimodal_mixture({});
  const Mixture q0 = iteration1_q0();
  LmoConfig cfg;
  cfg.seed = 1;
  const auto res = lmo_solve(model, &q0, 1, cfg);
  const QuadratureGrid g(-12.0, 12.0, 2401);
  const auto lq = log_density_fn(q0);
  const auto lp = log_density_fn(target);
  const auto inner = [&](const BaseDensity& s) {
    const auto ls = log_density_fn(s);
    return integrate([&](double z) { return (std::exp(ls(z)) - std::exp(lq(z))) * (lq(z) - lp(z)); }, g);
  };
  double best = std::numeric_limits<double>::infinity();
  for (double mu = -3.0; mu <= 3.0 + 1e-9; mu += 0.05) {
    for (double sg = 0.1; sg <= 2.0 + 1e-9; sg += 0.05) best = std::min(best, inner(BaseDensity::gaussian({mu}, {sg})));
  }
  ASSERT_LT(best, 0.0);
  const double delta = inner(res.atom) / best;
  RecordProperty("realized_delta", std::to_string(delta));
  std::printf("realized LMO accuracy delta = %.4f\n", delta);
  EXPECT_GT(delta, 0.0);
  EXPECT_LE(delta, 1.0 + 1e-9);
}

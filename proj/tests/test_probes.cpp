#include <gtest/gtest.h>

#include <cmath>

#include "boostvi/probes.hpp"

using namespace boostvi;

TEST(EntropyProbe, PassesOnDefaultGrid) {
  const auto rep = entropy_probe();
  EXPECT_TRUE(rep.passed);
  // 5 scales x 2 families x 2 dimensions.
  EXPECT_EQ(rep.rows.size(), 20u);
  for (const auto& r : rep.rows) EXPECT_LE(std::abs(r.value - r.reference), 1e-10) << r.label;
}

TEST(EntropyProbe, SlackPerDimension) {
  // H(s) + log ||s||_inf is D/2 for Gaussians and D for Laplace atoms.
  for (double sigma : probe_scale_grid()) {
    const auto g = BaseDensity::gaussian({0.3}, {sigma});
    const auto l = BaseDensity::laplace({0.3}, {sigma});
    EXPECT_NEAR(entropy_closed_form(g) + log_sup_norm(g), 0.5, 1e-12);
    EXPECT_NEAR(entropy_closed_form(l) + log_sup_norm(l), 1.0, 1e-12);
  }
}

TEST(EntropyProbe, ZeroFloorRejected) {
  EXPECT_THROW(entropy_probe(0.0), std::invalid_argument);
}

TEST(CurvatureProbe, ChiSquareLimit) {
  const auto rep = curvature_limit_probe();
  EXPECT_TRUE(rep.passed);
  EXPECT_FALSE(rep.rows.empty());
}

TEST(CurvatureProbe, L2ReferenceDisagrees) {
  // The gamma -> 0 limit is the chi-square divergence, not the squared L2 distance.
  CurvatureProbeOptions opt;
  opt.l2_reference = true;
  EXPECT_FALSE(curvature_limit_probe(opt).passed);
}

TEST(CurvatureProbe, AtUnitGamma) {
  const auto rep = curvature_at_gamma(1.0);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.rows.size(), curvature_pairs().size());
}

TEST(CurvatureProbe, PairLabel) {
  const CurvaturePair pr = curvature_pairs()[3];
  EXPECT_NE(pair_label(pr).find("q=N(0,1)"), std::string::npos);
}

TEST(GapBoundProbe, Holds) {
  const auto rep = gap_bound_probe();
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.rows.size(), 4u);
  for (const auto& r : rep.rows) EXPECT_GE(r.value, r.reference) << r.label;
}

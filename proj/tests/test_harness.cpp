#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "boostvi/harness.hpp"

using namespace boostvi;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("boostvi_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_text(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig quick_bimodal(const std::string& out) {
  ExperimentConfig cfg;
  cfg.fw.max_iters = 3;
  cfg.fw.lmo.n_steps = 600;
  cfg.fw.gap_samples = 512;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST(Csv, LoadsFeaturesAndLabel) {
  const auto dir = scratch_dir("csv");
  const auto p = write_text(dir, "d.csv", "x1,x2,y\n0.5,-1.2,1\n2.0,0.3,0\n");
  const Dataset d = load_csv(p);
  EXPECT_EQ(d.n_rows, 2u);
  EXPECT_EQ(d.n_features, 2u);
  EXPECT_EQ(d.labels, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(d.features, (std::vector<double>{0.5, -1.2, 2.0, 0.3}));
}

TEST(Csv, NamedLabelColumn) {
  const auto dir = scratch_dir("csv_named");
  const auto p = write_text(dir, "d.csv", "y,x1\n1,0.5\n0,2.0\n");
  CsvSchema schema;
  schema.label_column = "y";
  const Dataset d = load_csv(p, schema);
  EXPECT_EQ(d.labels, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(d.features, (std::vector<double>{0.5, 2.0}));
  schema.label_column = "label";
  EXPECT_NE(error_of([&] { load_csv(p, schema); }).find("label column absent"), std::string::npos);
}

TEST(Csv, BlankCellNamed) {
  const auto dir = scratch_dir("csv_blank");
  const auto p = write_text(dir, "d.csv", "x1,x2,y\n0.5,-1.2,1\n2.0,,0\n");
  const std::string msg = error_of([&] { load_csv(p); });
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("x2"), std::string::npos) << msg;
}

TEST(Csv, NonNumericAndRaggedRows) {
  const auto dir = scratch_dir("csv_bad");
  EXPECT_THROW(load_csv(write_text(dir, "a.csv", "x1,y\nabc,1\n")), DataError);
  EXPECT_THROW(load_csv(write_text(dir, "b.csv", "x1,y\n1,0,3\n")), DataError);
  EXPECT_THROW(load_csv(dir / "missing.csv"), DataError);
}

TEST(Csv, RoundTrip) {
  const auto dir = scratch_dir("csv_rt");
  const Dataset d = synthetic_logistic_data(25, 3, 4);
  write_csv(d, dir / "d.csv");
  const Dataset e = load_csv(dir / "d.csv");
  ASSERT_EQ(e.n_rows, d.n_rows);
  ASSERT_EQ(e.n_features, d.n_features);
  for (std::size_t i = 0; i < d.features.size(); ++i) EXPECT_NEAR(e.features[i], d.features[i], 1e-12);
  EXPECT_EQ(e.labels, d.labels);
}

TEST(Csv, RatingsRoundTrip) {
  const auto dir = scratch_dir("ratings");
  const RatingsMatrix m = synthetic_low_rank_matrix({}, 2);
  write_ratings_csv(m.observed, dir / "r.csv");
  const RatingsMatrix n = load_ratings_csv(dir / "r.csv", m.rows, m.cols);
  ASSERT_EQ(n.observed.size(), m.observed.size());
  for (std::size_t k = 0; k < m.observed.size(); ++k) {
    EXPECT_EQ(n.observed[k].i, m.observed[k].i);
    EXPECT_EQ(n.observed[k].j, m.observed[k].j);
    EXPECT_NEAR(n.observed[k].r, m.observed[k].r, 1e-12);
  }
  EXPECT_THROW(load_ratings_csv(write_text(dir, "bad.csv", "a,b,c\n0,0,1\n")), DataError);
}

TEST(Split, SizesAndDeterminism) {
  const auto [tr, te] = split_indices(10, 0.7, 3);
  EXPECT_EQ(tr.size(), 7u);
  EXPECT_EQ(te.size(), 3u);
  const auto again = split_indices(10, 0.7, 3);
  EXPECT_EQ(again.first, tr);
  EXPECT_NE(split_indices(10, 0.7, 4).first, tr);
}

TEST(Split, DisjointCover) {
  const auto [tr, te] = split_indices(101, 0.7, 9);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (std::size_t i : te) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 101u);
}

TEST(Split, Rejects) {
  EXPECT_THROW(split_indices(10, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(split_indices(10, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(split_indices(1, 0.5, 1), std::invalid_argument);
}

TEST(Aggregate, SingleAndMany) {
  const auto one = aggregate({0.8});
  EXPECT_DOUBLE_EQ(one.mean, 0.8);
  EXPECT_DOUBLE_EQ(one.std, 0.0);
  const auto many = aggregate({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(many.mean, 2.0);
  EXPECT_DOUBLE_EQ(many.std, 1.0);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.model = ModelKind::Logistic;
  c.fw.variant = Variant::FullyCorrective;
  c.fw.max_iters = 7;
  c.fw.lmo.lambda = LambdaSchedule::constant(0.25);
  c.fw.lmo.family = Family::Laplace;
  c.seed = 42;
  c.n_seeds = 3;
  const json j = to_json(c);
  const ExperimentConfig d = config_from_json(j);
  EXPECT_EQ(to_json(d), j);
  EXPECT_EQ(d.seeds(), (std::vector<std::uint64_t>{42, 43, 44}));
}

TEST(Config, UnknownKeyAndBadValue) {
  ExperimentConfig c;
  EXPECT_NE(error_of([&] { apply_json(c, json{{"iterations", 3}}); }).find("'iterations'"), std::string::npos);
  EXPECT_NE(error_of([&] { apply_json(c, json{{"variant", "bogus"}}); }).find("'variant'"), std::string::npos);
  EXPECT_THROW(apply_json(c, json{{"iters", -1}}), ConfigError);
  c.split_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LambdaStrings) {
  EXPECT_EQ(lambda_to_string(lambda_from_string("sqrt")), "sqrt");
  const auto l = lambda_from_string("const:0.5");
  EXPECT_EQ(l.kind, LambdaSchedule::Kind::Constant);
  EXPECT_DOUBLE_EQ(l.lambda0, 0.5);
  EXPECT_THROW(lambda_from_string("const:x"), std::invalid_argument);
}

TEST(Serialization, MixtureRoundTrip) {
  const Mixture m({BaseDensity::gaussian({-1.0}, {0.5}), BaseDensity::laplace({2.0}, {0.25})}, {0.3, 0.7});
  const Mixture r = mixture_from_json(to_json(m));
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r.weights, m.weights);
  EXPECT_TRUE(r.atoms[1].approx_equal(m.atoms[1], 0.0));
  EXPECT_EQ(r.atoms[1].family, Family::Laplace);
}

TEST(Experiment, BimodalWritesOutputs) {
  const auto dir = scratch_dir("exp_bimodal");
  const auto s = run_experiment(quick_bimodal(dir.string()));
  ASSERT_EQ(s.runs.size(), 1u);
  EXPECT_EQ(s.runs[0].kl_series.size(), 4u);
  EXPECT_TRUE(s.stats.count("boosted_kl"));
  for (const char* f : {"config.json", "trace.json", "summary.json", "density.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream in(dir / "density.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "z,target,q0,q1,q2,q3");
}

TEST(Experiment, SeedsAreIndependentAndReproducible) {
  auto cfg = quick_bimodal("");
  cfg.n_seeds = 2;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  ASSERT_EQ(a.runs.size(), 2u);
  EXPECT_EQ(a.runs[0].kl_series, b.runs[0].kl_series);
  EXPECT_NE(a.runs[0].kl_series, a.runs[1].kl_series);
}

TEST(Experiment, LogisticSeparableData) {
  ExperimentConfig cfg;
  cfg.model = ModelKind::Logistic;
  cfg.fw.max_iters = 2;
  cfg.fw.lmo.n_steps = 500;
  cfg.fw.gap_samples = 256;
  cfg.predictive_samples = 200;
  const auto s = run_experiment(cfg);
  EXPECT_GT(s.runs[0].metrics.at("boosted_auroc"), 0.9);
  EXPECT_GT(s.runs[0].metrics.at("baseline_auroc"), 0.9);
}

TEST(Experiment, LogisticFromCsv) {
  const auto dir = scratch_dir("exp_csv");
  write_csv(synthetic_logistic_data(60, 2, 1), dir / "d.csv");
  ExperimentConfig cfg;
  cfg.model = ModelKind::Logistic;
  cfg.data_path = (dir / "d.csv").string();
  cfg.fw.max_iters = 1;
  cfg.fw.lmo.n_steps = 200;
  cfg.fw.gap_samples = 64;
  cfg.predictive_samples = 50;
  const auto s = run_experiment(cfg);
  EXPECT_TRUE(s.runs[0].metrics.count("boosted_test_ll"));
}

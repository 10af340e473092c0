#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "boostvi/boosting.hpp"
#include "boostvi/density.hpp"
#include "boostvi/models.hpp"
#include "boostvi/quadrature.hpp"
#include "boostvi/relbo.hpp"

namespace boostvi {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// CSV ingestion

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvSchema {
  /// Label column name; empty means the final column.
  std::string label_column;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

inline double parse_cell(const std::string& raw, std::size_t row, std::size_t col, const std::string& name) {
  const std::string s = trim(raw);
  const std::string where = "row " + std::to_string(row) + ", column " + std::to_string(col + 1) + " ('" + name + "')";
  if (s.empty()) throw DataError("blank cell at " + where);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError("non-numeric cell '" + s + "' at " + where);
  }
  if (used != s.size() || !std::isfinite(v)) throw DataError("non-numeric cell '" + s + "' at " + where);
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Rows are numbered from 1 for the first data line after the header.
inline CsvTable read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing header row: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto& h : split_csv_line(line)) t.header.push_back(trim(h));
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(t.header.size()));
    }
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) vals[c] = parse_cell(cells[c], row, c, t.header[c]);
    t.rows.push_back(std::move(vals));
  }
  return t;
}

}  // namespace detail

/// Features plus one label column from a headed CSV file.
inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  const detail::CsvTable t = detail::read_numeric_csv(path);
  if (t.header.size() < 2 && schema.label_column.empty()) {
    throw DataError("label column absent: need at least one feature and one label column");
  }
  std::size_t label = t.header.size() - 1;
  if (!schema.label_column.empty()) {
    auto it = std::find(t.header.begin(), t.header.end(), schema.label_column);
    if (it == t.header.end()) throw DataError("label column absent: '" + schema.label_column + "'");
    label = static_cast<std::size_t>(it - t.header.begin());
  }
  Dataset d;
  d.n_rows = t.rows.size();
  d.n_features = t.header.size() - 1;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c != label) d.feature_names.push_back(t.header[c]);
  }
  d.feature_names.push_back(t.header[label]);
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c != label) d.features.push_back(r[c]);
    }
    d.labels.push_back(r[label]);
  }
  d.validate();
  return d;
}

/// Writes features then the label as the final column. `feature_names`
/// may carry the label name as an extra trailing entry.
inline void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out.precision(17);
  for (std::size_t c = 0; c < d.n_features; ++c) {
    out << (c < d.feature_names.size() ? d.feature_names[c] : "x" + std::to_string(c + 1)) << ',';
  }
  out << (d.feature_names.size() > d.n_features ? d.feature_names[d.n_features] : "y") << '\n';
  for (std::size_t i = 0; i < d.n_rows; ++i) {
    for (double x : d.row(i)) out << x << ',';
    out << d.labels[i] << '\n';
  }
}

/// (i, j, r) triples with header "i,j,r". The shape is the largest index + 1
/// unless a larger one is given.
inline RatingsMatrix load_ratings_csv(const std::filesystem::path& path, std::size_t rows = 0, std::size_t cols = 0) {
  const detail::CsvTable t = detail::read_numeric_csv(path);
  if (t.header != std::vector<std::string>{"i", "j", "r"}) throw DataError("ratings file must have header i,j,r");
  RatingsMatrix m;
  m.rows = rows;
  m.cols = cols;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& r = t.rows[k];
    for (std::size_t c = 0; c < 2; ++c) {
      if (r[c] < 0.0 || r[c] != std::floor(r[c])) {
        throw DataError("row " + std::to_string(k + 1) + ", column " + std::to_string(c + 1) +
                        ": index must be a nonnegative integer");
      }
    }
    const Rating e{static_cast<std::size_t>(r[0]), static_cast<std::size_t>(r[1]), r[2]};
    m.rows = std::max(m.rows, e.i + 1);
    m.cols = std::max(m.cols, e.j + 1);
    m.observed.push_back(e);
  }
  m.validate();
  return m;
}

inline void write_ratings_csv(const std::vector<Rating>& cells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out.precision(17);
  out << "i,j,r\n";
  for (const Rating& e : cells) out << e.i << ',' << e.j << ',' << e.r << '\n';
}

// ---------------------------------------------------------------------------
// Splitting and synthetic data

/// Seeded permutation of 0..n-1 (Fisher-Yates on the library generator).
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(i)), i - 1);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

/// Train/test index sets. The train part has round(fraction * n) entries,
/// kept in [1, n - 1].
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                                   std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
  if (n < 2) throw std::invalid_argument("split: need at least 2 rows");
  const auto perm = permutation(n, seed);
  std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

inline std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  const auto [tr, te] = split_indices(data.n_rows, fraction, seed);
  return {data.subset(tr), data.subset(te)};
}

inline std::pair<std::vector<Rating>, std::vector<Rating>> split(const std::vector<Rating>& cells, double fraction,
                                                                 std::uint64_t seed) {
  const auto [tr, te] = split_indices(cells.size(), fraction, seed);
  std::vector<Rating> a, b;
  for (std::size_t i : tr) a.push_back(cells[i]);
  for (std::size_t i : te) b.push_back(cells[i]);
  return {std::move(a), std::move(b)};
}

/// Linearly separable binary data: x ~ N(0, I), y = 1[x . w* > 0] for a fixed
/// random hyperplane w*.
inline Dataset synthetic_logistic_data(std::size_t n = 400, std::size_t f = 5, std::uint64_t seed = 0) {
  Rng rng(derive_seed(seed, 0x6c6f67ULL));
  std::vector<double> w(f);
  for (double& x : w) x = rng.normal();
  Dataset d;
  d.n_rows = n;
  d.n_features = f;
  d.features.resize(n * f);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      const double x = rng.normal();
      d.features[i * f + j] = x;
      dot += x * w[j];
    }
    d.labels[i] = dot > 0.0 ? 1.0 : 0.0;
  }
  for (std::size_t j = 0; j < f; ++j) d.feature_names.push_back("x" + std::to_string(j + 1));
  d.feature_names.push_back("y");
  return d;
}

struct LowRankSpec {
  std::size_t rows = 20;
  std::size_t cols = 15;
  std::size_t rank = 2;
  double noise_sd = 0.5;
  double observed_fraction = 0.5;
};

/// R = U^T V + noise with U, V standard normal; each cell is kept with
/// probability `observed_fraction`.
inline RatingsMatrix synthetic_low_rank_matrix(const LowRankSpec& spec = {}, std::uint64_t seed = 0) {
  Rng rng(derive_seed(seed, 0x6d6174ULL));
  std::vector<double> u(spec.rank * spec.rows), v(spec.rank * spec.cols);
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  RatingsMatrix m;
  m.rows = spec.rows;
  m.cols = spec.cols;
  for (std::size_t i = 0; i < spec.rows; ++i) {
    for (std::size_t j = 0; j < spec.cols; ++j) {
      double r = 0.0;
      for (std::size_t a = 0; a < spec.rank; ++a) r += u[i * spec.rank + a] * v[j * spec.rank + a];
      r += spec.noise_sd * rng.normal();
      if (rng.uniform() < spec.observed_fraction) m.observed.push_back({i, j, r});
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Experiment configuration

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "bimodal") return ModelKind::Bimodal;
  if (s == "logistic") return ModelKind::Logistic;
  if (s == "matrix_factorization" || s == "mf") return ModelKind::MatrixFactorization;
  throw std::invalid_argument("unknown model: " + s);
}

inline std::string lambda_to_string(const LambdaSchedule& l) {
  if (l.kind == LambdaSchedule::Kind::InverseSqrt) return "sqrt";
  std::ostringstream os;
  os.precision(17);
  os << "const:" << l.lambda0;
  return os.str();
}

inline LambdaSchedule lambda_from_string(const std::string& s) {
  if (s == "sqrt") return LambdaSchedule::inverse_sqrt();
  if (s.rfind("const:", 0) == 0) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s.substr(6), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() - 6 || !(v > 0.0)) {
      throw std::invalid_argument("lambda constant must be a positive number: " + s);
    }
    return LambdaSchedule::constant(v);
  }
  throw std::invalid_argument("lambda must be 'sqrt' or 'const:<v>': " + s);
}

inline const char* to_string(Estimator e) {
  return e == Estimator::Reparameterization ? "reparameterization" : "score_function";
}
inline Estimator estimator_from_string(const std::string& s) {
  if (s == "reparameterization") return Estimator::Reparameterization;
  if (s == "score_function") return Estimator::ScoreFunction;
  throw std::invalid_argument("unknown estimator: " + s);
}
inline const char* to_string(InitStrategy i) {
  return i == InitStrategy::RandomNormal ? "random_normal" : "perturb_current";
}
inline InitStrategy init_from_string(const std::string& s) {
  if (s == "random_normal") return InitStrategy::RandomNormal;
  if (s == "perturb_current") return InitStrategy::PerturbCurrent;
  throw std::invalid_argument("unknown init: " + s);
}

struct ExperimentConfig {
  ModelKind model = ModelKind::Bimodal;
  BimodalParams bimodal;
  /// CSV path; features + label for logistic, i,j,r triples for factorization.
  /// Empty selects the built-in synthetic data.
  std::string data_path;
  std::uint64_t data_seed = 0;
  double split_fraction = 0.7;
  std::size_t latent_dim = 2;
  std::uint64_t seed = 0;
  std::size_t n_seeds = 1;
  std::size_t predictive_samples = 1000;
  FwConfig fw;
  std::string out_dir;

  void validate() const {
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split", "must lie in (0, 1)");
    if (n_seeds < 1) throw ConfigError("seeds", "must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent-dim", "must be >= 1");
    if (!(fw.delta > 0.0 && fw.delta <= 1.0)) throw ConfigError("delta", "must lie in (0, 1]");
    if (!(fw.gap_tolerance >= 0.0)) throw ConfigError("gap-tol", "must be nonnegative");
    if (fw.lmo.n_mc_samples < 1) throw ConfigError("mc-samples", "must be >= 1");
    if (fw.gap_samples < 2) throw ConfigError("gap-samples", "must be >= 2");
    if (fw.step_samples < 1) throw ConfigError("step-samples", "must be >= 1");
    if (!(fw.lmo.step_size > 0.0)) throw ConfigError("step-size", "must be positive");
    if (!(fw.lmo.scale_floor > 0.0)) throw ConfigError("scale-floor", "must be positive");
    if (!(fw.lmo.init_scale > fw.lmo.scale_floor)) throw ConfigError("scale-floor", "must be below the init scale");
    if (predictive_samples < 1) throw ConfigError("predictive-samples", "must be >= 1");
  }

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s(n_seeds);
    for (std::size_t i = 0; i < n_seeds; ++i) s[i] = seed + i;
    return s;
  }
};

/// Flat key/value form. Keys match the command-line flag names.
inline json to_json(const ExperimentConfig& c) {
  return json{
      {"model", to_string(c.model)},
      {"bimodal-mu", {c.bimodal.mu.first, c.bimodal.mu.second}},
      {"bimodal-sigma", {c.bimodal.sigma.first, c.bimodal.sigma.second}},
      {"bimodal-pi", {c.bimodal.pi.first, c.bimodal.pi.second}},
      {"data", c.data_path},
      {"data-seed", c.data_seed},
      {"split", c.split_fraction},
      {"latent-dim", c.latent_dim},
      {"seed", c.seed},
      {"seeds", c.n_seeds},
      {"predictive-samples", c.predictive_samples},
      {"variant", to_string(c.fw.variant)},
      {"iters", c.fw.max_iters},
      {"delta", c.fw.delta},
      {"gap-tol", c.fw.gap_tolerance},
      {"gap-samples", c.fw.gap_samples},
      {"step-samples", c.fw.step_samples},
      {"line-search-grid", c.fw.line_search_grid},
      {"corrective-iters", c.fw.corrective_iters},
      {"train-ll-samples", c.fw.train_ll_samples},
      {"family", to_string(c.fw.lmo.family)},
      {"mc-samples", c.fw.lmo.n_mc_samples},
      {"lmo-steps", c.fw.lmo.n_steps},
      {"step-size", c.fw.lmo.step_size},
      {"estimator", to_string(c.fw.lmo.estimator)},
      {"lambda", lambda_to_string(c.fw.lmo.lambda)},
      {"scale-floor", c.fw.lmo.scale_floor},
      {"box", c.fw.lmo.box},
      {"init", to_string(c.fw.lmo.init)},
      {"init-scale", c.fw.lmo.init_scale},
      {"final-eval-samples", c.fw.lmo.final_eval_samples},
      {"out", c.out_dir},
  };
}

namespace detail {

template <class T>
T json_get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "wrong type (" + std::string(v.type_name()) + ")");
  }
}

inline std::size_t json_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(key, "must be a nonnegative integer");
  return v.get<std::size_t>();
}

inline std::pair<double, double> json_pair(const json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2) throw ConfigError(key, "must be a pair of numbers");
  return {json_get<double>(v[0], key), json_get<double>(v[1], key)};
}

template <class F>
auto parse_enum(const json& v, const std::string& key, F&& f) {
  const std::string s = json_get<std::string>(v, key);
  try {
    return f(s);
  } catch (const std::invalid_argument&) {
    throw ConfigError(key, "unknown value '" + s + "'");
  }
}

}  // namespace detail

/// Applies every key of `j` onto `c`. Unknown keys are rejected.
inline void apply_json(ExperimentConfig& c, const json& j) {
  using detail::json_count;
  using detail::json_get;
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "model") c.model = detail::parse_enum(v, key, model_kind_from_string);
    else if (key == "bimodal-mu") c.bimodal.mu = detail::json_pair(v, key);
    else if (key == "bimodal-sigma") c.bimodal.sigma = detail::json_pair(v, key);
    else if (key == "bimodal-pi") c.bimodal.pi = detail::json_pair(v, key);
    else if (key == "data") c.data_path = json_get<std::string>(v, key);
    else if (key == "data-seed") c.data_seed = json_count(v, key);
    else if (key == "split") c.split_fraction = json_get<double>(v, key);
    else if (key == "latent-dim") c.latent_dim = json_count(v, key);
    else if (key == "seed") c.seed = json_count(v, key);
    else if (key == "seeds") c.n_seeds = json_count(v, key);
    else if (key == "predictive-samples") c.predictive_samples = json_count(v, key);
    else if (key == "variant") c.fw.variant = detail::parse_enum(v, key, variant_from_string);
    else if (key == "iters") c.fw.max_iters = json_count(v, key);
    else if (key == "delta") c.fw.delta = json_get<double>(v, key);
    else if (key == "gap-tol") c.fw.gap_tolerance = json_get<double>(v, key);
    else if (key == "gap-samples") c.fw.gap_samples = json_count(v, key);
    else if (key == "step-samples") c.fw.step_samples = json_count(v, key);
    else if (key == "line-search-grid") c.fw.line_search_grid = json_count(v, key);
    else if (key == "corrective-iters") c.fw.corrective_iters = json_count(v, key);
    else if (key == "train-ll-samples") c.fw.train_ll_samples = json_count(v, key);
    else if (key == "family") c.fw.lmo.family = detail::parse_enum(v, key, family_from_string);
    else if (key == "mc-samples") c.fw.lmo.n_mc_samples = json_count(v, key);
    else if (key == "lmo-steps") c.fw.lmo.n_steps = json_count(v, key);
    else if (key == "step-size") c.fw.lmo.step_size = json_get<double>(v, key);
    else if (key == "estimator") c.fw.lmo.estimator = detail::parse_enum(v, key, estimator_from_string);
    else if (key == "lambda") c.fw.lmo.lambda = detail::parse_enum(v, key, lambda_from_string);
    else if (key == "scale-floor") c.fw.lmo.scale_floor = json_get<double>(v, key);
    else if (key == "box") c.fw.lmo.box = json_get<double>(v, key);
    else if (key == "init") c.fw.lmo.init = detail::parse_enum(v, key, init_from_string);
    else if (key == "init-scale") c.fw.lmo.init_scale = json_get<double>(v, key);
    else if (key == "final-eval-samples") c.fw.lmo.final_eval_samples = json_count(v, key);
    else if (key == "out") c.out_dir = json_get<std::string>(v, key);
    else throw ConfigError(key, "unknown key");
  }
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  apply_json(c, j);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Serialization of results

inline json to_json(const BaseDensity& d) {
  return json{{"family", to_string(d.family)}, {"loc", d.loc}, {"scale", d.scale}};
}

inline json to_json(const Mixture& m) {
  json atoms = json::array();
  for (const auto& a : m.atoms) atoms.push_back(to_json(a));
  return json{{"atoms", atoms}, {"weights", m.weights}};
}

inline BaseDensity base_density_from_json(const json& j) {
  return BaseDensity(family_from_string(j.at("family").get<std::string>()), j.at("loc").get<std::vector<double>>(),
                     j.at("scale").get<std::vector<double>>(), ParamBounds{1e-300, 1e300});
}

inline Mixture mixture_from_json(const json& j) {
  std::vector<BaseDensity> atoms;
  for (const auto& a : j.at("atoms")) atoms.push_back(base_density_from_json(a));
  return Mixture(std::move(atoms), j.at("weights").get<std::vector<double>>());
}

namespace detail {
inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace detail

inline json to_json(const IterationRecord& r) {
  return json{{"t", r.t},
              {"gamma", r.gamma},
              {"lambda", r.lambda},
              {"gap_estimate", detail::opt(r.gap_estimate)},
              {"gap_stderr", detail::opt(r.gap_stderr)},
              {"train_ll", r.train_ll},
              {"kl_oracle", detail::opt(r.kl_oracle)},
              {"relbo_estimate", r.relbo_estimate},
              {"n_atoms", r.n_atoms},
              {"wallclock", r.wallclock}};
}

inline json to_json(const BoostResult& res) {
  json records = json::array();
  for (const auto& r : res.trace.records) records.push_back(to_json(r));
  json iterates = json::array();
  for (const auto& q : res.iterates) iterates.push_back(to_json(q));
  return json{{"epsilon0", detail::opt(res.trace.epsilon0)},
              {"best_index", res.best_index},
              {"records", records},
              {"iterates", iterates}};
}

// ---------------------------------------------------------------------------
// Experiments

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and sample standard deviation (zero for a single value).
inline MetricStats aggregate(const std::vector<double>& v) {
  MetricStats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct SeedRun {
  std::uint64_t seed = 0;
  std::size_t best_index = 0;
  /// Metric name -> value. Boosted metrics are prefixed "boosted_", the plain
  /// BBVI solution q^0 "baseline_".
  std::map<std::string, double> metrics;
  std::vector<double> kl_series;
  BoostResult result;
};

struct RunSummary {
  std::vector<SeedRun> runs;
  std::map<std::string, MetricStats> stats;
};

inline json summary_to_json(const RunSummary& s) {
  json per_seed = json::array();
  for (const auto& r : s.runs) {
    json e{{"seed", r.seed}, {"best_index", r.best_index}, {"metrics", r.metrics}};
    if (!r.kl_series.empty()) e["kl_oracle"] = r.kl_series;
    per_seed.push_back(e);
  }
  json stats = json::object();
  for (const auto& [k, v] : s.stats) stats[k] = json{{"mean", v.mean}, {"std", v.std}};
  return json{{"n_seeds", s.runs.size()}, {"per_seed", per_seed}, {"aggregate", stats}};
}

inline json trace_to_json(const RunSummary& s) {
  json runs = json::array();
  for (const auto& r : s.runs) {
    json e = to_json(r.result);
    e["seed"] = r.seed;
    runs.push_back(e);
  }
  return json{{"runs", runs}};
}

/// Oracle grid for one-dimensional KL values.
inline QuadratureGrid oracle_grid() { return {-15.0, 15.0, 6001}; }
/// Grid written to density.csv.
inline QuadratureGrid plot_grid() { return {-4.0, 4.0, 401}; }

inline void write_density_csv(const std::vector<Mixture>& iterates, const std::optional<Mixture>& target,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out.precision(10);
  out << "z";
  if (target) out << ",target";
  for (std::size_t t = 0; t < iterates.size(); ++t) out << ",q" << t;
  out << '\n';
  const QuadratureGrid g = plot_grid();
  for (std::size_t i = 0; i < g.n_points; ++i) {
    const double z = g.at(i);
    const std::span<const double> zs(&z, 1);
    out << z;
    if (target) out << ',' << std::exp(mixture_log_prob(*target, zs));
    for (const auto& q : iterates) out << ',' << std::exp(mixture_log_prob(q, zs));
    out << '\n';
  }
}

namespace detail {

inline void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace detail

/// Runs boosting once per seed, scores the returned iterate and the plain
/// BBVI solution, aggregates, and writes config.json, trace.json,
/// summary.json (and density.csv for the 1-D target) when `out_dir` is set.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const BoostHooks& extra = {}) {
  cfg.validate();
  RunSummary summary;

  std::optional<Dataset> table;
  std::optional<RatingsMatrix> ratings;
  if (cfg.model == ModelKind::Logistic) {
    table = cfg.data_path.empty() ? synthetic_logistic_data(400, 5, cfg.data_seed) : load_csv(cfg.data_path);
  } else if (cfg.model == ModelKind::MatrixFactorization) {
    ratings = cfg.data_path.empty() ? synthetic_low_rank_matrix({}, cfg.data_seed) : load_ratings_csv(cfg.data_path);
  }
  const Mixture target = cfg.model == ModelKind::Bimodal ? bimodal_mixture(cfg.bimodal) : Mixture{};

  for (std::uint64_t seed : cfg.seeds()) {
    SeedRun run;
    run.seed = seed;
    FwConfig fw = cfg.fw;
    fw.seed = seed;
    const std::uint64_t split_seed = derive_seed(seed, 0x73706c6974ULL);
    const std::uint64_t metric_seed = derive_seed(seed, 0x6d6574ULL);

    TargetModel model;
    std::optional<PredictiveTask> task;
    BoostHooks hooks = extra;
    if (cfg.model == ModelKind::Bimodal) {
      model = synthetic_bimodal_target(cfg.bimodal);
      const auto log_p = log_density_fn(target);
      hooks.oracle = [log_p](const Mixture& q) { return kl_on_grid(log_density_fn(q), log_p, oracle_grid()); };
    } else if (cfg.model == ModelKind::Logistic) {
      auto [train, test] = split(*table, cfg.split_fraction, split_seed);
      model = logistic_regression_model(std::move(train));
      task = ClassificationTask{std::move(test)};
    } else {
      auto [train, test] = split(ratings->observed, cfg.split_fraction, split_seed);
      model = matrix_factorization_model(RatingsMatrix{ratings->rows, ratings->cols, std::move(train)}, cfg.latent_dim);
      task = FactorizationTask{ratings->rows, ratings->cols, cfg.latent_dim, std::move(test)};
    }

    run.result = run_boosting(model, fw, hooks);
    run.best_index = run.result.best_index;
    const auto& recs = run.result.trace.records;
    run.metrics["boosted_train_ll"] = recs[run.best_index].train_ll;
    run.metrics["baseline_train_ll"] = recs.front().train_ll;
    if (cfg.model == ModelKind::Bimodal) {
      for (const auto& r : recs) run.kl_series.push_back(*r.kl_oracle);
      run.metrics["boosted_kl"] = run.kl_series[run.best_index];
      run.metrics["baseline_kl"] = run.kl_series.front();
      run.metrics["final_kl"] = run.kl_series.back();
    } else {
      const auto put = [&](const std::string& prefix, const PredictiveMetrics& m) {
        if (m.auroc) run.metrics[prefix + "auroc"] = *m.auroc;
        if (m.mse) run.metrics[prefix + "mse"] = *m.mse;
        run.metrics[prefix + "test_ll"] = m.mean_log_likelihood;
      };
      put("boosted_", predictive_metrics(model.kind, run.result.posterior, *task, cfg.predictive_samples, metric_seed));
      put("baseline_", predictive_metrics(model.kind, run.result.iterates.front(), *task, cfg.predictive_samples,
                                          metric_seed));
    }
    summary.runs.push_back(std::move(run));
  }

  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : summary.runs) {
    for (const auto& [k, v] : r.metrics) cols[k].push_back(v);
  }
  for (const auto& [k, v] : cols) summary.stats[k] = aggregate(v);

  if (!cfg.out_dir.empty()) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    detail::write_json(to_json(cfg), dir / "config.json");
    detail::write_json(trace_to_json(summary), dir / "trace.json");
    detail::write_json(summary_to_json(summary), dir / "summary.json");
    if (cfg.model == ModelKind::Bimodal) write_density_csv(summary.runs.front().result.iterates, target, dir / "density.csv");
  }
  return summary;
}

}  // namespace boostvi

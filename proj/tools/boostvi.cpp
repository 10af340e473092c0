// boostvi: run boosting experiments, numeric probes, and plot-data export.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure,
// 3 probe failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "boostvi/boostvi.hpp"

namespace fs = std::filesystem;
using boostvi::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kProbeFailure = 3;

struct RunFlags {
  std::string config;
  std::optional<std::string> model, data, variant, lambda, family, out, estimator, init;
  std::optional<std::size_t> iters, mc_samples, lmo_steps, seeds, gap_samples, step_samples, latent_dim;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta, gap_tol, step_size, scale_floor, split;
};

json read_json_file(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw boostvi::ConfigError(key, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw boostvi::ConfigError(key, std::string("invalid JSON: ") + e.what());
  }
}

json flags_to_json(const RunFlags& f) {
  json j = json::object();
  const auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("model", f.model);
  put("data", f.data);
  put("variant", f.variant);
  put("lambda", f.lambda);
  put("family", f.family);
  put("out", f.out);
  put("estimator", f.estimator);
  put("init", f.init);
  put("iters", f.iters);
  put("mc-samples", f.mc_samples);
  put("lmo-steps", f.lmo_steps);
  put("seeds", f.seeds);
  put("gap-samples", f.gap_samples);
  put("step-samples", f.step_samples);
  put("latent-dim", f.latent_dim);
  put("seed", f.seed);
  put("delta", f.delta);
  put("gap-tol", f.gap_tol);
  put("step-size", f.step_size);
  put("scale-floor", f.scale_floor);
  put("split", f.split);
  return j;
}

std::string fmt(const std::optional<double>& v, const char* spec = "%.5f") {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}

int cmd_run(const RunFlags& flags) {
  boostvi::ExperimentConfig cfg;
  try {
    if (!flags.config.empty()) boostvi::apply_json(cfg, read_json_file(flags.config, "config"));
    boostvi::apply_json(cfg, flags_to_json(flags));
    cfg.validate();
    if (cfg.out_dir.empty()) throw boostvi::ConfigError("out", "an output directory is required");
  } catch (const boostvi::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }

  std::uint64_t current_seed = cfg.seed;
  std::size_t seed_index = 0;
  boostvi::BoostHooks hooks;
  hooks.on_iteration = [&](const boostvi::IterationRecord& r) {
    if (r.t == 0) current_seed = cfg.seed + seed_index++;
    std::printf("seed=%llu t=%zu gamma=%.4f gap=%s train_ll=%.5f atoms=%zu\n",
                static_cast<unsigned long long>(current_seed), r.t, r.gamma, fmt(r.gap_estimate).c_str(), r.train_ll,
                r.n_atoms);
    std::fflush(stdout);
  };
  try {
    const auto summary = boostvi::run_experiment(cfg, hooks);
    for (const auto& [k, v] : summary.stats) std::printf("%s: %.5f +- %.5f\n", k.c_str(), v.mean, v.std);
  } catch (const boostvi::DataError& e) {
    std::cerr << "error: data: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

void print_report(const boostvi::ProbeReport& rep, const char* tag_override = nullptr) {
  for (const auto& row : rep.rows) {
    const char* tag = tag_override ? tag_override : (row.passed ? "PASS" : "FAIL");
    std::printf("%-4s %-12s %-40s value=%.8g reference=%.8g\n", tag, rep.name.c_str(), row.label.c_str(), row.value,
                row.reference);
  }
}

int cmd_probe(const std::string& which, std::optional<double> gamma, double scale_floor) {
  if (which != "all" && which != "entropy" && which != "curvature" && which != "gap") {
    std::cerr << "error: config key 'probe': unknown value '" << which << "'\n";
    return kConfigError;
  }
  bool ok = true;
  try {
    if (which == "all" || which == "entropy") {
      try {
        const auto rep = boostvi::entropy_probe(scale_floor);
        print_report(rep);
        ok = ok && rep.passed;
      } catch (const std::invalid_argument& e) {
        std::printf("FAIL entropy       rejected configuration: %s\n", e.what());
        ok = false;
      }
    }
    if (which == "all" || which == "curvature") {
      if (gamma) {
        const auto rep = boostvi::curvature_at_gamma(*gamma);
        std::printf("curvature (2/gamma^2) KL(q + gamma (s - q) || q) at gamma=%g; reference is 2 KL(s || q)\n", *gamma);
        print_report(rep);
        ok = ok && rep.passed;
      } else {
        const auto rep = boostvi::curvature_limit_probe();
        print_report(rep);
        ok = ok && rep.passed;
        boostvi::CurvatureProbeOptions l2;
        l2.l2_reference = true;
        print_report(boostvi::curvature_limit_probe(l2), "INFO");
      }
    }
    if (which == "all" || which == "gap") {
      const auto rep = boostvi::gap_bound_probe();
      print_report(rep);
      ok = ok && rep.passed;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  std::printf("%s\n", ok ? "all probes passed" : "probe failure");
  return ok ? kOk : kProbeFailure;
}

int plot_one(const fs::path& run_dir, const fs::path& out_dir) {
  if (!fs::is_directory(run_dir) || fs::is_empty(run_dir)) {
    std::cerr << "error: run directory missing or empty: " << run_dir << '\n';
    return kConfigError;
  }
  if (!fs::exists(run_dir / "config.json") || !fs::exists(run_dir / "trace.json")) {
    std::cerr << "error: " << run_dir << " has no config.json/trace.json\n";
    return kConfigError;
  }
  boostvi::ExperimentConfig cfg;
  json trace;
  try {
    cfg = boostvi::config_from_json(read_json_file((run_dir / "config.json").string(), "config"));
    trace = read_json_file((run_dir / "trace.json").string(), "trace");
  } catch (const boostvi::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    fs::create_directories(out_dir);
    const std::string variant = boostvi::to_string(cfg.fw.variant);
    const json& run = trace.at("runs").at(0);
    std::vector<boostvi::Mixture> iterates;
    for (const auto& m : run.at("iterates")) iterates.push_back(boostvi::mixture_from_json(m));
    if (!iterates.empty() && iterates.front().dim() == 1) {
      std::optional<boostvi::Mixture> target;
      if (cfg.model == boostvi::ModelKind::Bimodal) target = boostvi::bimodal_mixture(cfg.bimodal);
      boostvi::write_density_csv(iterates, target, out_dir / ("density_" + variant + ".csv"));
    }
    std::ofstream out(out_dir / ("series_" + variant + ".csv"));
    out.precision(10);
    out << "t,gamma,kl,gap,gap_stderr,train_ll\n";
    const auto cell = [](const json& v) { return v.is_null() ? std::string() : v.dump(); };
    for (const auto& r : run.at("records")) {
      out << r.at("t").get<std::size_t>() << ',' << r.at("gamma").get<double>() << ',' << cell(r.at("kl_oracle"))
          << ',' << cell(r.at("gap_estimate")) << ',' << cell(r.at("gap_stderr")) << ','
          << r.at("train_ll").get<double>() << '\n';
    }
    std::printf("wrote %s series for %s\n", variant.c_str(), run_dir.string().c_str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

int cmd_plotdata(const std::vector<std::string>& runs, const std::string& out) {
  for (const auto& r : runs) {
    const int rc = plot_one(r, out.empty() ? fs::path(r) : fs::path(out));
    if (rc != kOk) return rc;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosting black-box variational inference"};
  app.require_subcommand(1);

  RunFlags rf;
  auto* run = app.add_subcommand("run", "run boosting for one or more seeds");
  run->add_option("--config", rf.config, "JSON config file; flags override its keys");
  run->add_option("--model", rf.model, "bimodal | logistic | matrix_factorization");
  run->add_option("--data", rf.data, "CSV data (features+label, or i,j,r triples)");
  run->add_option("--variant", rf.variant, "fixed | linesearch | fullycorrective");
  run->add_option("--iters", rf.iters, "boosting iterations T");
  run->add_option("--mc-samples", rf.mc_samples, "LMO samples per gradient step");
  run->add_option("--lmo-steps", rf.lmo_steps, "LMO gradient steps");
  run->add_option("--step-size", rf.step_size, "LMO step size");
  run->add_option("--lambda", rf.lambda, "sqrt | const:<v>");
  run->add_option("--delta", rf.delta, "assumed LMO accuracy in (0, 1]");
  run->add_option("--gap-tol", rf.gap_tol, "stop when gap/delta falls below this (0 disables)");
  run->add_option("--gap-samples", rf.gap_samples, "samples for the duality gap");
  run->add_option("--step-samples", rf.step_samples, "samples for line search / corrective weights");
  run->add_option("--seed", rf.seed, "first seed");
  run->add_option("--seeds", rf.seeds, "number of seeds");
  run->add_option("--family", rf.family, "gaussian | laplace");
  run->add_option("--estimator", rf.estimator, "reparameterization | score_function");
  run->add_option("--init", rf.init, "random_normal | perturb_current");
  run->add_option("--scale-floor", rf.scale_floor, "minimum atom scale");
  run->add_option("--split", rf.split, "train fraction");
  run->add_option("--latent-dim", rf.latent_dim, "factorization rank");
  run->add_option("--out", rf.out, "output directory");

  std::string probe_name = "all";
  std::optional<double> probe_gamma;
  double probe_floor = boostvi::kDefaultScaleFloor;
  auto* probe = app.add_subcommand("probe", "numeric theory probes");
  probe->add_option("--probe", probe_name, "all | entropy | curvature | gap");
  probe->add_option("--gamma", probe_gamma, "report curvature values at this gamma only");
  probe->add_option("--scale-floor", probe_floor, "scale floor for the entropy probe");

  std::vector<std::string> plot_runs;
  std::string plot_out;
  auto* plot = app.add_subcommand("plotdata", "export density and series CSVs from run directories");
  plot->add_option("--run", plot_runs, "run directory (repeatable)")->required();
  plot->add_option("--out", plot_out, "output directory (default: each run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*run) return cmd_run(rf);
  if (*probe) return cmd_probe(probe_name, probe_gamma, probe_floor);
  return cmd_plotdata(plot_runs, plot_out);
}

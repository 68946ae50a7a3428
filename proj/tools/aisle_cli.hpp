#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aisle/checks.hpp"
#include "aisle/harness.hpp"

namespace aisle::cli {

enum ExitCode : int { kSuccess = 0, kCheckFailed = 1, kConfigError = 2, kNumericalAbort = 3 };

/// A configuration problem tied to one key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error("config key '" + key + "': " + message), key_(std::move(key)) {}
  [[nodiscard]] const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Experiment grid: list-valued D, K and estimator expand to a Cartesian
/// product; everything else is shared.
struct GridConfig {
  ExperimentConfig base;
  std::vector<int> dims{2, 5, 10};
  std::vector<int> particles{1, 10, 100};
  std::vector<EstimatorKind> estimators{kAllEstimators.begin(), kAllEstimators.end()};

  [[nodiscard]] std::vector<ExperimentConfig> expand() const {
    std::vector<ExperimentConfig> configs;
    for (int d : dims) {
      for (int k : particles) {
        for (auto est : estimators) {
          ExperimentConfig c = base;
          c.dim = d;
          c.num_particles = k;
          c.estimator = est;
          configs.push_back(c);
        }
      }
    }
    return configs;
  }
};

using nlohmann::json;

namespace detail {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{"scenario", "D",          "K",          "N",          "estimator",
                                             "optimizer", "eta",       "iterations", "replicates", "master_seed"};
  return keys;
}

inline int positive_int(const json& value, const std::string& key) {
  if (!value.is_number_integer() || value.get<long long>() < 1 || value.get<long long>() > (1LL << 31) - 1) {
    throw ConfigError(key, "expected a positive integer");
  }
  return value.get<int>();
}

inline std::vector<int> int_list(const json& value, const std::string& key) {
  std::vector<int> out;
  if (value.is_array()) {
    if (value.empty()) throw ConfigError(key, "empty list");
    for (const auto& v : value) out.push_back(positive_int(v, key));
  } else {
    out.push_back(positive_int(value, key));
  }
  return out;
}

inline EstimatorKind estimator_name(const std::string& name, const std::string& key) {
  const auto kind = parse_estimator(name);
  if (!kind) throw ConfigError(key, "unknown estimator '" + name + "'");
  return *kind;
}

inline std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

inline std::vector<int> parse_int_list(const std::string& text, const std::string& key) {
  std::vector<int> values;
  for (const auto& part : split(text)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      values.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected comma-separated positive integers, got '" + text + "'");
    }
  }
  if (values.empty()) throw ConfigError(key, "empty list");
  return values;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::error_code ignored;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ignored);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("--out", "cannot write '" + path.string() + "'");
  return out;
}

}  // namespace detail

/// Parses a config document. Keys must be exactly the ExperimentConfig field
/// names; unknown keys are errors.
inline GridConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const auto& keys = detail::config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(key, "unknown key");
  }

  GridConfig grid;
  auto& base = grid.base;
  if (doc.contains("scenario")) {
    const auto& v = doc["scenario"];
    const auto scenario = v.is_string() ? parse_scenario(v.get<std::string>()) : std::nullopt;
    if (!scenario) throw ConfigError("scenario", "expected \"diagonal\" or \"ar_correlated\"");
    base.scenario = *scenario;
  }
  if (doc.contains("D")) grid.dims = detail::int_list(doc["D"], "D");
  if (doc.contains("K")) grid.particles = detail::int_list(doc["K"], "K");
  if (doc.contains("N")) base.num_observations = detail::positive_int(doc["N"], "N");
  if (doc.contains("estimator")) {
    const auto& v = doc["estimator"];
    grid.estimators.clear();
    if (v.is_string()) {
      grid.estimators.push_back(detail::estimator_name(v.get<std::string>(), "estimator"));
    } else if (v.is_array() && !v.empty()) {
      for (const auto& e : v) {
        if (!e.is_string()) throw ConfigError("estimator", "expected estimator names");
        grid.estimators.push_back(detail::estimator_name(e.get<std::string>(), "estimator"));
      }
    } else {
      throw ConfigError("estimator", "expected a name or a non-empty list of names");
    }
  }
  if (doc.contains("optimizer")) {
    const auto& v = doc["optimizer"];
    const auto kind = v.is_string() ? parse_optimizer(v.get<std::string>()) : std::nullopt;
    if (!kind) throw ConfigError("optimizer", "expected \"sga_l1\" or \"adam\"");
    base.optimizer = *kind;
  }
  if (doc.contains("eta")) {
    const auto& v = doc["eta"];
    if (v.is_null()) {
      base.eta.reset();
    } else if (v.is_number() && v.get<double>() > 0.0 && v.get<double>() <= 1.0) {
      base.eta = v.get<double>();
    } else {
      throw ConfigError("eta", "expected null or a number in (0, 1]");
    }
  }
  if (doc.contains("iterations")) base.iterations = detail::positive_int(doc["iterations"], "iterations");
  if (doc.contains("replicates")) base.replicates = detail::positive_int(doc["replicates"], "replicates");
  if (doc.contains("master_seed")) {
    const auto& v = doc["master_seed"];
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("master_seed", "expected a non-negative 64-bit integer");
    }
    base.master_seed = v.get<std::uint64_t>();
  }
  return grid;
}

/// The fully resolved config, in the same schema parse_config accepts.
inline json to_json(const GridConfig& grid) {
  json estimators = json::array();
  for (auto e : grid.estimators) estimators.push_back(std::string(to_string(e)));
  const auto& b = grid.base;
  return json{{"scenario", std::string(to_string(b.scenario))},
              {"D", grid.dims},
              {"K", grid.particles},
              {"N", b.num_observations},
              {"estimator", estimators},
              {"optimizer", std::string(to_string(b.optimizer))},
              {"eta", b.eta ? json(*b.eta) : json(nullptr)},
              {"iterations", b.iterations},
              {"replicates", b.replicates},
              {"master_seed", b.master_seed}};
}

/// Loads a config file, or the config embedded in a run-metadata sidecar.
inline GridConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& error) {
    throw ConfigError("--config", std::string("invalid JSON: ") + error.what());
  }
  if (doc.is_object() && doc.contains("prng") && doc.contains("config")) {
    if (doc["prng"] != std::string(kPrngId)) {
      throw ConfigError("prng", "metadata was written with a different generator");
    }
    return parse_config(doc["config"]);
  }
  return parse_config(doc);
}

inline std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
  auto meta = csv_path;
  meta.replace_extension(".meta.json");
  return meta;
}

/// Fixed benchmark for signal-to-noise sweeps: one observation from the
/// model and a proposal whose mean and log-scales are offset from the exact
/// posterior.
struct SnrProblem {
  ModelSpec model;
  ProposalParams phi;
  Vector x;
};

inline SnrProblem make_snr_problem(Scenario scenario, Eigen::Index dim, std::uint64_t seed) {
  ExperimentConfig config;
  config.scenario = scenario;
  config.dim = static_cast<int>(dim);
  config.num_observations = 1;
  config.master_seed = seed;
  const auto data = generate_replicate_data(config, 0);
  // Keep theta at the generating mean: with one observation theta_ML = x and
  // the evidence gradient would vanish.
  const ModelSpec model = data.model.with_mu(data.true_mu);
  const Vector& x = data.observations.front();
  const Matrix& p = model.posterior_cov();
  // Exact posterior mean via A = P, b = P Sigma^{-1} mu; shifted by 0.5 per
  // component, with standard deviations 1.2 times the posterior marginals.
  Vector b = p * (model.sigma_inv() * model.mu()) + Vector::Constant(dim, 0.5);
  Vector c = (1.2 * p.diagonal().cwiseSqrt()).array().log();
  return {model, ProposalParams(p, std::move(b), std::move(c)), x};
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int run_command(const GridConfig& grid, const std::string& out_path, std::size_t threads, Streams io) {
  const auto configs = grid.expand();
  for (const auto& config : configs) config.validate();
  auto csv = detail::open_output(out_path);
  std::vector<ExperimentResult> results;
  for (const auto& config : configs) results.push_back(run_experiment(config, threads));

  csv << kTrajectoryCsvHeader << '\n';
  for (const auto& r : results) write_trajectory_rows(csv, r);
  csv.close();

  json aborts = json::array();
  for (const auto& r : results) {
    for (const auto& a : r.aborts) {
      aborts.push_back({{"D", r.config.dim},
                        {"K", r.config.num_particles},
                        {"estimator", std::string(to_string(a.estimator))},
                        {"replicate", a.replicate},
                        {"iteration", a.iteration},
                        {"reason", a.reason}});
    }
  }
  const json meta{{"prng", std::string(kPrngId)},
                  {"master_seed", grid.base.master_seed},
                  {"b_star", "P Sigma^-1 theta_ML"},
                  {"config", to_json(grid)},
                  {"aborts", aborts}};
  const auto meta_path = metadata_path(out_path);
  auto meta_out = detail::open_output(meta_path);
  meta_out << meta.dump(2) << '\n';

  io.out << "wrote " << out_path << " (" << configs.size() << " configurations) and " << meta_path.string()
         << '\n';
  if (!aborts.empty()) {
    io.err << "numerical abort in " << aborts.size() << " replicate(s):\n";
    for (const auto& a : aborts) io.err << "  " << a.dump() << '\n';
    return kNumericalAbort;
  }
  return kSuccess;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int parse_and_dispatch(int argc, const char* const* argv, Streams io = {std::cout, std::cerr}) {
  CLI::App app{"Importance-sampling gradient estimators for variational inference on a Gaussian benchmark"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = 0;
  std::size_t threads = 0;

  // run
  auto* run = app.add_subcommand("run", "run the optimisation experiments and write median b-error trajectories");
  std::string config_path;
  std::string run_out = "trajectories.csv";
  std::string k_list, d_list, estimators, scenario, optimizer, eta;
  int iterations = 0, replicates = 0;
  run->add_option("--config", config_path, "JSON config (or a run-metadata file)");
  run->add_option("--out", run_out, "trajectory CSV path; metadata goes next to it");
  run->add_option("--seed", seed, "master seed override");
  run->add_option("--threads", threads, "worker count (default: available parallelism)");
  run->add_option("--K", k_list, "comma-separated particle counts");
  run->add_option("--D", d_list, "comma-separated dimensions");
  run->add_option("--estimators", estimators, "comma-separated estimator names");
  run->add_option("--scenario", scenario, "diagonal | ar_correlated");
  run->add_option("--optimizer", optimizer, "sga_l1 | adam");
  run->add_option("--eta", eta, "weight regularisation in (0,1], or 'none'");
  run->add_option("--iterations", iterations, "optimisation steps per replicate");
  run->add_option("--replicates", replicates, "independent replicates per configuration");

  // snr
  auto* snr = app.add_subcommand("snr", "signal-to-noise sweep over K");
  std::string snr_out = "snr.csv";
  std::string snr_k = "1,4,16,64,256";
  std::string snr_estimators = "iwae,iwae_stl,iwae_dreg,theta";
  std::string snr_scenario = "diagonal";
  int snr_dim = 2;
  std::size_t samples = 10000;
  snr->add_option("--out", snr_out, "SNR CSV path");
  snr->add_option("--seed", seed, "seed");
  snr->add_option("--threads", threads, "worker count");
  snr->add_option("--K", snr_k, "comma-separated particle counts");
  snr->add_option("--D", snr_dim, "dimension");
  snr->add_option("--M", samples, "particle sets per K");
  snr->add_option("--estimators", snr_estimators, "comma-separated estimator names; 'theta' for the theta-gradient");
  snr->add_option("--scenario", snr_scenario, "diagonal | ar_correlated");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  int points = 50;
  gradcheck->add_option("--seed", seed, "seed");
  gradcheck->add_option("--points", points, "random configurations per dimension");

  // identities
  auto* identities = app.add_subcommand("identities", "verify estimator identities and zero-variance cases");
  int configurations = 1000;
  identities->add_option("--seed", seed, "seed");
  identities->add_option("--configs", configurations, "random configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error, io.out, io.err);
    return code == 0 ? kSuccess : kConfigError;
  }

  try {
    if (*run) {
      GridConfig grid = config_path.empty() ? GridConfig{} : load_config(config_path);
      if (run->count("--seed") > 0) grid.base.master_seed = seed;
      if (!k_list.empty()) grid.particles = detail::parse_int_list(k_list, "--K");
      if (!d_list.empty()) grid.dims = detail::parse_int_list(d_list, "--D");
      if (!estimators.empty()) {
        grid.estimators.clear();
        for (const auto& name : detail::split(estimators)) {
          grid.estimators.push_back(detail::estimator_name(name, "--estimators"));
        }
      }
      if (!scenario.empty()) {
        const auto s = parse_scenario(scenario);
        if (!s) throw ConfigError("--scenario", "unknown scenario '" + scenario + "'");
        grid.base.scenario = *s;
      }
      if (!optimizer.empty()) {
        const auto o = parse_optimizer(optimizer);
        if (!o) throw ConfigError("--optimizer", "unknown optimizer '" + optimizer + "'");
        grid.base.optimizer = *o;
      }
      if (!eta.empty()) {
        if (eta == "none") {
          grid.base.eta.reset();
        } else {
          try {
            grid.base.eta = std::stod(eta);
          } catch (const std::exception&) {
            throw ConfigError("--eta", "expected a number or 'none'");
          }
        }
      }
      if (run->count("--iterations") > 0) grid.base.iterations = iterations;
      if (run->count("--replicates") > 0) grid.base.replicates = replicates;
      try {
        for (const auto& c : grid.expand()) c.validate();
      } catch (const InvalidInput& error) {
        throw ConfigError("config", error.what());
      }
      return run_command(grid, run_out, threads, io);
    }

    if (*snr) {
      const auto s = parse_scenario(snr_scenario);
      if (!s) throw ConfigError("--scenario", "unknown scenario '" + snr_scenario + "'");
      if (snr_dim < 1) throw ConfigError("--D", "must be positive");
      if (samples < 100) throw ConfigError("--M", "must be at least 100");
      std::vector<EstimatorKind> kinds;
      bool include_theta = false;
      for (const auto& name : detail::split(snr_estimators)) {
        if (name == "theta") {
          include_theta = true;
        } else {
          kinds.push_back(detail::estimator_name(name, "--estimators"));
        }
      }
      std::vector<Eigen::Index> grid;
      for (int k : detail::parse_int_list(snr_k, "--K")) grid.push_back(k);
      const auto problem = make_snr_problem(*s, snr_dim, seed);
      const auto rows = snr_sweep(problem.model, problem.phi, problem.x, kinds, grid, samples, seed,
                                  include_theta, threads);
      auto csv = detail::open_output(snr_out);
      csv << kSnrCsvHeader << '\n';
      write_snr_rows(csv, rows);
      io.out << "wrote " << snr_out << " (" << rows.size() << " rows)\n";
      for (std::size_t r = 0; r < rows.size(); r += grid.size()) {
        io.out << "  " << rows[r].estimator << ": log-log slope " << format_real(rows[r].slope) << '\n';
      }
      return kSuccess;
    }

    if (*gradcheck) {
      bool ok = true;
      for (const auto& check : checks::gradient_checks(seed, points)) {
        io.out << (check.passed() ? "PASS " : "FAIL ") << check.name << ": max relative error "
               << check.value << " (tolerance " << check.threshold << ")\n";
        ok = ok && check.passed();
      }
      return ok ? kSuccess : kCheckFailed;
    }

    if (*identities) {
      bool ok = true;
      auto report = [&](const checks::CheckResult& check) {
        io.out << (check.passed() ? "PASS " : "FAIL ") << check.name << ": " << check.value
               << (check.must_exceed ? " (must exceed " : " (tolerance ") << check.threshold << ")\n";
        ok = ok && check.passed();
      };
      for (const auto& check : checks::identity_checks(seed, {configurations})) report(check);
      const auto zero = checks::zero_variance_checks(seed);
      report(zero.log_weight_spread);
      for (const auto& check : zero.score_free) report(check);
      for (const auto& check : zero.score_based) report(check);
      return ok ? kSuccess : kCheckFailed;
    }
  } catch (const ConfigError& error) {
    io.err << "config error: " << error.what() << '\n';
    return kConfigError;
  }
  return kConfigError;
}

}  // namespace aisle::cli

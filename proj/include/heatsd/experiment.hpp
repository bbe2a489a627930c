#pragma once

#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "heatsd/closed_loop.hpp"
#include "heatsd/errors.hpp"
#include "heatsd/feedback.hpp"
#include "heatsd/gram.hpp"
#include "heatsd/min_norm.hpp"
#include "heatsd/model.hpp"
#include "heatsd/rng.hpp"
#include "heatsd/serialize.hpp"
#include "heatsd/toml_lite.hpp"
#include "heatsd/version.hpp"

namespace heatsd {

// One experiment definition: the model plus the synthesis/simulation knobs.
struct ExperimentConfig {
  ModelConfig model;
  std::optional<double> gamma;
  std::vector<double> T_grid;  // one entry when `T` was given; possibly empty
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";
  double safety_factor = 1.1;
};

namespace cfg_detail {

inline const TomlValue& get(const TomlTable& t, const std::string& key) {
  auto it = t.find(key);
  require(it != t.end(), ErrorKind::config, "missing required key '" + key + "'");
  return it->second;
}

inline double number(const TomlValue& v, const std::string& key) {
  require(v.kind == TomlValue::Kind::number, ErrorKind::config,
          "key '" + key + "' (line " + std::to_string(v.line) + ") must be a number");
  return v.number;
}

inline std::vector<double> number_array(const TomlValue& v, const std::string& key) {
  require(v.kind == TomlValue::Kind::number_array, ErrorKind::config,
          "key '" + key + "' (line " + std::to_string(v.line) +
              ") must be an array of numbers");
  return v.numbers;
}

inline int integer(const TomlValue& v, const std::string& key) {
  const double d = number(v, key);
  require(std::isfinite(d) && d == std::floor(d), ErrorKind::config,
          "key '" + key + "' must be an integer");
  return static_cast<int>(d);
}

inline Interval interval(const TomlValue& v, const std::string& key) {
  const auto a = number_array(v, key);
  require(a.size() == 2, ErrorKind::config, "key '" + key + "' must be [a, b]");
  return Interval{a[0], a[1]};
}

}  // namespace cfg_detail

inline ExperimentConfig parse_experiment_config(const TomlTable& t) {
  static const std::vector<std::string> known = {
      "domain_length", "n_grid", "potential", "omega",      "omega1",       "gamma",
      "T",             "T_grid", "seeds",     "output_dir", "safety_factor"};
  for (const auto& [key, val] : t) {
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    require(ok, ErrorKind::config,
            "unknown key '" + key + "' (line " + std::to_string(val.line) + ")");
  }

  ExperimentConfig cfg;
  cfg.model.domain_length = cfg_detail::number(cfg_detail::get(t, "domain_length"), "domain_length");
  cfg.model.n_grid = cfg_detail::integer(cfg_detail::get(t, "n_grid"), "n_grid");
  const TomlValue& pot = cfg_detail::get(t, "potential");
  if (pot.kind == TomlValue::Kind::number) {
    cfg.model.potential = Eigen::VectorXd::Constant(1, pot.number);
  } else {
    const auto vals = cfg_detail::number_array(pot, "potential");
    cfg.model.potential =
        Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }
  cfg.model.omega = cfg_detail::interval(cfg_detail::get(t, "omega"), "omega");
  cfg.model.omega1 = cfg_detail::interval(cfg_detail::get(t, "omega1"), "omega1");

  if (t.count("gamma")) {
    cfg.gamma = cfg_detail::number(t.at("gamma"), "gamma");
    require(std::isfinite(*cfg.gamma) && *cfg.gamma > 0.0, ErrorKind::config,
            "gamma must be positive");
  }
  require(!(t.count("T") && t.count("T_grid")), ErrorKind::config,
          "give either 'T' or 'T_grid', not both");
  if (t.count("T")) cfg.T_grid = {cfg_detail::number(t.at("T"), "T")};
  if (t.count("T_grid")) cfg.T_grid = cfg_detail::number_array(t.at("T_grid"), "T_grid");
  for (std::size_t i = 0; i < cfg.T_grid.size(); ++i) {
    require(std::isfinite(cfg.T_grid[i]) && cfg.T_grid[i] > 0.0, ErrorKind::config,
            "T values must be positive");
    require(i == 0 || cfg.T_grid[i] > cfg.T_grid[i - 1], ErrorKind::config,
            "T_grid must be strictly increasing");
  }
  if (t.count("seeds")) {
    cfg.seeds.clear();
    for (double d : cfg_detail::number_array(t.at("seeds"), "seeds")) {
      require(d >= 0.0 && d == std::floor(d), ErrorKind::config,
              "seeds must be nonnegative integers");
      cfg.seeds.push_back(static_cast<std::uint64_t>(d));
    }
    require(!cfg.seeds.empty(), ErrorKind::config, "seeds must be nonempty");
  }
  if (t.count("output_dir")) {
    const TomlValue& v = t.at("output_dir");
    require(v.kind == TomlValue::Kind::string, ErrorKind::config,
            "output_dir must be a string");
    cfg.output_dir = v.str;
  }
  if (t.count("safety_factor")) {
    cfg.safety_factor = cfg_detail::number(t.at("safety_factor"), "safety_factor");
    require(std::isfinite(cfg.safety_factor) && cfg.safety_factor >= 1.0,
            ErrorKind::config, "safety_factor must be >= 1");
  }
  validate_config(cfg.model);
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  try {
    return parse_experiment_config(parse_toml_file(path));
  } catch (const Error& e) {
    // An unreadable config file is an invocation problem, same as a bad key.
    if (e.kind() == ErrorKind::io)
      fail(ErrorKind::config, e.what());
    throw;
  }
}

// Canonical identity of a config: every result-affecting field in shortest
// form (the output directory does not change results and is excluded).
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::string s = "model=";
  s += "L=" + format_double(cfg.model.domain_length) + ";n=" + std::to_string(cfg.model.n_grid) + ";V=";
  for (Eigen::Index i = 0; i < cfg.model.potential.size(); ++i) {
    if (i) s += ",";
    s += format_double(cfg.model.potential[i]);
  }
  s += ";omega=" + format_double(cfg.model.omega.a) + "," + format_double(cfg.model.omega.b);
  s += ";omega1=" + format_double(cfg.model.omega1.a) + "," + format_double(cfg.model.omega1.b);
  s += ";gamma=" + (cfg.gamma ? format_double(*cfg.gamma) : std::string("none"));
  s += ";T=";
  for (std::size_t i = 0; i < cfg.T_grid.size(); ++i) {
    if (i) s += ",";
    s += format_double(cfg.T_grid[i]);
  }
  s += ";seeds=";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(cfg.seeds[i]);
  }
  s += ";safety=" + format_double(cfg.safety_factor);
  return hash_hex(fnv1a64(s));
}

// --- run manifest ---------------------------------------------------------------

struct RunManifest {
  std::string config_hash;
  std::string model_hash;
  std::string calibration;  // "none" or "C0=<...>;safety=<...>"
  std::string tool_version;
  std::string timestamp_utc;
};

// The hash excludes the timestamp: reruns of one config share an identity.
inline std::string manifest_hash(const RunManifest& m) {
  return hash_hex(fnv1a64(m.config_hash + "|" + m.model_hash + "|" + m.calibration +
                          "|" + m.tool_version));
}

inline RunManifest make_manifest(const ExperimentConfig& cfg,
                                 const std::string& calibration_desc) {
  RunManifest m;
  m.config_hash = config_hash(cfg);
  m.model_hash = model_hash(cfg.model);
  m.calibration = calibration_desc;
  m.tool_version = std::string(kVersion);
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  m.timestamp_utc = buf;
  return m;
}

inline json to_json(const RunManifest& m) {
  return {{"config_hash", m.config_hash},     {"model_hash", m.model_hash},
          {"calibration", m.calibration},     {"tool_version", m.tool_version},
          {"timestamp_utc", m.timestamp_utc}, {"manifest_hash", manifest_hash(m)}};
}

inline std::string write_manifest(const ExperimentConfig& cfg,
                                  const std::string& calibration_desc) {
  ensure_dir(cfg.output_dir);
  const RunManifest m = make_manifest(cfg, calibration_desc);
  write_json_file(std::filesystem::path(cfg.output_dir) / "manifest.json", to_json(m));
  return manifest_hash(m);
}

inline std::string describe_calibration(const CalibratedConstant& cal) {
  return "C0=" + format_double(cal.C0) + ";safety=" + format_double(cal.safety_factor);
}

// --- subcommand drivers -----------------------------------------------------------

inline int cmd_model_info(const ExperimentConfig& cfg, std::ostream& out) {
  const SpectralModel mdl = build_model(cfg.model);
  const std::string mhash = write_manifest(cfg, "none");
  const int head = std::min(10, mdl.n());
  out << "n = " << mdl.n() << ", h = " << format_double(mdl.h) << "\n";
  out << "gamma0 = " << format_double(mdl.gamma0)
      << ", nonpositive eigenvalues = " << mdl.n_nonpositive
      << ", trustworthy modes = " << trustworthy_mode_count(mdl) << "\n";
  out << "control mask nodes = " << mdl.control_mask.size()
      << ", observation mask nodes = " << mdl.observation_mask.size() << "\n";
  for (int j = 0; j < head; ++j)
    out << "lambda_" << (j + 1) << " = " << format_double(mdl.eigenvalues[j]) << "\n";
  json j{{"n", mdl.n()},
         {"h", mdl.h},
         {"gamma0", mdl.gamma0},
         {"nonpositive_count", mdl.n_nonpositive},
         {"trustworthy_mode_count", trustworthy_mode_count(mdl)},
         {"control_mask_nodes", mdl.control_mask.size()},
         {"observation_mask_nodes", mdl.observation_mask.size()},
         {"eigenvalues_head", to_json(mdl.eigenvalues.head(head))},
         {"model_hash", model_hash(cfg.model)},
         {"manifest", mhash}};
  write_json_file(std::filesystem::path(cfg.output_dir) / "model_info.json", j);
  return 0;
}

inline int cmd_calibrate(const ExperimentConfig& cfg, std::ostream& out, int M_max,
                         std::optional<double> safety_override) {
  const SpectralModel mdl = build_model(cfg.model);
  const double safety = safety_override.value_or(cfg.safety_factor);
  const CalibratedConstant cal =
      calibrate_C0(mdl, default_calibration_range(mdl, M_max), safety);
  const std::string mhash = write_manifest(cfg, describe_calibration(cal));
  json j = to_json(cal, model_hash(cfg.model));
  j["manifest"] = mhash;
  write_json_file(std::filesystem::path(cfg.output_dir) / "calibration.json", j);
  out << "C0 = " << format_double(cal.C0) << " (safety factor "
      << format_double(cal.safety_factor) << ", " << cal.samples.size()
      << " samples)\n";
  return 0;
}

namespace cmd_detail {

// Load a calibration record checked against the model, or calibrate afresh.
inline CalibratedConstant resolve_calibration(const ExperimentConfig& cfg,
                                              const SpectralModel& mdl,
                                              const std::optional<std::string>& path,
                                              std::ostream& out) {
  if (path) {
    const json j = read_json_file(*path);
    const CalibratedConstant cal = calibration_from_json(j);
    require(j.contains("model_hash") &&
                j.at("model_hash").get<std::string>() == model_hash(cfg.model),
            ErrorKind::config,
            "calibration record " + *path + " belongs to a different model");
    return cal;
  }
  out << "no calibration record given; calibrating in-process\n";
  return calibrate_C0(mdl, default_calibration_range(mdl, 12), cfg.safety_factor);
}

inline StateVector parse_y0(const SpectralModel& mdl, const std::string& spec,
                            std::uint64_t fallback_seed) {
  if (spec.rfind("mode:", 0) == 0) {
    const int j = std::stoi(spec.substr(5));
    require(j >= 1 && j <= mdl.n(), ErrorKind::config,
            "y0 mode index out of range: " + spec);
    StateVector y = StateVector::Zero(mdl.n());
    y[j - 1] = 1.0;
    return y;
  }
  if (spec.rfind("random:", 0) == 0) {
    Rng rng(std::stoull(spec.substr(7)));
    return rng.unit_vector(mdl.n());
  }
  if (spec.rfind("file:", 0) == 0) {
    const StateVector y = vector_from_json(read_json_file(spec.substr(5)));
    require(y.size() == mdl.n(), ErrorKind::config,
            "y0 file holds " + std::to_string(y.size()) + " coefficients, expected " +
                std::to_string(mdl.n()));
    return y;
  }
  if (spec.empty()) {
    Rng rng(fallback_seed);
    return rng.unit_vector(mdl.n());
  }
  fail(ErrorKind::config, "y0 must be mode:<j>, random:<seed>, or file:<path>");
}

}  // namespace cmd_detail

inline int cmd_synthesize(const ExperimentConfig& cfg, std::ostream& out,
                          std::optional<double> gamma_flag, std::optional<double> T_flag,
                          std::optional<std::string> calibration_path) {
  const SpectralModel mdl = build_model(cfg.model);
  const CalibratedConstant cal =
      cmd_detail::resolve_calibration(cfg, mdl, calibration_path, out);
  std::optional<double> gamma = gamma_flag ? gamma_flag : cfg.gamma;
  require(gamma.has_value(), ErrorKind::config, "gamma required (flag or config)");
  std::optional<double> T = T_flag;
  if (!T && cfg.T_grid.size() == 1) T = cfg.T_grid[0];
  require(T.has_value(), ErrorKind::config, "a single T required (flag or config)");

  const FeedbackLaw law = synthesize(mdl, *gamma, *T, cal);
  const std::string mhash = write_manifest(cfg, describe_calibration(cal));
  json j = to_json(law, model_hash(cfg.model));
  j["manifest"] = mhash;
  write_json_file(std::filesystem::path(cfg.output_dir) / "law.json", j);
  out << "N = " << law.params.N << ", M = " << law.params.M
      << ", eps0 = " << format_double(law.params.eps0)
      << ", op_norm = " << format_double(law.op_norm)
      << (law.coercivity_check_conclusive ? "" : " (coercivity recheck floor-limited)")
      << "\n";
  return 0;
}

inline int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out,
                        std::optional<std::string> law_path, const std::string& y0_spec,
                        int periods, std::optional<double> output_dt,
                        std::optional<std::uint64_t> seed_flag) {
  const SpectralModel mdl = build_model(cfg.model);
  const std::filesystem::path lp =
      law_path ? std::filesystem::path(*law_path)
               : std::filesystem::path(cfg.output_dir) / "law.json";
  const FeedbackLaw law = law_from_json(read_json_file(lp), model_hash(cfg.model));
  const std::uint64_t seed = seed_flag.value_or(cfg.seeds.front());
  const StateVector y0 = cmd_detail::parse_y0(mdl, y0_spec, seed);
  const double dt = output_dt.value_or(law.params.T / 4.0);

  const Trajectory traj = simulate(mdl, law, y0, periods, dt);
  const DecayReport rep =
      verify_decay(mdl, traj, law, law.params.gamma, law.params.T);

  const std::string mhash = write_manifest(
      cfg, "C0=" + format_double(law.params.C0) + ";safety=" +
               format_double(law.params.safety_factor));
  std::vector<std::vector<std::string>> rows;
  for (const Snapshot& s : traj.snapshots)
    rows.push_back({format_double(s.t), format_double(s.state.norm())});
  write_csv(std::filesystem::path(cfg.output_dir) / "trajectory.csv", mhash,
            {"t", "norm"}, rows);
  json j = to_json(rep);
  j["manifest"] = mhash;
  write_json_file(std::filesystem::path(cfg.output_dir) / "report.json", j);

  out << "periods = " << periods
      << ", worst two-period ratio = " << format_double(rep.worst_two_period_ratio)
      << " (threshold " << format_double(rep.contraction_threshold) << ")"
      << ", worst envelope margin = " << format_double(rep.worst_bound_margin)
      << ", pass = " << (rep.pass ? "true" : "false") << "\n";
  return rep.pass ? 0 : 1;
}

inline int cmd_sweep_T(const ExperimentConfig& cfg, std::ostream& out,
                       std::optional<double> gamma_flag,
                       const std::vector<double>& grid_flag,
                       std::optional<std::string> calibration_path) {
  const SpectralModel mdl = build_model(cfg.model);
  const CalibratedConstant cal =
      cmd_detail::resolve_calibration(cfg, mdl, calibration_path, out);
  std::optional<double> gamma = gamma_flag ? gamma_flag : cfg.gamma;
  require(gamma.has_value(), ErrorKind::config, "gamma required (flag or config)");
  const std::vector<double>& grid = grid_flag.empty() ? cfg.T_grid : grid_flag;
  require(!grid.empty(), ErrorKind::config, "a T grid is required (flag or config)");

  const std::vector<SweepRow> sweep = bound_curves(mdl, cal, *gamma, grid);
  const std::string mhash = write_manifest(cfg, describe_calibration(cal));
  std::vector<std::vector<std::string>> rows;
  bool all_above = true;
  for (const SweepRow& r : sweep) {
    all_above = all_above && r.op_norm >= r.m1;
    rows.push_back({format_double(r.T), std::to_string(r.N), std::to_string(r.M),
                    format_double(r.eps0), format_double(r.op_norm),
                    format_double(r.m1), format_double(r.m2_advisory),
                    r.coercivity_check_conclusive ? "true" : "false"});
  }
  write_csv(std::filesystem::path(cfg.output_dir) / "sweep.csv", mhash,
            {"T", "N", "M", "eps0", "op_norm", "m1", "m2_advisory",
             "coercivity_check_conclusive"},
            rows);
  for (const SweepRow& r : sweep)
    out << "T = " << format_double(r.T) << ": op_norm = " << format_double(r.op_norm)
        << ", m1 = " << format_double(r.m1) << "\n";
  if (!all_above) out << "FAIL: op_norm fell below m1; calibration is suspect\n";
  return all_above ? 0 : 1;
}

inline int cmd_verify(const ExperimentConfig& cfg, std::ostream& out,
                      std::optional<std::uint64_t> seed_flag) {
  const SpectralModel mdl = build_model(cfg.model);
  const std::uint64_t seed = seed_flag.value_or(cfg.seeds.front());
  bool all_ok = true;
  auto report = [&](const std::string& name, bool ok) {
    all_ok = all_ok && ok;
    out << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
  };

  // Eigenbasis sanity: orthonormality and eigen-residuals.
  {
    const Eigen::MatrixXd G =
        mdl.h * (mdl.modes.transpose() * mdl.modes) -
        Eigen::MatrixXd::Identity(mdl.n(), mdl.n());
    double resid = 0.0;
    for (int j : {0, mdl.n() / 2, mdl.n() - 1}) {
      const Eigen::VectorXd xi = mdl.modes.col(j);
      resid = std::max(resid, grid_norm(mdl, apply_elliptic(mdl, xi) -
                                                 mdl.eigenvalues[j] * xi) /
                                  std::max(1.0, std::abs(mdl.eigenvalues[j])));
    }
    report("eigenbasis orthonormal and residual-clean",
           G.cwiseAbs().maxCoeff() <= 1e-10 && resid <= 1e-8);
  }

  // Gram coercivity with freshly calibrated constant.
  {
    const CalibratedConstant cal =
        calibrate_C0(mdl, default_calibration_range(mdl, 12), cfg.safety_factor);
    Rng rng(seed);
    bool ok = true;
    for (const CalibrationSample& s : cal.samples) {
      const double lim =
          std::exp(cal.C0 * coercivity_exponent_scale(mdl, mdl.eigenvalues[s.M - 1]));
      for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd a = rng.unit_vector(s.M);
        const double q = gram_inverse_quadratic(mdl, s.mask, s.M, a);
        ok = ok && q >= 1.0 - 1e-9 && q <= lim * (1.0 + 1e-9);
      }
    }
    report("Gram coercivity bound with calibrated C0", ok);
  }

  // Interpolation averages on a mid-size projection.
  {
    const int M = std::min(5, mdl.n());
    const InterpolationReport rep =
        check_interpolation_averages(mdl, 0.0, 0.5, M, 50, seed);
    report("masked interpolation averages within tau_" + std::to_string(M),
           rep.violations == 0);
  }

  // Full synthesis path when the config pins gamma and T.
  if (cfg.gamma && cfg.T_grid.size() == 1) {
    const CalibratedConstant cal =
        calibrate_C0(mdl, default_calibration_range(mdl, 12), cfg.safety_factor);
    const FeedbackLaw law = synthesize(mdl, *cfg.gamma, cfg.T_grid[0], cal);
    const double pw = operator_norm_power(mdl, law);
    report("operator norm: Gram formula vs power iteration",
           std::abs(law.op_norm - pw) <= 1e-8 * std::max(law.op_norm, 1e-300));

    const json round = to_json(law, model_hash(cfg.model));
    const FeedbackLaw law2 = law_from_json(round, model_hash(cfg.model));
    report("law JSON round-trip preserves op_norm bit-exactly",
           law2.op_norm == law.op_norm);

    Rng rng(seed);
    const Trajectory traj = simulate(mdl, law, rng.unit_vector(mdl.n()), 5,
                                     law.params.T / 4.0);
    const DecayReport rep = verify_decay(mdl, traj, law, *cfg.gamma, cfg.T_grid[0]);
    report("closed-loop contraction and envelope", rep.pass);
  }

  write_manifest(cfg, "none");
  return all_ok ? 0 : 1;
}

}  // namespace heatsd

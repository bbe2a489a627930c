#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "heatsd/experiment.hpp"

namespace {

int dispatch(int argc, char** argv) {
  CLI::App app{"sampled-data output-feedback stabilization toolkit for 1-D heat models"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string output_dir_flag;
  std::uint64_t seed_flag = 0;
  app.add_option("--config", config_path, "experiment TOML file")->required();
  auto* out_opt = app.add_option("--output-dir", output_dir_flag, "override output directory");
  auto* seed_opt = app.add_option("--seed", seed_flag, "override the first configured seed");

  CLI::App* c_info = app.add_subcommand("model-info", "print and record spectral data");

  int m_max = 12;
  double safety = 0.0;
  CLI::App* c_cal = app.add_subcommand("calibrate", "fit the Gram coercivity constant");
  c_cal->add_option("--M-max", m_max, "largest sampled mode count")->check(CLI::PositiveNumber);
  auto* safety_opt = c_cal->add_option("--safety", safety, "override the safety factor");

  double gamma_val = 0.0, T_val = 0.0;
  std::string calibration_path;
  CLI::App* c_syn = app.add_subcommand("synthesize", "build a feedback law");
  auto* syn_gamma = c_syn->add_option("--gamma", gamma_val, "target decay rate");
  auto* syn_T = c_syn->add_option("--T", T_val, "half-period");
  auto* syn_cal = c_syn->add_option("--calibration", calibration_path, "calibration JSON");

  std::string law_path, y0_spec;
  int periods = 10;
  double output_dt = 0.0;
  CLI::App* c_sim = app.add_subcommand("simulate", "run the closed loop and verify decay");
  auto* sim_law = c_sim->add_option("--law", law_path, "law JSON (default <output_dir>/law.json)");
  c_sim->add_option("--y0", y0_spec, "initial state: mode:<j>, random:<seed>, or file:<path>");
  c_sim->add_option("--periods", periods, "number of 2T periods")->check(CLI::PositiveNumber);
  auto* sim_dt = c_sim->add_option("--output-dt", output_dt, "snapshot spacing (default T/4)");

  std::vector<double> grid_flag;
  double sweep_gamma = 0.0;
  std::string sweep_cal_path;
  CLI::App* c_sweep = app.add_subcommand("sweep-T", "synthesize across a T grid");
  auto* sweep_gamma_opt = c_sweep->add_option("--gamma", sweep_gamma, "target decay rate");
  c_sweep->add_option("--T-grid", grid_flag, "comma-separated T values")->delimiter(',');
  auto* sweep_cal = c_sweep->add_option("--calibration", sweep_cal_path, "calibration JSON");

  CLI::App* c_verify = app.add_subcommand("verify", "run the invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  heatsd::ExperimentConfig cfg = heatsd::load_experiment_config(config_path);
  if (*out_opt) cfg.output_dir = output_dir_flag;
  std::optional<std::uint64_t> seed;
  if (*seed_opt) seed = seed_flag;

  if (*c_info) return heatsd::cmd_model_info(cfg, std::cout);
  if (*c_cal)
    return heatsd::cmd_calibrate(cfg, std::cout, m_max,
                                 *safety_opt ? std::optional<double>(safety) : std::nullopt);
  if (*c_syn)
    return heatsd::cmd_synthesize(
        cfg, std::cout, *syn_gamma ? std::optional<double>(gamma_val) : std::nullopt,
        *syn_T ? std::optional<double>(T_val) : std::nullopt,
        *syn_cal ? std::optional<std::string>(calibration_path) : std::nullopt);
  if (*c_sim)
    return heatsd::cmd_simulate(
        cfg, std::cout,
        *sim_law ? std::optional<std::string>(law_path) : std::nullopt, y0_spec, periods,
        *sim_dt ? std::optional<double>(output_dt) : std::nullopt, seed);
  if (*c_sweep)
    return heatsd::cmd_sweep_T(
        cfg, std::cout,
        *sweep_gamma_opt ? std::optional<double>(sweep_gamma) : std::nullopt, grid_flag,
        *sweep_cal ? std::optional<std::string>(sweep_cal_path) : std::nullopt);
  if (*c_verify) return heatsd::cmd_verify(cfg, std::cout, seed);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const heatsd::Error& e) {
    std::cerr << e.what() << "\n";
    const bool usage = e.kind() == heatsd::ErrorKind::parse ||
                       e.kind() == heatsd::ErrorKind::config;
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

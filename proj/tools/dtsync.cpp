// Command-line front end: run, sweep, plotdata, validate.
//
// Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dtsync/experiment.hpp"

namespace fs = std::filesystem;
using namespace dtsync;

namespace {

constexpr int kConfigExit = 2;
constexpr int kSolverExit = 3;
constexpr int kIoExit = 4;

Vec parse_eta_list(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(detail::parse_number(detail::trim(item), "--fixed-eta", 0));
  if (v.empty()) throw ConfigError("--fixed-eta needs comma-separated values");
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct SolverFlags {
  std::string solver = "nash";
  std::string method = "collocation";
  double tol = 1e-8;
  int segments = 100;
  int mesh = 601;
  bool no_continuation = false;
  std::string fixed_eta;
  unsigned seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--solver", solver, "evo, nash, stackelberg or static")->capture_default_str();
    cmd->add_option("--method", method, "BVP method: collocation or shooting")->capture_default_str();
    cmd->add_option("--tol", tol, "BVP residual tolerance")->capture_default_str();
    cmd->add_option("--segments", segments, "shooting segments over the horizon")->capture_default_str();
    cmd->add_option("--mesh", mesh, "collocation nodes over the horizon")->capture_default_str();
    cmd->add_flag("--no-continuation", no_continuation, "solve the full horizon directly");
    cmd->add_option("--fixed-eta", fixed_eta, "constant controls for the evo solver, e.g. 1,1");
    cmd->add_option("--seed", seed, "seed for randomized probes")->capture_default_str();
  }

  RunSpec spec() const {
    RunSpec s;
    s.solver = parse_solver(solver);
    if (method == "collocation") s.options.method = BvpMethod::collocation;
    else if (method == "shooting") s.options.method = BvpMethod::shooting;
    else throw ConfigError("unknown method '" + method + "'");
    if (!(tol > 0.0)) throw ConfigError("--tol must be > 0");
    if (segments < 2 || mesh < 11) throw ConfigError("--segments must be >= 2 and --mesh >= 11");
    s.options.tol = tol;
    s.options.segments = segments;
    s.options.mesh_points = mesh;
    s.options.continuation = !no_continuation;
    if (!fixed_eta.empty()) s.fixed_eta = parse_eta_list(fixed_eta);
    s.seed = seed;
    return s;
  }
};

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoExit;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolverExit;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolverExit;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical digital-twin synchronization games"};
  app.require_subcommand(1);

  SolverFlags run_flags;
  std::string run_scenario, run_out = "out";
  bool full = false;
  int deviations = 0;
  auto* run = app.add_subcommand("run", "solve one scenario and write trajectory.csv, payoffs.csv, summary.txt");
  run->add_option("scenario", run_scenario, "scenario file")->required();
  run->add_option("--out", run_out, "output directory")->capture_default_str();
  run->add_flag("--full", full, "include costate columns");
  run->add_option("--deviations", deviations, "random unilateral deviations per provider for a no-regret report");
  run_flags.attach(run);

  SolverFlags sweep_flags;
  std::string sweep_scenario, sweep_out = "sweep", param, range;
  auto* sweep = app.add_subcommand("sweep", "solve over a parameter grid and write sweep.csv");
  sweep->add_option("scenario", sweep_scenario, "scenario file")->required();
  sweep->add_option("--param", param, "parameter path, e.g. rho, population.n, vsp1.theta")->required();
  sweep->add_option("--range", range, "start:stop:count")->required();
  sweep->add_option("--out", sweep_out, "output directory")->capture_default_str();
  sweep_flags.attach(sweep);

  std::vector<std::string> plot_runs;
  std::string kind, plot_out;
  int resolution = 20;
  auto* plot = app.add_subcommand("plotdata", "turn run artifacts into plot-ready columns");
  plot->add_option("runs", plot_runs, "run directories (several for payoff_bars)")->required();
  plot->add_option("--kind", kind, "states, controls, twin_values, direction_field or payoff_bars")->required();
  plot->add_option("--out", plot_out, "output file (default: standard output)");
  plot->add_option("--resolution", resolution, "direction-field grid resolution")->capture_default_str();

  std::string validate_scenario;
  auto* validate = app.add_subcommand("validate", "check a scenario file and print it normalized");
  validate->add_option("scenario", validate_scenario, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  if (*run) {
    return guarded([&] {
      RunSpec spec = run_flags.spec();
      spec.full = full;
      spec.deviations = deviations;
      const Scenario sc = load_scenario(run_scenario);
      const RunOutput out = solve_scenario(sc, spec);
      write_run(run_out, out, full);
      std::cout << summary_text(out);
      return 0;
    });
  }
  if (*sweep) {
    return guarded([&] {
      const RunSpec spec = sweep_flags.spec();
      const SweepRange r = parse_range(param, range);
      const Scenario sc = load_scenario(sweep_scenario);
      const auto rows = run_sweep(sc, spec, r);
      std::error_code ec;
      fs::create_directories(sweep_out, ec);
      if (ec) throw IoError("cannot create " + sweep_out + ": " + ec.message());
      const std::string text = csv_text(sweep_table(rows, param, sc.size()));
      write_text(fs::path(sweep_out) / "sweep.csv", text);
      std::cout << text;
      int failed = 0;
      for (const auto& row : rows) failed += !row.ok();
      if (failed) std::cerr << failed << " of " << rows.size() << " points failed\n";
      return 0;
    });
  }
  if (*plot) {
    return guarded([&] {
      std::vector<fs::path> dirs(plot_runs.begin(), plot_runs.end());
      const std::string text = plot_data(parse_plot_kind(kind), dirs, resolution);
      if (plot_out.empty()) std::cout << text;
      else write_text(plot_out, text);
      return 0;
    });
  }
  return guarded([&] {
    const Scenario sc = load_scenario(validate_scenario);
    std::cout << scenario_text(sc);
    return 0;
  });
}

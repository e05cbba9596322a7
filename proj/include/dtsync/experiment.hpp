#pragma once

// Solver dispatch, run artifacts, parameter sweeps and plot-ready data.

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtsync/baseline.hpp"
#include "dtsync/evo.hpp"
#include "dtsync/io.hpp"
#include "dtsync/nash.hpp"
#include "dtsync/parallel.hpp"
#include "dtsync/stackelberg.hpp"

namespace dtsync {

enum class SolverKind { evo, nash, stackelberg, static_game };

inline std::string to_string(SolverKind s) {
  switch (s) {
    case SolverKind::evo:
      return "evo";
    case SolverKind::nash:
      return "nash";
    case SolverKind::stackelberg:
      return "stackelberg";
    default:
      return "static";
  }
}

inline SolverKind parse_solver(const std::string& s) {
  if (s == "evo") return SolverKind::evo;
  if (s == "nash") return SolverKind::nash;
  if (s == "stackelberg") return SolverKind::stackelberg;
  if (s == "static") return SolverKind::static_game;
  throw ConfigError("unknown solver '" + s + "' (evo, nash, stackelberg, static)");
}

struct RunSpec {
  SolverKind solver = SolverKind::nash;
  GameSolverOptions options;
  std::optional<Vec> fixed_eta;  // required by the evo solver
  bool full = false;             // add costate columns to trajectory.csv
  int deviations = 0;            // random unilateral deviations per provider in the summary
  unsigned seed = 0;
};

/// Solver-independent view of one solved scenario.
struct RunOutput {
  SolverKind solver = SolverKind::nash;
  Scenario scenario;
  std::vector<double> t;
  std::vector<Vec> y;    // (x, z)
  std::vector<Vec> eta;
  std::vector<std::string> costate_names;
  std::vector<Vec> costates;
  Vec payoffs;
  ControlPath controls;  // continuous control path, for probes
  std::vector<std::pair<std::string, std::string>> summary;

  Vec x_final() const { return y.back().head(scenario.size()); }
  Vec eta_at(double time) const { return controls(time); }
};

namespace detail {

inline std::string join(const Vec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_cell(v[i]);
  return s;
}

inline void fill_from_stacked(RunOutput& out, const Trajectory& stacked, const Trajectory& controls,
                              const std::vector<std::string>& names) {
  const int M = out.scenario.size();
  for (size_t k = 0; k < stacked.size(); ++k) {
    out.t.push_back(stacked.times()[k]);
    out.y.push_back(stacked.value(k).head(2 * M));
    out.eta.push_back(controls.value(k));
    out.costates.push_back(stacked.value(k).tail(stacked.dim() - 2 * M));
  }
  out.costate_names = names;
}

inline std::vector<std::string> block_names(const std::string& prefix, int M) {
  std::vector<std::string> n;
  for (int j = 0; j < M; ++j) n.push_back(prefix + "_x" + std::to_string(j + 1));
  for (int j = 0; j < M; ++j) n.push_back(prefix + "_z" + std::to_string(j + 1));
  return n;
}

inline void fill_from_simulation(RunOutput& out, const Trajectory& states, const Vec& constants) {
  for (size_t k = 0; k < states.size(); ++k) {
    out.t.push_back(states.times()[k]);
    out.y.push_back(states.value(k));
    out.eta.push_back(constants);
  }
}

inline void add_deviation_summary(RunOutput& out, const RunSpec& spec, const std::vector<int>& players) {
  if (spec.deviations <= 0) return;
  for (const int m : players) {
    const auto devs = random_deviations(out.controls, m, out.scenario.horizon, spec.deviations, spec.seed + static_cast<unsigned>(m));
    const auto rep = deviation_check(out.scenario, out.controls, m, devs);
    out.summary.emplace_back("max_deviation_gain_" + std::to_string(m + 1), format_cell(rep.max_improvement()));
  }
}

}  // namespace detail

/// Solves one scenario with the chosen solver; no files are touched.
inline RunOutput solve_scenario(const Scenario& scenario, const RunSpec& spec) {
  RunOutput out;
  out.solver = spec.solver;
  out.scenario = scenario;
  out.scenario.validate();
  const Scenario& sc = out.scenario;
  const int M = sc.size();
  out.summary.emplace_back("solver", to_string(spec.solver));
  out.summary.emplace_back("providers", std::to_string(M));
  out.summary.emplace_back("horizon", format_cell(sc.horizon));

  switch (spec.solver) {
    case SolverKind::evo: {
      if (!spec.fixed_eta) throw ConfigError("the evo solver needs --fixed-eta");
      if (spec.fixed_eta->size() != M) throw ConfigError("--fixed-eta needs one value per provider");
      const Vec eta = *spec.fixed_eta;
      out.controls = constant_control(eta);
      const auto sim = simulate_payoffs(sc, out.controls, sc.horizon);
      detail::fill_from_simulation(out, sim.states, eta);
      out.payoffs = sim.payoffs;
      const auto ess = find_ess(sc, out.controls);
      out.summary.emplace_back("ess", detail::join(ess.x_star));
      out.summary.emplace_back("ess_class", std::string(to_string(ess.classification)));
      out.summary.emplace_back("ess_converged", ess.converged ? "yes" : "no");
      out.summary.emplace_back("settle_time", format_cell(ess.settle_time));
      break;
    }
    case SolverKind::nash: {
      Scenario plain = sc;
      for (auto& p : plain.vsps) p.role = Role::simultaneous;
      const auto sol = solve_open_loop_nash(plain, spec.options);
      std::vector<std::string> names;
      for (int m = 0; m < M; ++m) {
        const auto b = detail::block_names("lambda" + std::to_string(m + 1), M);
        names.insert(names.end(), b.begin(), b.end());
      }
      detail::fill_from_stacked(out, sol.trajectory, sol.controls, names);
      out.payoffs = sol.payoffs;
      out.controls = sol.control_path();
      out.summary.emplace_back("newton_iterations", std::to_string(sol.diagnostics.iterations));
      out.summary.emplace_back("transversality_residual", format_cell(sol.transversality_residual()));
      out.summary.emplace_back("foc_residual", format_cell(foc_residual(sol)));
      std::vector<int> all(static_cast<size_t>(M));
      for (int m = 0; m < M; ++m) all[static_cast<size_t>(m)] = m;
      detail::add_deviation_summary(out, spec, all);
      break;
    }
    case SolverKind::stackelberg: {
      StackelbergOptions opt;
      opt.solver = spec.options;
      const auto sol = solve_stackelberg(sc, opt);
      const auto& h = sol.hierarchy;
      std::vector<std::string> names;
      for (const int f : h.followers) {
        const auto b = detail::block_names("lambda" + std::to_string(f + 1), M);
        names.insert(names.end(), b.begin(), b.end());
      }
      for (const int l : h.leaders) {
        const auto b = detail::block_names("psi" + std::to_string(l + 1), M);
        names.insert(names.end(), b.begin(), b.end());
      }
      for (const int l : h.leaders)
        for (const int f : h.followers) {
          const auto b = detail::block_names("phi" + std::to_string(l + 1) + "_" + std::to_string(f + 1), M);
          names.insert(names.end(), b.begin(), b.end());
        }
      detail::fill_from_stacked(out, sol.trajectory, sol.controls, names);
      out.payoffs = sol.payoffs;
      out.controls = sol.control_path();
      out.summary.emplace_back("newton_iterations", std::to_string(sol.diagnostics.iterations));
      out.summary.emplace_back("boundary_residual", format_cell(sol.boundary_residual()));
      detail::add_deviation_summary(out, spec, h.followers);
      break;
    }
    case SolverKind::static_game: {
      const auto sol = solve_static_stackelberg(sc);
      out.controls = constant_control(sol.constants);
      detail::fill_from_simulation(out, sol.trajectory, sol.constants);
      out.payoffs = sol.payoffs;
      out.summary.emplace_back("constants", detail::join(sol.constants));
      out.summary.emplace_back("follower_rounds", std::to_string(sol.follower_rounds));
      break;
    }
  }
  out.summary.emplace_back("x_final", detail::join(out.x_final()));
  out.summary.emplace_back("eta_final", detail::join(out.eta_at(sc.horizon)));
  out.summary.emplace_back("eta_mid", detail::join(out.eta_at(0.5 * sc.horizon)));
  out.summary.emplace_back("payoffs", detail::join(out.payoffs));
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

inline Table trajectory_table(const RunOutput& r, bool full) {
  const Scenario& sc = r.scenario;
  const int M = sc.size();
  Table t;
  t.header.push_back("t");
  for (const char* p : {"x_", "z_", "eta_", "J_"})
    for (int m = 0; m < M; ++m) t.header.push_back(p + std::to_string(m + 1));
  if (full) t.header.insert(t.header.end(), r.costate_names.begin(), r.costate_names.end());
  for (size_t k = 0; k < r.t.size(); ++k) {
    std::vector<std::string> row{format_cell(r.t[k])};
    for (Eigen::Index j = 0; j < 2 * M; ++j) row.push_back(format_cell(r.y[k][j]));
    for (int m = 0; m < M; ++m) row.push_back(format_cell(r.eta[k][m]));
    for (int m = 0; m < M; ++m) row.push_back(format_cell(instantaneous_payoff(m, r.y[k], r.eta[k], sc)));
    if (full && k < r.costates.size())
      for (Eigen::Index j = 0; j < r.costates[k].size(); ++j) row.push_back(format_cell(r.costates[k][j]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table payoff_table(const RunOutput& r) {
  Table t;
  t.header = {"vsp", "role", "solver", "payoff"};
  for (int m = 0; m < r.scenario.size(); ++m) {
    std::string role(to_string(r.scenario.vsps[static_cast<size_t>(m)].role));
    if (r.solver == SolverKind::nash || r.solver == SolverKind::evo) role = "simultaneous";
    else if (role == "simultaneous") role = "follower";
    t.rows.push_back({std::to_string(m + 1), role, to_string(r.solver), format_cell(r.payoffs[m])});
  }
  return t;
}

inline std::string summary_text(const RunOutput& r) {
  std::string s;
  for (const auto& [k, v] : r.summary) s += k + ": " + v + "\n";
  return s;
}

/// trajectory.csv, payoffs.csv, summary.txt and a copy of the scenario.
inline void write_run(const std::filesystem::path& dir, const RunOutput& r, bool full) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "trajectory.csv", csv_text(trajectory_table(r, full)));
  write_text(dir / "payoffs.csv", csv_text(payoff_table(r)));
  write_text(dir / "summary.txt", summary_text(r));
  write_scenario(dir / "scenario.scenario", r.scenario);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRange {
  std::string param;
  double from = 0.0;
  double to = 0.0;
  int count = 2;

  std::vector<double> values() const {
    std::vector<double> v;
    for (int i = 0; i < count; ++i) v.push_back(count == 1 ? from : from + (to - from) * i / (count - 1));
    return v;
  }
};

/// "a:b:n"
inline SweepRange parse_range(const std::string& param, const std::string& text) {
  SweepRange r;
  r.param = param;
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos : text.find(':', c1 + 1);
  if (c2 == std::string::npos) throw ConfigError("range must look like start:stop:count, got '" + text + "'");
  r.from = detail::parse_number(text.substr(0, c1), "range start", 0);
  r.to = detail::parse_number(text.substr(c1 + 1, c2 - c1 - 1), "range stop", 0);
  const double n = detail::parse_number(text.substr(c2 + 1), "range count", 0);
  if (n != std::floor(n) || n < 2) throw ConfigError("range count must be an integer >= 2");
  r.count = static_cast<int>(n);
  return r;
}

struct SweepRow {
  double value = 0.0;
  std::string error;  // empty on success
  Vec x_final, eta_final, eta_mid, payoffs;
  bool ok() const { return error.empty(); }
};

/// One solve per grid point on the worker pool; rows come back in grid
/// order. Differential-game solves are warm-started from the unmodified
/// scenario's solution when that solve succeeds.
inline std::vector<SweepRow> run_sweep(const Scenario& base, const RunSpec& spec, const SweepRange& range) {
  {
    Scenario probe = base;
    set_parameter(probe, range.param, range.values().front());  // rejects bad paths up front
  }
  RunSpec point = spec;
  point.deviations = 0;
  if (spec.solver == SolverKind::nash || spec.solver == SolverKind::stackelberg) {
    try {
      const RunOutput ref = solve_scenario(base, point);
      Trajectory warm;
      for (size_t k = 0; k < ref.t.size(); ++k) {
        Vec w(ref.y[k].size() + ref.costates[k].size());
        w << ref.y[k], ref.costates[k];
        warm.push_back(ref.t[k], w);
      }
      point.options.warm_start = std::move(warm);
    } catch (const Error&) {
      // cold starts only
    }
  }
  const auto values = range.values();
  return parallel_map<SweepRow>(values.size(), [&](size_t i) {
    SweepRow row;
    row.value = values[i];
    try {
      Scenario sc = base;
      set_parameter(sc, range.param, values[i]);
      const RunOutput r = solve_scenario(sc, point);
      row.x_final = r.x_final();
      row.eta_final = r.eta_at(sc.horizon);
      row.eta_mid = r.eta_at(0.5 * sc.horizon);
      row.payoffs = r.payoffs;
    } catch (const std::exception& e) {
      row.error = e.what();
      for (char& c : row.error)
        if (c == ',' || c == '\n') c = ';';
    }
    return row;
  });
}

inline Table sweep_table(const std::vector<SweepRow>& rows, const std::string& param, int M) {
  Table t;
  t.header = {param, "status"};
  for (const char* p : {"x_", "eta_T_", "eta_mid_", "payoff_"})
    for (int m = 0; m < M; ++m) t.header.push_back(p + std::to_string(m + 1));
  for (const auto& r : rows) {
    std::vector<std::string> cells{format_cell(r.value), r.ok() ? "ok" : "error: " + r.error};
    for (const Vec* v : {&r.x_final, &r.eta_final, &r.eta_mid, &r.payoffs})
      for (int m = 0; m < M; ++m) cells.push_back(r.ok() ? format_cell((*v)[m]) : "nan");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Largest violation of monotone order along a column: for nondecreasing,
/// max over adjacent points of (previous - next), clipped at 0.
inline double monotonicity_violation(const std::vector<double>& v, bool nondecreasing) {
  double worst = 0.0;
  for (size_t i = 1; i < v.size(); ++i) worst = std::max(worst, nondecreasing ? v[i - 1] - v[i] : v[i] - v[i - 1]);
  return worst;
}

// ---------------------------------------------------------------------------
// Plot data: whitespace-separated columns with '#' header lines.

enum class PlotKind { states, controls, twin_values, direction_field, payoff_bars };

inline PlotKind parse_plot_kind(const std::string& s) {
  if (s == "states") return PlotKind::states;
  if (s == "controls") return PlotKind::controls;
  if (s == "twin_values") return PlotKind::twin_values;
  if (s == "direction_field") return PlotKind::direction_field;
  if (s == "payoff_bars") return PlotKind::payoff_bars;
  throw ConfigError("unknown plot kind '" + s + "'");
}

namespace detail {

inline std::string plot_columns(const Table& t, const std::string& title, const std::vector<std::string>& cols,
                                const std::vector<std::string>& units) {
  std::vector<int> idx;
  for (const auto& c : cols) {
    const int i = column_index(t, c);
    if (i < 0) throw IoError("run artifacts have no column " + c);
    idx.push_back(i);
  }
  std::string s = "# " + title + "\n#";
  for (size_t i = 0; i < cols.size(); ++i) s += " " + cols[i] + " [" + units[i] + "]";
  s += "\n";
  for (const auto& row : t.rows) {
    for (size_t i = 0; i < idx.size(); ++i) s += (i ? " " : "") + row[static_cast<size_t>(idx[i])];
    s += "\n";
  }
  return s;
}

inline int providers_in(const Table& t) {
  int M = 0;
  while (column_index(t, "x_" + std::to_string(M + 1)) >= 0) ++M;
  if (M == 0) throw IoError("trajectory.csv has no share columns");
  return M;
}

}  // namespace detail

/// Builds plot text from one or more run directories.
inline std::string plot_data(PlotKind kind, const std::vector<std::filesystem::path>& runs, int resolution = 20) {
  if (runs.empty()) throw ConfigError("plotdata needs at least one run directory");
  if (kind == PlotKind::payoff_bars) {
    std::string s = "# discounted payoff per provider and solver\n# vsp solver payoff [currency]\n";
    for (const auto& dir : runs) {
      const Table t = read_csv(dir / "payoffs.csv");
      const int v = column_index(t, "vsp"), sv = column_index(t, "solver"), p = column_index(t, "payoff");
      if (v < 0 || sv < 0 || p < 0) throw IoError((dir / "payoffs.csv").string() + " has an unexpected header");
      for (const auto& row : t.rows)
        s += row[static_cast<size_t>(v)] + " " + row[static_cast<size_t>(sv)] + " " + row[static_cast<size_t>(p)] + "\n";
    }
    return s;
  }
  const Table t = read_csv(runs.front() / "trajectory.csv");
  const int M = detail::providers_in(t);
  auto cols = [&](const std::string& prefix, const std::string& unit) {
    std::vector<std::string> c{"t"}, u{"time"};
    for (int m = 1; m <= M; ++m) c.push_back(prefix + std::to_string(m)), u.push_back(unit);
    return std::pair{c, u};
  };
  switch (kind) {
    case PlotKind::states: {
      const auto [c, u] = cols("x_", "share");
      return detail::plot_columns(t, "population shares", c, u);
    }
    case PlotKind::controls: {
      const auto [c, u] = cols("eta_", "intensity");
      return detail::plot_columns(t, "synchronization intensities", c, u);
    }
    case PlotKind::twin_values: {
      const auto [c, u] = cols("z_", "value");
      return detail::plot_columns(t, "twin values", c, u);
    }
    default:
      break;
  }
  // direction field at the run's final controls
  const Scenario sc = load_scenario(runs.front() / "scenario.scenario");
  Vec eta(M);
  for (int m = 0; m < M; ++m)
    eta[m] = detail::parse_number(t.rows.back()[static_cast<size_t>(column_index(t, "eta_" + std::to_string(m + 1)))], "eta", 0);
  const auto f = direction_field(sc, eta, resolution);
  std::string s = "# replicator direction field at eta = " + detail::join(eta) + "\n#";
  for (int m = 1; m < M; ++m) s += " x" + std::to_string(m) + " [share]";
  for (int m = 1; m < M; ++m) s += " dx" + std::to_string(m) + "/dt [share/time]";
  s += "\n";
  for (size_t k = 0; k < f.x.size(); ++k) {
    for (int m = 0; m < M - 1; ++m) s += (m ? " " : "") + format_cell(f.x[k][m]);
    for (int m = 0; m < M - 1; ++m) s += " " + format_cell(f.xdot[k][m]);
    s += "\n";
  }
  return s;
}

}  // namespace dtsync

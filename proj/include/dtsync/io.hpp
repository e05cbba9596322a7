#pragma once

// Scenario files and tabular output.
//
// Scenario schema: '#' starts a comment, blank lines are ignored, every other
// line is `key = value` or a `[vsp]` section header. Keys before the first
// section describe the game:
//
//   rho, horizon, g0, g1, population.n, population.delta, population.b
//
// Each `[vsp]` section adds one provider, in order:
//
//   d, theta, alpha, beta (optional), k, v, c, w1, w2, w3, w4,
//   role (simultaneous | leader | follower), x0 (optional), z0
//
// x0 may be omitted for every provider (uniform shares) but not for some.

#include <Eigen/Core>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtsync/error.hpp"
#include "dtsync/model.hpp"

namespace dtsync {

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Fixed-precision form for tables, so reruns are byte-identical.
inline std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& text, const std::string& key, int line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'", line);
  return v;
}

inline Role parse_role(const std::string& text, int line) {
  if (text == "simultaneous") return Role::simultaneous;
  if (text == "leader") return Role::leader;
  if (text == "follower") return Role::follower;
  throw ConfigError("role must be simultaneous, leader or follower, got '" + text + "'", line);
}

}  // namespace detail

/// Parses and validates scenario text. `origin` names the source in errors.
inline Scenario parse_scenario(std::istream& in, const std::string& origin = "scenario") {
  Scenario sc;
  std::vector<std::optional<double>> x0, z0;
  std::map<std::string, int> seen;  // key -> line, per section
  int section_line = 0;
  std::string raw;
  int line = 0;
  auto finish_vsp = [&]() {
    if (sc.vsps.empty()) return;
    if (!z0.back()) throw ConfigError("provider " + std::to_string(sc.size()) + " has no z0", section_line);
  };
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text != "[vsp]") throw ConfigError("unknown section " + text, line);
      finish_vsp();
      sc.vsps.emplace_back();
      x0.emplace_back();
      z0.emplace_back();
      seen.clear();
      section_line = line;
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (!seen.emplace(key, line).second) throw ConfigError("duplicate key '" + key + "'", line);
    auto num = [&] { return detail::parse_number(value, key, line); };

    if (sc.vsps.empty()) {
      if (key == "rho") sc.rho = num();
      else if (key == "horizon") sc.horizon = num();
      else if (key == "g0") sc.g0 = num();
      else if (key == "g1") sc.g1 = num();
      else if (key == "population.n") sc.pop.n = num();
      else if (key == "population.delta") sc.pop.delta = num();
      else if (key == "population.b") sc.pop.b = num();
      else throw ConfigError("unknown game key '" + key + "'", line);
      continue;
    }
    auto& p = sc.vsps.back();
    if (key == "d") p.d = num();
    else if (key == "theta") p.theta = num();
    else if (key == "alpha") p.alpha = num();
    else if (key == "beta") p.beta = num();
    else if (key == "k") p.k = num();
    else if (key == "v") p.v = num();
    else if (key == "c") p.c = num();
    else if (key.size() == 2 && key[0] == 'w' && key[1] >= '1' && key[1] <= '4') p.w[static_cast<size_t>(key[1] - '1')] = num();
    else if (key == "role") p.role = detail::parse_role(value, line);
    else if (key == "x0") x0.back() = num();
    else if (key == "z0") z0.back() = num();
    else throw ConfigError("unknown provider key '" + key + "'", line);
  }
  finish_vsp();
  if (sc.vsps.empty()) throw ConfigError(origin + ": no [vsp] sections");

  const int M = sc.size();
  int with_x0 = 0;
  for (const auto& v : x0) with_x0 += v.has_value();
  if (with_x0 != 0 && with_x0 != M) throw ConfigError(origin + ": x0 must be given for every provider or none");
  if (with_x0 == M) {
    sc.x0.resize(M);
    for (int m = 0; m < M; ++m) sc.x0[m] = *x0[static_cast<size_t>(m)];
  }
  sc.z0.resize(M);
  for (int m = 0; m < M; ++m) sc.z0[m] = *z0[static_cast<size_t>(m)];
  try {
    sc.validate();
  } catch (const ModelError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  try {
    return parse_scenario(in, path.string());
  } catch (const ConfigError& e) {
    if (e.line() > 0) throw ConfigError(path.string() + ": " + e.what());
    throw;
  }
}

inline std::string scenario_text(const Scenario& sc) {
  std::ostringstream o;
  o << "rho = " << format_double(sc.rho) << "\n"
    << "horizon = " << format_double(sc.horizon) << "\n"
    << "g0 = " << format_double(sc.g0) << "\n"
    << "g1 = " << format_double(sc.g1) << "\n"
    << "population.n = " << format_double(sc.pop.n) << "\n"
    << "population.delta = " << format_double(sc.pop.delta) << "\n"
    << "population.b = " << format_double(sc.pop.b) << "\n";
  for (int m = 0; m < sc.size(); ++m) {
    const auto& p = sc.vsps[static_cast<size_t>(m)];
    o << "\n[vsp]\n"
      << "d = " << format_double(p.d) << "\n"
      << "theta = " << format_double(p.theta) << "\n"
      << "alpha = " << format_double(p.alpha) << "\n";
    if (p.beta) o << "beta = " << format_double(*p.beta) << "\n";
    o << "k = " << format_double(p.k) << "\n"
      << "v = " << format_double(p.v) << "\n"
      << "c = " << format_double(p.c) << "\n";
    for (size_t i = 0; i < 4; ++i) o << "w" << i + 1 << " = " << format_double(p.w[i]) << "\n";
    o << "role = " << to_string(p.role) << "\n";
    if (sc.x0.size() == sc.size()) o << "x0 = " << format_double(sc.x0[m]) << "\n";
    o << "z0 = " << format_double(sc.z0[m]) << "\n";
  }
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_scenario(const std::filesystem::path& path, const Scenario& sc) { write_text(path, scenario_text(sc)); }

// ---------------------------------------------------------------------------
// Scalar parameter paths used by sweeps: rho, horizon, g0, g1,
// population.{n,delta,b} and vsp<i>.<key> with 1-based i and the provider
// keys above (x0 rescales the other shares to keep the simplex).

inline void set_parameter(Scenario& sc, const std::string& path, double value) {
  if (path == "rho") sc.rho = value;
  else if (path == "horizon") sc.horizon = value;
  else if (path == "g0") sc.g0 = value;
  else if (path == "g1") sc.g1 = value;
  else if (path == "population.n") sc.pop.n = value;
  else if (path == "population.delta") sc.pop.delta = value;
  else if (path == "population.b") sc.pop.b = value;
  else if (path.rfind("vsp", 0) == 0) {
    const auto dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("parameter path '" + path + "' needs vsp<i>.<key>");
    const std::string idx = path.substr(3, dot - 3), key = path.substr(dot + 1);
    char* end = nullptr;
    const long i = std::strtol(idx.c_str(), &end, 10);
    if (idx.empty() || *end != '\0' || i < 1 || i > sc.size())
      throw ConfigError("parameter path '" + path + "' names no provider");
    const int m = static_cast<int>(i - 1);
    auto& p = sc.vsps[static_cast<size_t>(m)];
    if (key == "d") p.d = value;
    else if (key == "theta") p.theta = value;
    else if (key == "alpha") p.alpha = value;
    else if (key == "beta") p.beta = value;
    else if (key == "k") p.k = value;
    else if (key == "v") p.v = value;
    else if (key == "c") p.c = value;
    else if (key.size() == 2 && key[0] == 'w' && key[1] >= '1' && key[1] <= '4') p.w[static_cast<size_t>(key[1] - '1')] = value;
    else if (key == "z0") sc.z0[m] = value;
    else if (key == "x0") {
      if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("x0 must lie in [0, 1]");
      const int M = sc.size();
      if (sc.x0.size() != M) sc.x0 = Vec::Constant(M, 1.0 / M);
      const double rest = 1.0 - sc.x0[m];
      for (int j = 0; j < M; ++j)
        if (j != m) sc.x0[j] = (rest > 0.0 ? sc.x0[j] / rest : 1.0 / (M - 1)) * (1.0 - value);
      sc.x0[m] = value;
      sc.x0 /= sc.x0.sum();
    } else {
      throw ConfigError("parameter path '" + path + "' names no scalar field");
    }
  } else {
    throw ConfigError("parameter path '" + path + "' names no scalar field");
  }
}

// ---------------------------------------------------------------------------
// CSV

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string csv_text(const Table& t) {
  std::ostringstream o;
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) o << (i ? "," : "") << cells[i];
    o << "\n";
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return o.str();
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Table t;
  std::string raw;
  bool first = true;
  while (std::getline(in, raw)) {
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(raw);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) t.header = std::move(cells), first = false;
    else t.rows.push_back(std::move(cells));
  }
  if (first) throw IoError(path.string() + " is empty");
  return t;
}

inline int column_index(const Table& t, const std::string& name) {
  for (size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  return -1;
}

}  // namespace dtsync

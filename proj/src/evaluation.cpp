#include "povar/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace povar {

namespace {

/// Relative tolerance for "all traces share f0".
constexpr double kInitialCostTolerance = 1e-12;

void check_field(const std::string& field) {
  if (field.find_first_of(",\n\r") != std::string::npos) {
    throw std::invalid_argument("CSV field contains a separator: '" + field + "'");
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, int line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw std::runtime_error(fmt::format("CSV line {}: not a number: '{}'", line, s));
  }
  return v;
}

int parse_int(const std::string& s, int line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw std::runtime_error(fmt::format("CSV line {}: not an integer: '{}'", line, s));
  }
  return static_cast<int>(v);
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

void ConvergenceTrace::validate() const {
  if (records.empty()) throw std::invalid_argument("trace has no records");
  if (records.front().cost != initial_cost) {
    throw std::invalid_argument("first trace record is not the initial cost");
  }
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (!(records[k].cost >= 0.0)) {
      throw std::invalid_argument("trace cost is negative or NaN");
    }
    if (k > 0 && records[k].elapsed_seconds < records[k - 1].elapsed_seconds) {
      throw std::invalid_argument("trace elapsed time decreases");
    }
  }
}

double ConvergenceTrace::min_cost() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : records) m = std::min(m, r.cost);
  return m;
}

double cost_threshold(std::span<const ConvergenceTrace> traces, double tau) {
  if (traces.empty()) throw std::invalid_argument("cost_threshold: no traces");
  const double f0 = traces.front().initial_cost;
  double f_star = std::numeric_limits<double>::infinity();
  for (const auto& t : traces) {
    t.validate();
    if (std::abs(t.initial_cost - f0) > kInitialCostTolerance * std::abs(f0)) {
      throw std::invalid_argument(fmt::format(
          "problem '{}': solver '{}' starts from f0 = {:.17g}, expected {:.17g}",
          t.problem_id, t.solver_id, t.initial_cost, f0));
    }
    f_star = std::min(f_star, t.min_cost());
  }
  return f_star + tau * (f0 - f_star);
}

std::optional<double> time_to_threshold(const ConvergenceTrace& trace, double threshold) {
  for (const auto& r : trace.records) {
    if (r.cost <= threshold) return r.elapsed_seconds;
  }
  return std::nullopt;
}

double ProfileResult::at(double alpha) const {
  double value = 0.0;
  for (const auto& p : curve) {
    if (p.alpha <= alpha) value = p.percentage;
    else break;
  }
  return value;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(std::exp2(k / 4.0));
  return grid;
}

std::vector<ProfileResult> profile_from_times(
    const std::vector<std::string>& solvers,
    const std::vector<std::vector<std::optional<double>>>& times, double tau) {
  if (solvers.empty() || times.empty()) {
    throw std::invalid_argument("performance profile needs at least one solver and problem");
  }
  const std::size_t np = times.size();
  const std::size_t ns = solvers.size();
  // ratio[p][s]: T / min T, nullopt when unreached or when min T = 0 < T.
  std::vector<std::vector<std::optional<double>>> ratio(np,
                                                        std::vector<std::optional<double>>(ns));
  std::set<double> alphas;
  for (double a : default_alpha_grid()) alphas.insert(a);
  for (std::size_t p = 0; p < np; ++p) {
    if (times[p].size() != ns) throw std::invalid_argument("runtime matrix is ragged");
    std::optional<double> best;
    for (const auto& t : times[p]) {
      if (t && (*t < 0.0 || !std::isfinite(*t))) {
        throw std::invalid_argument("runtime must be finite and non-negative");
      }
      if (t && (!best || *t < *best)) best = t;
    }
    if (!best) continue;
    for (std::size_t s = 0; s < ns; ++s) {
      if (!times[p][s]) continue;
      if (*best == 0.0) {
        if (*times[p][s] == 0.0) ratio[p][s] = 1.0;
      } else {
        ratio[p][s] = *times[p][s] / *best;
      }
      if (ratio[p][s]) alphas.insert(*ratio[p][s]);
    }
  }

  std::vector<ProfileResult> out(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    out[s].solver_id = solvers[s];
    out[s].tau = tau;
    for (double a : alphas) {
      std::size_t count = 0;
      for (std::size_t p = 0; p < np; ++p) {
        if (ratio[p][s] && *ratio[p][s] <= a) ++count;
      }
      out[s].curve.push_back({a, 100.0 * static_cast<double>(count) / static_cast<double>(np)});
    }
  }
  return out;
}

std::vector<ProfileResult> performance_profile(std::span<const ConvergenceTrace> traces,
                                               double tau) {
  if (traces.empty()) throw std::invalid_argument("performance_profile: no traces");
  std::map<std::string, std::vector<ConvergenceTrace>> by_problem;
  std::set<std::string> solver_set;
  for (const auto& t : traces) {
    by_problem[t.problem_id].push_back(t);
    solver_set.insert(t.solver_id);
  }
  const std::vector<std::string> solvers(solver_set.begin(), solver_set.end());
  std::vector<std::vector<std::optional<double>>> times;
  for (const auto& [problem, group] : by_problem) {
    const double threshold = cost_threshold(group, tau);
    std::vector<std::optional<double>> row(solvers.size());
    std::vector<char> seen(solvers.size(), 0);
    for (const auto& t : group) {
      const auto s = static_cast<std::size_t>(
          std::lower_bound(solvers.begin(), solvers.end(), t.solver_id) - solvers.begin());
      if (seen[s]) {
        throw std::invalid_argument(fmt::format(
            "problem '{}' has more than one trace for solver '{}'", problem, t.solver_id));
      }
      seen[s] = 1;
      row[s] = time_to_threshold(t, threshold);
    }
    times.push_back(std::move(row));
  }
  return profile_from_times(solvers, times, tau);
}

void write_traces_csv(std::ostream& out, std::span<const ConvergenceTrace> traces) {
  out << "problem,solver,stage,iteration,cost,elapsed_seconds\n";
  for (const auto& t : traces) {
    check_field(t.problem_id);
    check_field(t.solver_id);
    check_field(t.stage);
    for (const auto& r : t.records) {
      out << fmt::format("{},{},{},{},{:.17g},{:.17g}\n", t.problem_id, t.solver_id, t.stage,
                         r.iteration, r.cost, r.elapsed_seconds);
    }
  }
}

std::vector<ConvergenceTrace> read_traces_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      strip_cr(line) != "problem,solver,stage,iteration,cost,elapsed_seconds") {
    throw std::runtime_error("trace CSV: missing or unexpected header");
  }
  std::vector<ConvergenceTrace> traces;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 6) {
      throw std::runtime_error(fmt::format("trace CSV line {}: expected 6 columns", line_no));
    }
    const TraceRecord rec{parse_int(cells[3], line_no), parse_double(cells[4], line_no),
                          parse_double(cells[5], line_no)};
    if (traces.empty() || traces.back().problem_id != cells[0] ||
        traces.back().solver_id != cells[1] || traces.back().stage != cells[2]) {
      ConvergenceTrace t;
      t.problem_id = cells[0];
      t.solver_id = cells[1];
      t.stage = cells[2];
      t.initial_cost = rec.cost;
      traces.push_back(std::move(t));
    }
    traces.back().records.push_back(rec);
  }
  return traces;
}

void save_traces_csv(const std::string& path, std::span<const ConvergenceTrace> traces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_traces_csv(out, traces);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<ConvergenceTrace> load_traces_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return read_traces_csv(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_profiles_csv(std::ostream& out, std::span<const ProfileResult> profiles) {
  out << "tau,solver,alpha,percentage\n";
  for (const auto& p : profiles) {
    check_field(p.solver_id);
    for (const auto& point : p.curve) {
      out << fmt::format("{:.17g},{},{:.17g},{:.17g}\n", p.tau, p.solver_id, point.alpha,
                         point.percentage);
    }
  }
}

std::vector<ProfileResult> read_profiles_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "tau,solver,alpha,percentage") {
    throw std::runtime_error("profile CSV: missing or unexpected header");
  }
  std::vector<ProfileResult> profiles;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 4) {
      throw std::runtime_error(fmt::format("profile CSV line {}: expected 4 columns", line_no));
    }
    const double tau = parse_double(cells[0], line_no);
    if (profiles.empty() || profiles.back().tau != tau ||
        profiles.back().solver_id != cells[1]) {
      profiles.push_back({cells[1], tau, {}});
    }
    profiles.back().curve.push_back(
        {parse_double(cells[2], line_no), parse_double(cells[3], line_no)});
  }
  return profiles;
}

void save_profiles_csv(const std::string& path, std::span<const ProfileResult> profiles) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_profiles_csv(out, profiles);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace povar

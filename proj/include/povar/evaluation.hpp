#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace povar {

struct TraceRecord {
  int iteration = 0;
  double cost = 0.0;
  double elapsed_seconds = 0.0;

  bool operator==(const TraceRecord&) const = default;
};

/// Cost-versus-time history of one solver on one problem. The first record
/// carries the initial cost f0 at the start of the measured interval.
struct ConvergenceTrace {
  std::string problem_id;
  std::string solver_id;
  std::string stage;
  std::vector<TraceRecord> records;
  double initial_cost = 0.0;

  /// Throws std::invalid_argument if records are empty, elapsed time
  /// decreases, or the first record is not the initial cost.
  void validate() const;

  double final_cost() const { return records.back().cost; }
  double min_cost() const;

  bool operator==(const ConvergenceTrace&) const = default;
};

/// f_tau(p) = f*(p) + tau (f0(p) - f*(p)), with f* the smallest cost reached
/// by any of the given traces, all of which must share one f0.
double cost_threshold(std::span<const ConvergenceTrace> traces_for_problem, double tau);

/// Elapsed time of the first record at or below the threshold.
std::optional<double> time_to_threshold(const ConvergenceTrace& trace, double threshold);

struct ProfilePoint {
  double alpha = 1.0;
  double percentage = 0.0;

  bool operator==(const ProfilePoint&) const = default;
};

struct ProfileResult {
  std::string solver_id;
  double tau = 0.0;
  std::vector<ProfilePoint> curve;

  /// Step-function value at an arbitrary alpha.
  double at(double alpha) const;

  bool operator==(const ProfileResult&) const = default;
};

/// Runtime matrix input: times[p][s] is the time solver s needs on problem p,
/// nullopt when it never reaches the threshold. Problems that no solver
/// solves stay in the denominator.
std::vector<ProfileResult> profile_from_times(
    const std::vector<std::string>& solvers,
    const std::vector<std::vector<std::optional<double>>>& times, double tau);

/// Groups traces by problem, computes each problem's threshold across the
/// solver family and returns one profile per solver (sorted by solver id).
/// A solver without a trace for some problem counts as not reaching it.
std::vector<ProfileResult> performance_profile(std::span<const ConvergenceTrace> traces,
                                               double tau);

/// Alpha sampling grid: 2^(k/4) for k = 0..20, i.e. [1, 32].
std::vector<double> default_alpha_grid();

// CSV schemas:
//   traces:   problem,solver,stage,iteration,cost,elapsed_seconds
//   profiles: tau,solver,alpha,percentage
// Numbers use 17 significant digits so values round-trip exactly.
void write_traces_csv(std::ostream& out, std::span<const ConvergenceTrace> traces);
std::vector<ConvergenceTrace> read_traces_csv(std::istream& in);
void save_traces_csv(const std::string& path, std::span<const ConvergenceTrace> traces);
std::vector<ConvergenceTrace> load_traces_csv(const std::string& path);

void write_profiles_csv(std::ostream& out, std::span<const ProfileResult> profiles);
std::vector<ProfileResult> read_profiles_csv(std::istream& in);
void save_profiles_csv(const std::string& path, std::span<const ProfileResult> profiles);

}  // namespace povar

#pragma once

#include "povar/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace povar {

struct Observation {
  int camera_index = 0;
  int landmark_index = 0;
  Vec2 measurement = Vec2::Zero();

  bool operator==(const Observation&) const = default;
};

/// Metric camera as stored in BAL files: angle-axis rotation, translation,
/// focal length and two radial distortion coefficients. BAL cameras look down
/// the negative z axis: m = -f * (X_c.x / X_c.z, X_c.y / X_c.z).
struct MetricCamera {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  double focal = 1.0;
  double k1 = 0.0;
  double k2 = 0.0;

  Mat3 rotation_matrix() const;
  /// Intrinsics K such that the undistorted BAL projection equals
  /// pi(K [R | t] X). The BAL sign convention is folded into K = diag(-f, -f, 1).
  Mat3 intrinsics() const;
  Mat34 projection_matrix() const;

  bool operator==(const MetricCamera&) const = default;
};

struct BaProblem {
  int num_cameras = 0;
  int num_landmarks = 0;
  int num_observations = 0;
  std::vector<Observation> observations;
  std::optional<std::vector<MetricCamera>> metric_cameras;
  std::optional<std::vector<Vec3>> metric_points;

  bool operator==(const BaProblem&) const = default;
};

/// Cameras as 3x4 projective matrices, landmarks as homogeneous 4-vectors.
/// Stage 1 keeps landmark(3) == 1; Stage 2 keeps every camera (as a 12-vector)
/// and every landmark at unit Euclidean norm.
struct ProjectiveState {
  std::vector<Mat34> cameras;
  std::vector<Vec4> landmarks;

  bool operator==(const ProjectiveState& o) const {
    if (cameras.size() != o.cameras.size() || landmarks.size() != o.landmarks.size()) {
      return false;
    }
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      if (cameras[i] != o.cameras[i]) return false;
    }
    for (std::size_t j = 0; j < landmarks.size(); ++j) {
      if (landmarks[j] != o.landmarks[j]) return false;
    }
    return true;
  }
};

class BalParseError : public std::runtime_error {
 public:
  BalParseError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses BAL text. Errors carry the 1-based line number of the offending token.
BaProblem parse_bal(std::istream& in);
BaProblem parse_bal_string(const std::string& text);

/// Reads a BAL file from disk. Gzip-compressed input is detected by its magic
/// bytes and decompressed transparently.
BaProblem load_bal(const std::string& path);

/// Writes BAL text with 17 significant digits. Missing metric blocks are
/// written as identity cameras (f = 1) and zero points.
void write_bal(std::ostream& out, const BaProblem& problem);
void save_bal(const std::string& path, const BaProblem& problem);

/// Throws std::invalid_argument when counts or indices are inconsistent.
void validate(const BaProblem& problem);

struct PruneReport {
  int removed_landmarks = 0;
  int removed_cameras = 0;
  int removed_duplicate_observations = 0;
};

/// Drops duplicate (camera, landmark) observations, landmarks observed by
/// fewer than two cameras, then cameras left without observations. Indices
/// are compacted; metric blocks follow the surviving entities.
BaProblem prune(const BaProblem& problem, PruneReport* report = nullptr);

/// Observation index grouped per landmark (sorted by camera) and per camera.
struct ObservationGraph {
  /// landmark_offset[j]..landmark_offset[j+1] index into `slots`.
  std::vector<std::size_t> landmark_offset;
  /// Observation index into BaProblem::observations, grouped by landmark,
  /// cameras strictly increasing inside a group.
  std::vector<int> slots;
  /// Camera and landmark index of each slot.
  std::vector<int> slot_camera;
  std::vector<int> slot_landmark;
  /// For every camera, the slots it owns in increasing order.
  std::vector<std::vector<std::size_t>> camera_slots;

  std::size_t num_landmarks() const { return landmark_offset.size() - 1; }
  std::size_t num_cameras() const { return camera_slots.size(); }
  std::size_t num_slots() const { return slots.size(); }
};

ObservationGraph build_graph(const BaProblem& problem);

/// Deterministic standard-normal stream: std::mt19937_64 (sequence fixed by
/// the C++ standard) feeding a Box-Muller transform on 53-bit uniforms.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed);
  double next();

 private:
  double uniform();

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct PoseConfig;

/// Random starting point: all camera entries i.i.d. N(0, 1) in camera order,
/// row-major; landmarks from the closed-form Stage-1 solve.
ProjectiveState random_init(const BaProblem& problem, std::uint64_t seed,
                            const PoseConfig& config);
ProjectiveState random_init(const BaProblem& problem, std::uint64_t seed);

/// Plain-text state dump: "cameras N" followed by N rows of 12 numbers, then
/// "landmarks M" followed by M rows of 4 numbers.
void write_state(std::ostream& out, const ProjectiveState& state);
ProjectiveState read_state(std::istream& in);

}  // namespace povar

#pragma once

#include "povar/bal_io.hpp"
#include "povar/common.hpp"

#include <memory>
#include <vector>

namespace povar {

/// Dense per-landmark storage of the linearized problem. Every observation
/// slot holds rows_per_obs rows laid out as [pose Jacobian | landmark Jacobian
/// | residual]; the slots of one landmark are contiguous, so the landmark's
/// whole block is a single row-major matrix. Only the Jacobian of the camera
/// that owns a row is stored; the camera index comes from the graph.
struct LandmarkBlockStore {
  int rows_per_obs = 0;
  int pose_dim = 0;
  int landmark_dim = 0;
  std::shared_ptr<const ObservationGraph> graph;
  std::vector<double> data;

  LandmarkBlockStore() = default;
  LandmarkBlockStore(std::shared_ptr<const ObservationGraph> g, int rows, int pose,
                     int landmark);

  int stride() const { return pose_dim + landmark_dim + 1; }
  std::size_t slot_size() const {
    return static_cast<std::size_t>(rows_per_obs) * stride();
  }
  std::size_t num_slots() const { return graph->num_slots(); }
  std::size_t num_landmarks() const { return graph->num_landmarks(); }
  std::size_t num_cameras() const { return graph->num_cameras(); }
  int camera_of(std::size_t slot) const { return graph->slot_camera[slot]; }

  double* slot_data(std::size_t slot) { return data.data() + slot * slot_size(); }
  const double* slot_data(std::size_t slot) const {
    return data.data() + slot * slot_size();
  }

  MapMatXR slot_block(std::size_t slot) {
    return MapMatXR(slot_data(slot), rows_per_obs, stride());
  }
  ConstMapMatXR slot_block(std::size_t slot) const {
    return ConstMapMatXR(slot_data(slot), rows_per_obs, stride());
  }

  /// All rows of landmark j: (rows_per_obs * num_obs) x stride.
  ConstMapMatXR landmark_block(std::size_t j) const {
    const std::size_t begin = graph->landmark_offset[j];
    const std::size_t count = graph->landmark_offset[j + 1] - begin;
    return ConstMapMatXR(slot_data(begin), rows_per_obs * count, stride());
  }

  /// Sum of squared residual entries.
  double residual_squared_norm() const;
};

}  // namespace povar

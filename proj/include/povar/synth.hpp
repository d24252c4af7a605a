#pragma once

#include "povar/bal_io.hpp"

#include <cstdint>

namespace povar {

/// Cameras on a horizontal ring looking at a Gaussian landmark cloud centred
/// at the origin, in BAL conventions (camera looks down its -z axis).
struct SynthOptions {
  int cameras = 10;
  int landmarks = 100;
  /// Standard deviation of Gaussian pixel noise.
  double noise = 0.0;
  std::uint64_t seed = 0;
  double ring_radius = 10.0;
  double cloud_sigma = 1.0;
  double focal = 500.0;
  /// Probability that a landmark is observed by a given camera.
  double visibility = 1.0;
  /// Standard deviation of the camera heights above the ring plane.
  double height_jitter = 1.0;

  /// Throws std::invalid_argument for fewer than 2 cameras or bad ranges.
  void validate() const;
};

/// Problem with metric ground truth and exact (or noisy) measurements.
/// Throws std::invalid_argument if some landmark ends up with fewer than two
/// observations.
BaProblem synthesize(const SynthOptions& options);

}  // namespace povar

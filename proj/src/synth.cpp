#include "povar/synth.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace povar {

void SynthOptions::validate() const {
  if (cameras < 2) throw std::invalid_argument("synth: need at least 2 cameras");
  if (landmarks < 1) throw std::invalid_argument("synth: need at least 1 landmark");
  if (!(noise >= 0.0) || !(ring_radius > 0.0) || !(cloud_sigma >= 0.0) || !(focal > 0.0) ||
      !(height_jitter >= 0.0)) {
    throw std::invalid_argument("synth: invalid scene parameters");
  }
  if (!(visibility > 0.0 && visibility <= 1.0)) {
    throw std::invalid_argument("synth: visibility must be in (0, 1]");
  }
}

BaProblem synthesize(const SynthOptions& options) {
  options.validate();
  NormalStream normal(options.seed);
  std::mt19937_64 visibility_engine(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<MetricCamera> cameras(options.cameras);
  for (int i = 0; i < options.cameras; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / options.cameras;
    const Vec3 center(options.ring_radius * std::cos(theta),
                      options.height_jitter * normal.next(),
                      options.ring_radius * std::sin(theta));
    // Rows of R are the camera axes; z points away from the scene.
    const Vec3 z = center.normalized();
    const Vec3 x = Vec3::UnitY().cross(z).normalized();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    const Eigen::AngleAxisd aa(r);
    cameras[i].rotation = aa.angle() * aa.axis();
    cameras[i].translation = -r * center;
    cameras[i].focal = options.focal;
  }

  std::vector<Vec3> points(options.landmarks);
  for (auto& p : points) {
    const double a = normal.next();
    const double b = normal.next();
    const double c = normal.next();
    p = options.cloud_sigma * Vec3(a, b, c);
  }

  BaProblem problem;
  problem.num_cameras = options.cameras;
  problem.num_landmarks = options.landmarks;
  for (int j = 0; j < options.landmarks; ++j) {
    int seen = 0;
    for (int i = 0; i < options.cameras; ++i) {
      if (options.visibility < 1.0 && uniform(visibility_engine) >= options.visibility) continue;
      const Mat3 r = cameras[i].rotation_matrix();
      const Vec3 pc = r * points[j] + cameras[i].translation;
      if (!(pc.z() < 0.0)) continue;
      Vec2 m = -options.focal * pc.head<2>() / pc.z();
      if (options.noise > 0.0) {
        const double nx = normal.next();
        const double ny = normal.next();
        m += options.noise * Vec2(nx, ny);
      }
      problem.observations.push_back({i, j, m});
      ++seen;
    }
    if (seen < 2) {
      throw std::invalid_argument("synth: landmark " + std::to_string(j) + " has only " +
                                  std::to_string(seen) + " observations");
    }
  }
  std::vector<int> per_camera(options.cameras, 0);
  for (const auto& o : problem.observations) ++per_camera[o.camera_index];
  for (int i = 0; i < options.cameras; ++i) {
    if (per_camera[i] == 0) {
      throw std::invalid_argument("synth: camera " + std::to_string(i) + " sees no landmark");
    }
  }
  problem.num_observations = static_cast<int>(problem.observations.size());
  problem.metric_cameras = std::move(cameras);
  problem.metric_points = std::move(points);
  return problem;
}

}  // namespace povar

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "lidarmos/range_projection.hpp"
#include "lidarmos/types.hpp"

namespace mos {

// Axis-aligned box moving at constant velocity (meters per frame).
struct SyntheticBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  double intensity = 0.5;

  bool moving() const { return velocity.squaredNorm() > 0.0; }
  Eigen::Vector3d center_at(int frame) const { return center + static_cast<double>(frame) * velocity; }
};

struct SyntheticGround {
  double z = 0.0;
  double intensity = 0.2;
};

// Constant-velocity sensor trajectory; yaw_rate in radians per frame.
struct SensorMotion {
  Eigen::Vector3d start_position = Eigen::Vector3d::Zero();
  double start_yaw = 0.0;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  double yaw_rate = 0.0;

  Pose pose_at(int frame) const {
    Pose p = Pose::rotation_z(start_yaw + frame * yaw_rate);
    p.translation = start_position + static_cast<double>(frame) * velocity;
    return p;
  }
};

struct SyntheticConfig {
  int n_frames = 2;
  ProjectionConfig rays = ProjectionConfig::desk();  // one ray per pixel center
  SensorMotion motion;
  std::vector<SyntheticBox> boxes;
  std::optional<SyntheticGround> ground;
  double max_range = 80.0;
  std::string sequence_id = "00";

  void validate() const;
  static SyntheticConfig load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;
};

// Ray-casts one scan per frame from the moving sensor pose. Points are stored in
// the sensor frame; labels are moving iff the hit object has nonzero velocity;
// poses are exact.
ScanSequence generate_synthetic_sequence(const SyntheticConfig& config);

// Unsigned distance from a world-frame point to the nearest scene surface at the
// given frame. Hit points must lie on a surface (distance ~ 0).
double scene_surface_distance(const SyntheticConfig& config, int frame, const Eigen::Vector3d& p_world);

}  // namespace mos

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lidarmos/errors.hpp"

namespace mos {

enum class Label : std::uint8_t { kUnlabeled = 0, kStatic = 1, kMoving = 2 };

// One LiDAR scan in the sensor frame.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<double> intensity;  // reflectance in [0,1]
  int frame_id = 0;

  std::size_t size() const { return points.size(); }
  bool consistent() const { return points.size() == intensity.size(); }
};

// Rigid transform sensor->world (SE3), rotation orthonormal det +1.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }

  // this ∘ other (apply other first).
  Pose compose(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  bool is_valid(double tol = 1e-6) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }

  static Pose identity() { return Pose{}; }

  static Pose rotation_z(double yaw) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    return p;
  }

  static Pose translation_xyz(double x, double y, double z) {
    Pose p;
    p.translation = Eigen::Vector3d(x, y, z);
    return p;
  }
};

struct MosLabels {
  std::vector<Label> labels;
  int frame_id = 0;

  std::size_t size() const { return labels.size(); }

  std::size_t count(Label value) const {
    std::size_t n = 0;
    for (Label l : labels)
      if (l == value) ++n;
    return n;
  }
};

// Index-aligned scans, poses and (optionally) labels of one drive.
struct ScanSequence {
  struct Frame {
    PointCloud cloud;
    Pose pose;
    std::optional<MosLabels> labels;
  };

  std::string sequence_id;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }

  void validate() const {
    int last_id = -1;
    for (const Frame& f : frames) {
      if (!f.cloud.consistent()) throw FormatError("scan sequence: point/intensity size mismatch");
      if (!f.pose.is_valid()) throw FormatError("scan sequence: invalid pose");
      if (f.labels && f.labels->size() != f.cloud.size())
        throw FormatError("scan sequence: label count differs from point count");
      if (f.cloud.frame_id <= last_id) throw FormatError("scan sequence: frame ids not increasing");
      last_id = f.cloud.frame_id;
    }
  }
};

}  // namespace mos

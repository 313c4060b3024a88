#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lidarmos/types.hpp"

namespace mos {

// Spherical projection grid. Angles in radians, fov_down negative below horizon.
struct ProjectionConfig {
  int width = 2048;
  int height = 64;
  double fov_up = 3.0 * M_PI / 180.0;
  double fov_down = -25.0 * M_PI / 180.0;

  double fov_total() const { return fov_up + std::abs(fov_down); }

  void validate() const {
    if (width < 1 || height < 1) throw ConfigError("projection: width/height must be >= 1");
    if (!(fov_total() > 0)) throw ConfigError("projection: total vertical FOV must be > 0");
  }

  // 64x256 keeps CPU training fast while preserving the full-scale topology.
  static ProjectionConfig desk() {
    ProjectionConfig c;
    c.width = 256;
    c.height = 64;
    return c;
  }
};

struct PixelCoord {
  int u = 0;  // column
  int v = 0;  // row
  double range = 0.0;
};

// u = 1/2 [1 - atan2(y,x)/pi] w, wrapped modulo w.
// v = [1 - (asin(z/r) + fov_up)/fov] h, rows outside [0,h) are discarded.
std::optional<PixelCoord> project_point(const Eigen::Vector3d& p, const ProjectionConfig& config);

// Continuous image coordinates before flooring; used by the synthetic ray grid.
Eigen::Vector3d pixel_center_direction(double u, double v, const ProjectionConfig& config);

// Five channels (x, y, z, range, intensity) plus index bookkeeping for exact
// back-projection. Empty pixels carry kFill on every channel.
struct RangeImage {
  static constexpr int kChannels = 5;
  static constexpr double kFill = -1.0;

  ProjectionConfig config;
  int height = 0;
  int width = 0;
  std::size_t n_points = 0;

  std::vector<double> channels;      // kChannels * h * w, plane-major [c][v][u]
  std::vector<std::int32_t> index_map;    // h * w, winning point index or -1
  std::vector<std::int32_t> point_pixel;  // n_points, flat pixel v*w+u or -1 if out of view

  double at(int c, int v, int u) const { return channels[(static_cast<std::size_t>(c) * height + v) * width + u]; }
  double& at(int c, int v, int u) { return channels[(static_cast<std::size_t>(c) * height + v) * width + u]; }
  std::int32_t index_at(int v, int u) const { return index_map[static_cast<std::size_t>(v) * width + u]; }
  bool valid(int v, int u) const { return index_at(v, u) >= 0; }

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

// Pixel collisions keep the smaller range; ties keep the lower point index.
RangeImage build_range_image(const PointCloud& cloud, const ProjectionConfig& config);

// Per-point features gathered from the pixel each point projects to. Points that
// lost a pixel collision take the winner's features; out-of-view points get zeros.
// image_features is channels * h * w plane-major; output is n x channels row-major.
std::vector<double> back_project(const std::vector<double>& image_features, int feature_channels,
                                 const RangeImage& image);

// Per-point labels from the pixel label image; out-of-view points become kStatic
// (an explicit "not moving" prediction).
std::vector<Label> back_project_labels(const std::vector<Label>& pixel_labels, const RangeImage& image);

// 8-bit preview of the range channel, normalized to the max valid range.
void write_pgm_preview(const RangeImage& image, const std::string& path);

}  // namespace mos

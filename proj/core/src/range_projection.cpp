#include "lidarmos/range_projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mos {

std::optional<PixelCoord> project_point(const Eigen::Vector3d& p, const ProjectionConfig& config) {
  if (!p.allFinite()) return std::nullopt;
  const double r = p.norm();
  if (!(r > 0.0)) return std::nullopt;

  const double yaw = std::atan2(p.y(), p.x());
  const double pitch = std::asin(p.z() / r);

  double uf = 0.5 * (1.0 - yaw / M_PI) * config.width;
  double vf = (1.0 - (pitch + config.fov_up) / config.fov_total()) * config.height;

  int v = static_cast<int>(std::floor(vf));
  if (v < 0 || v >= config.height) return std::nullopt;

  // Azimuth is periodic: atan2 == -pi puts uf at exactly w, which wraps to 0.
  int u = static_cast<int>(std::floor(uf));
  u %= config.width;
  if (u < 0) u += config.width;

  return PixelCoord{u, v, r};
}

Eigen::Vector3d pixel_center_direction(double u, double v, const ProjectionConfig& config) {
  const double yaw = M_PI * (1.0 - 2.0 * u / config.width);
  const double pitch = config.fov_total() * (1.0 - v / config.height) - config.fov_up;
  const double c = std::cos(pitch);
  return {c * std::cos(yaw), c * std::sin(yaw), std::sin(pitch)};
}

RangeImage build_range_image(const PointCloud& cloud, const ProjectionConfig& config) {
  config.validate();
  if (!cloud.consistent()) throw FormatError("build_range_image: point/intensity size mismatch");

  RangeImage img;
  img.config = config;
  img.height = config.height;
  img.width = config.width;
  img.n_points = cloud.size();
  img.channels.assign(static_cast<std::size_t>(RangeImage::kChannels) * img.pixel_count(), RangeImage::kFill);
  img.index_map.assign(img.pixel_count(), -1);
  img.point_pixel.assign(cloud.size(), -1);

  std::vector<double> best_range(img.pixel_count(), 0.0);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto pc = project_point(cloud.points[i], config);
    if (!pc) continue;
    const std::size_t flat = static_cast<std::size_t>(pc->v) * img.width + pc->u;
    img.point_pixel[i] = static_cast<std::int32_t>(flat);
    // Ascending index scan with strict < keeps the lower index on range ties.
    if (img.index_map[flat] >= 0 && !(pc->range < best_range[flat])) continue;
    img.index_map[flat] = static_cast<std::int32_t>(i);
    best_range[flat] = pc->range;
  }

  const std::size_t hw = img.pixel_count();
  for (std::size_t flat = 0; flat < hw; ++flat) {
    const std::int32_t idx = img.index_map[flat];
    if (idx < 0) continue;
    const Eigen::Vector3d& p = cloud.points[idx];
    img.channels[0 * hw + flat] = p.x();
    img.channels[1 * hw + flat] = p.y();
    img.channels[2 * hw + flat] = p.z();
    img.channels[3 * hw + flat] = best_range[flat];
    img.channels[4 * hw + flat] = cloud.intensity[idx];
  }
  return img;
}

std::vector<double> back_project(const std::vector<double>& image_features, int feature_channels,
                                 const RangeImage& image) {
  const std::size_t hw = image.pixel_count();
  if (image_features.size() != static_cast<std::size_t>(feature_channels) * hw)
    throw ConfigError("back_project: feature buffer size mismatch");

  std::vector<double> out(image.n_points * feature_channels, 0.0);
  for (std::size_t i = 0; i < image.n_points; ++i) {
    const std::int32_t flat = image.point_pixel[i];
    if (flat < 0) continue;
    for (int c = 0; c < feature_channels; ++c)
      out[i * feature_channels + c] = image_features[static_cast<std::size_t>(c) * hw + flat];
  }
  return out;
}

std::vector<Label> back_project_labels(const std::vector<Label>& pixel_labels, const RangeImage& image) {
  if (pixel_labels.size() != image.pixel_count())
    throw ConfigError("back_project_labels: label image size mismatch");
  std::vector<Label> out(image.n_points, Label::kStatic);
  for (std::size_t i = 0; i < image.n_points; ++i) {
    const std::int32_t flat = image.point_pixel[i];
    if (flat >= 0) out[i] = pixel_labels[flat];
  }
  return out;
}

void write_pgm_preview(const RangeImage& image, const std::string& path) {
  const std::size_t hw = image.pixel_count();
  double max_range = 0.0;
  for (std::size_t i = 0; i < hw; ++i)
    if (image.index_map[i] >= 0) max_range = std::max(max_range, image.channels[3 * hw + i]);
  if (max_range <= 0.0) max_range = 1.0;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P5\n" << image.width << " " << image.height << "\n255\n";
  for (std::size_t i = 0; i < hw; ++i) {
    unsigned char px = 0;
    if (image.index_map[i] >= 0) {
      double norm = image.channels[3 * hw + i] / max_range;
      px = static_cast<unsigned char>(std::clamp(norm, 0.0, 1.0) * 255.0);
    }
    f.put(static_cast<char>(px));
  }
  if (!f) throw IoError("short write to " + path);
}

}  // namespace mos

#include "lidarmos/residual.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mos {

PointCloud transform_scan(const PointCloud& previous, const Pose& pose_prev, const Pose& pose_cur) {
  const Pose rel = pose_cur.inverse().compose(pose_prev);
  PointCloud out;
  out.frame_id = previous.frame_id;
  out.intensity = previous.intensity;
  out.points.resize(previous.points.size());
  for (std::size_t i = 0; i < previous.points.size(); ++i) out.points[i] = rel.apply(previous.points[i]);
  return out;
}

std::vector<double> compute_residual(const RangeImage& current, const RangeImage& transformed_prev) {
  if (current.height != transformed_prev.height || current.width != transformed_prev.width)
    throw ConfigError("compute_residual: image sizes differ");

  const std::size_t hw = current.pixel_count();
  std::vector<double> out(hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    if (current.index_map[i] < 0 || transformed_prev.index_map[i] < 0) continue;
    const double r_cur = current.channels[3 * hw + i];
    const double r_prev = transformed_prev.channels[3 * hw + i];
    out[i] = std::abs(r_cur - r_prev) / r_cur;
  }
  return out;
}

ResidualStack build_residual_stack(const ScanSequence& seq, int l, int n_res, const ProjectionConfig& config) {
  if (n_res < 1) throw ConfigError("build_residual_stack: n_res must be >= 1");
  if (l < 0 || l >= static_cast<int>(seq.size())) throw ConfigError("build_residual_stack: frame index out of range");

  ResidualStack stack;
  stack.height = config.height;
  stack.width = config.width;
  stack.frame_id = l;
  const std::size_t hw = static_cast<std::size_t>(config.height) * config.width;
  stack.values.assign(static_cast<std::size_t>(n_res) * hw, 0.0);

  const RangeImage current = build_range_image(seq.frames[l].cloud, config);

  for (int j = 1; j <= n_res; ++j) {
    stack.source_offsets.push_back(j);
    const int k = l - j;
    if (k < 0) continue;  // before sequence start: no evidence of motion
    PointCloud moved = transform_scan(seq.frames[k].cloud, seq.frames[k].pose, seq.frames[l].pose);
    const RangeImage prev_img = build_range_image(moved, config);
    const std::vector<double> d = compute_residual(current, prev_img);
    std::memcpy(stack.values.data() + static_cast<std::size_t>(j - 1) * hw, d.data(), hw * sizeof(double));
  }
  return stack;
}

ResidualCache::ResidualCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResidualCache::key_path(const std::string& sequence_id, int frame, int offset) const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "f%06d_o%02d.rres", frame, offset);
  return dir_ / sequence_id / buf;
}

std::vector<double> ResidualCache::load_or_compute(const std::string& sequence_id, int frame, int offset,
                                                   int height, int width,
                                                   const std::function<std::vector<double>()>& compute) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  const auto path = key_path(sequence_id, frame, offset);

  if (std::filesystem::exists(path)) {
    std::ifstream f(path, std::ios::binary);
    char magic[5] = {};
    std::uint32_t h = 0, w = 0;
    f.read(magic, 5);
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    if (f && std::memcmp(magic, "RRES1", 5) == 0 && h == static_cast<std::uint32_t>(height) &&
        w == static_cast<std::uint32_t>(width)) {
      std::vector<double> data(hw);
      f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(hw * sizeof(double)));
      if (f) return data;
    }
    // Stale or corrupt entry: fall through and rewrite.
  }

  std::vector<double> data = compute();
  if (data.size() != hw) throw ConfigError("residual cache: computed channel has wrong size");

  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write residual cache entry " + path.string());
  const std::uint32_t h = height, w = width;
  f.write("RRES1", 5);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(hw * sizeof(double)));
  if (!f) throw IoError("short write to " + path.string());
  return data;
}

}  // namespace mos

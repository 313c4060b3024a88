#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidarmos/types.hpp"

namespace mos {

// Maps 16-bit semantic ids to {unlabeled, static, moving}. Total: ids not in
// the table fall back to default_label. Benchmark convention: 0 -> unlabeled,
// 9 -> static, 251 -> moving, everything else static.
struct LabelRemap {
  std::unordered_map<std::uint16_t, Label> table;
  Label default_label = Label::kStatic;

  Label map(std::uint16_t semantic_id) const {
    auto it = table.find(semantic_id);
    return it == table.end() ? default_label : it->second;
  }

  static LabelRemap mos_benchmark();
  static LabelRemap load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;

  // Inverse used when writing synthetic datasets in the on-disk format.
  std::uint16_t encode(Label l) const;
};

// KITTI velodyne scan: 4 little-endian float32 per point (x, y, z, intensity).
// Non-finite points are dropped (count in *n_dropped), intensity clamped to [0,1].
PointCloud read_scan(const std::filesystem::path& path, int* n_dropped = nullptr);
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);

// calib.txt "Tr:" line, the camera<-lidar extrinsic as a rigid pose.
Pose read_calib(const std::filesystem::path& path);
void write_calib(const std::filesystem::path& path, const Pose& tr);

// poses.txt: 12 floats per line, row-major 3x4 camera-frame pose. Each pose is
// conjugated into the LiDAR frame: calib^-1 * T_cam * calib.
std::vector<Pose> read_poses(const std::filesystem::path& path, const Pose& calib);
void write_poses(const std::filesystem::path& path, const std::vector<Pose>& lidar_poses, const Pose& calib);

// .label file: one little-endian uint32 per point, low 16 bits semantic id.
MosLabels read_labels(const std::filesystem::path& path, const LabelRemap& remap);
void write_labels(const std::filesystem::path& path, const MosLabels& labels, const LabelRemap& remap);

// KITTI-odometry directory layout:
//   root/sequences/<id>/velodyne/NNNNNN.bin
//   root/sequences/<id>/labels/NNNNNN.label   (optional)
//   root/sequences/<id>/poses.txt
//   root/sequences/<id>/calib.txt
ScanSequence read_sequence(const std::filesystem::path& root, const std::string& sequence_id,
                           const LabelRemap& remap, int max_frames = -1);
void write_sequence(const std::filesystem::path& root, const ScanSequence& seq, const LabelRemap& remap);

}  // namespace mos

#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "lidarmos/range_projection.hpp"
#include "lidarmos/types.hpp"

namespace mos {

// Normalized range differences between frame l and its n_res predecessors.
// Channel j holds the residual against frame l - source_offsets[j]. Pixels
// lacking co-validity are exactly 0, so all values are >= 0.
struct ResidualStack {
  int height = 0;
  int width = 0;
  int frame_id = 0;
  std::vector<int> source_offsets;
  std::vector<double> values;  // n_res * h * w, plane-major

  int n_channels() const { return static_cast<int>(source_offsets.size()); }
  double at(int j, int v, int u) const {
    return values[(static_cast<std::size_t>(j) * height + v) * width + u];
  }
};

// Maps previous-frame points into the current frame: pose_cur^-1 ∘ pose_prev.
PointCloud transform_scan(const PointCloud& previous, const Pose& pose_prev, const Pose& pose_cur);

// d_i = |r_i - r_i^{prev->cur}| / r_i where both pixels are valid, 0 otherwise.
std::vector<double> compute_residual(const RangeImage& current, const RangeImage& transformed_prev);

// Residual channel j is computed against frame l-j (j = 1..n_res); offsets that
// fall before the sequence start stay all-zero.
ResidualStack build_residual_stack(const ScanSequence& seq, int l, int n_res, const ProjectionConfig& config);

// On-disk cache of single residual channels keyed by (sequence, frame, offset),
// to amortize preprocessing across epochs. Layout: one RRES1 file per key with
// a 16-byte header (magic, h, w) followed by h*w little-endian float64.
class ResidualCache {
 public:
  explicit ResidualCache(std::filesystem::path dir);

  std::vector<double> load_or_compute(const std::string& sequence_id, int frame, int offset, int height,
                                      int width, const std::function<std::vector<double>()>& compute);

 private:
  std::filesystem::path key_path(const std::string& sequence_id, int frame, int offset) const;
  std::filesystem::path dir_;
};

}  // namespace mos

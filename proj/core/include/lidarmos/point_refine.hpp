#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lidarmos/nn_layers.hpp"
#include "lidarmos/range_projection.hpp"
#include "lidarmos/types.hpp"

namespace mos {

// Occupied-voxel list with per-point membership. Voxel order is the first
// appearance while scanning points, so construction is deterministic.
struct SparseVoxelGrid {
  double voxel_size = 0.25;
  std::vector<Eigen::Vector3i> coords;
  std::vector<std::int32_t> point_to_voxel;

  // pairs[o] holds (site, neighbor) for kernel offset o; offsets enumerate
  // dz,dy,dx in {-1,0,1} with o = ((dz+1)*3 + (dy+1))*3 + (dx+1).
  std::array<std::vector<std::pair<std::int32_t, std::int32_t>>, 27> neighbor_pairs;

  int n_voxels() const { return static_cast<int>(coords.size()); }
};

// voxel coordinate = floor(p / voxel_size); per-voxel features are member means.
SparseVoxelGrid voxelize(const PointCloud& points, double voxel_size);

// Submanifold 3x3x3 convolution: output sites equal input sites, each output
// aggregates its occupied neighbors. weight is (27, c_in, c_out).
template <typename T>
ad::Tensor<T> sparse_conv3d(const SparseVoxelGrid& grid, const ad::Tensor<T>& features,
                            const ad::Tensor<T>& weight, const ad::Tensor<T>& bias);

template <typename T>
struct SparseConv3dLayer {
  ad::Parameter<T> weight;  // (27, c_in, c_out)
  ad::Parameter<T> bias;    // (c_out)
  int stride = 1;           // submanifold semantics require 1

  void init(const std::string& name, int c_in, int c_out, ad::Rng& rng);
  ad::Tensor<T> forward(const SparseVoxelGrid& grid, const ad::Tensor<T>& features) const;
  void collect(nn::Params<T>& out);
};

// Coarse-to-fine refinement: voxel branch (sparse convs) and point branch
// (per-point MLP) over back-projected features, fused by concat + FC.
template <typename T>
class PointHead {
 public:
  PointHead(int channels, int classes, bool lite, std::uint64_t init_seed = 2);

  // point_features (N, channels) -> per-point class logits (N, classes).
  ad::Tensor<T> forward(const SparseVoxelGrid& grid, const ad::Tensor<T>& point_features);

  bool lite() const { return lite_; }
  nn::Params<T>& parameters() { return params_; }
  const nn::Params<T>& parameters() const { return params_; }
  std::uint64_t parameter_hash() const { return nn::hash_params(params_); }

  void save(Checkpoint& ckpt) const { nn::save_params(params_, ckpt); }
  void load(const Checkpoint& ckpt) { nn::load_params(params_, ckpt); }

 private:
  int channels_, classes_;
  bool lite_;
  nn::LinearLayer<T> point_fc1, point_fc2;
  SparseConv3dLayer<T> conv1, conv2;
  nn::LinearLayer<T> fuse1, fuse2;
  nn::Params<T> params_;
};

// Back-projects image features to the points, voxelizes and runs the head.
template <typename T>
ad::Tensor<T> run_point_head(PointHead<T>& head, const PointCloud& cloud,
                             const std::vector<double>& image_features, int feature_channels,
                             const RangeImage& image, double voxel_size);

}  // namespace mos

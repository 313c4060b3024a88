#include "lidarmos/point_refine.hpp"

#include <cmath>
#include <unordered_map>

namespace mos {

namespace {

constexpr double kLeakySlope = 0.01;

struct CoordKey {
  int x, y, z;
  bool operator==(const CoordKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CoordHash {
  std::size_t operator()(const CoordKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (int v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint32_t>(v);
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

SparseVoxelGrid voxelize(const PointCloud& points, double voxel_size) {
  if (!(voxel_size > 0)) throw ConfigError("voxelize: voxel_size must be positive");

  SparseVoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_to_voxel.resize(points.size());

  std::unordered_map<CoordKey, std::int32_t, CoordHash> index;
  index.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d& p = points.points[i];
    CoordKey key{static_cast<int>(std::floor(p.x() / voxel_size)),
                 static_cast<int>(std::floor(p.y() / voxel_size)),
                 static_cast<int>(std::floor(p.z() / voxel_size))};
    auto [it, inserted] = index.emplace(key, static_cast<std::int32_t>(grid.coords.size()));
    if (inserted) grid.coords.emplace_back(key.x, key.y, key.z);
    grid.point_to_voxel[i] = it->second;
  }

  for (std::int32_t site = 0; site < grid.n_voxels(); ++site) {
    const Eigen::Vector3i& c = grid.coords[site];
    int o = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx, ++o) {
          auto it = index.find(CoordKey{c.x() + dx, c.y() + dy, c.z() + dz});
          if (it != index.end()) grid.neighbor_pairs[o].emplace_back(site, it->second);
        }
  }
  return grid;
}

template <typename T>
ad::Tensor<T> sparse_conv3d(const SparseVoxelGrid& grid, const ad::Tensor<T>& features,
                            const ad::Tensor<T>& weight, const ad::Tensor<T>& bias) {
  if (features.ndim() != 2) throw NumericError("sparse_conv3d: features must be (sites, c_in)");
  if (weight.ndim() != 3 || weight.shape()[0] != 27) throw NumericError("sparse_conv3d: weight must be (27, c_in, c_out)");
  const int sites = features.shape()[0];
  const int c_in = features.shape()[1];
  const int c_out = weight.shape()[2];
  if (weight.shape()[1] != c_in) throw NumericError("sparse_conv3d: channel mismatch");
  if (sites != grid.n_voxels()) throw NumericError("sparse_conv3d: feature rows differ from grid sites");
  if (bias.defined() && bias.numel() != c_out) throw NumericError("sparse_conv3d: bias size mismatch");

  std::vector<ad::Tensor<T>> parents{features, weight};
  if (bias.defined()) parents.push_back(bias);
  ad::Tensor<T> out = ad::Tensor<T>::zeros({sites, c_out});
  for (const auto& p : parents) {
    if (p.node->requires_grad) out.node->requires_grad = true;
    out.node->parents.push_back(p.node);
  }

  if (bias.defined())
    for (int i = 0; i < sites; ++i)
      for (int co = 0; co < c_out; ++co) out.value()[static_cast<std::size_t>(i) * c_out + co] = bias.value()[co];

  // Per-site accumulation runs in fixed offset order, so results do not depend
  // on voxel numbering (permutation equivariance of the head).
  for (int o = 0; o < 27; ++o) {
    const T* w_o = weight.value().data() + static_cast<std::size_t>(o) * c_in * c_out;
    for (const auto& [site, nb] : grid.neighbor_pairs[o]) {
      const T* f = features.value().data() + static_cast<std::size_t>(nb) * c_in;
      T* dst = out.value().data() + static_cast<std::size_t>(site) * c_out;
      for (int k = 0; k < c_in; ++k) {
        const T fv = f[k];
        const T* wr = w_o + static_cast<std::size_t>(k) * c_out;
        for (int co = 0; co < c_out; ++co) dst[co] += fv * wr[co];
      }
    }
  }

  if (out.node->requires_grad) {
    auto fn = features.node, wn = weight.node;
    auto bn = bias.defined() ? bias.node : nullptr;
    auto on = out.node.get();
    const auto* grid_pairs = &grid.neighbor_pairs;
    // The grid outlives the tape in all call sites (training step scope); copy
    // the pair lists to be safe.
    auto pairs = std::make_shared<std::array<std::vector<std::pair<std::int32_t, std::int32_t>>, 27>>(*grid_pairs);
    out.node->backward_fn = [fn, wn, bn, on, pairs, sites, c_in, c_out] {
      for (int o = 0; o < 27; ++o) {
        const T* w_o = wn->value.data() + static_cast<std::size_t>(o) * c_in * c_out;
        for (const auto& [site, nb] : (*pairs)[o]) {
          const T* dy = on->grad.data() + static_cast<std::size_t>(site) * c_out;
          if (fn->requires_grad) {
            T* gf = fn->ensure_grad().data() + static_cast<std::size_t>(nb) * c_in;
            for (int k = 0; k < c_in; ++k) {
              const T* wr = w_o + static_cast<std::size_t>(k) * c_out;
              T acc = T(0);
              for (int co = 0; co < c_out; ++co) acc += wr[co] * dy[co];
              gf[k] += acc;
            }
          }
          if (wn->requires_grad) {
            T* gw = wn->ensure_grad().data() + static_cast<std::size_t>(o) * c_in * c_out;
            const T* f = fn->value.data() + static_cast<std::size_t>(nb) * c_in;
            for (int k = 0; k < c_in; ++k) {
              const T fv = f[k];
              T* gr = gw + static_cast<std::size_t>(k) * c_out;
              for (int co = 0; co < c_out; ++co) gr[co] += fv * dy[co];
            }
          }
        }
      }
      if (bn && bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (int i = 0; i < sites; ++i)
          for (int co = 0; co < c_out; ++co) gb[co] += on->grad[static_cast<std::size_t>(i) * c_out + co];
      }
    };
  }
  return out;
}

template <typename T>
void SparseConv3dLayer<T>::init(const std::string& name, int c_in, int c_out, ad::Rng& rng) {
  weight.name = name + ".weight";
  weight.tensor = ad::Tensor<T>::zeros({27, c_in, c_out}, true);
  bias.name = name + ".bias";
  bias.tensor = ad::Tensor<T>::zeros({c_out}, true);
  bias.decay = false;
  nn::init_uniform(weight.tensor, 27 * c_in, rng);
  nn::init_uniform(bias.tensor, 27 * c_in, rng);
}

template <typename T>
ad::Tensor<T> SparseConv3dLayer<T>::forward(const SparseVoxelGrid& grid, const ad::Tensor<T>& features) const {
  if (stride != 1) throw ConfigError("sparse_conv3d: only stride 1 (submanifold) is supported");
  return sparse_conv3d(grid, features, weight.tensor, bias.tensor);
}

template <typename T>
void SparseConv3dLayer<T>::collect(nn::Params<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
PointHead<T>::PointHead(int channels, int classes, bool lite, std::uint64_t init_seed)
    : channels_(channels), classes_(classes), lite_(lite) {
  ad::Rng rng(init_seed);
  conv1.init("point_head.voxel1", channels, channels, rng);
  if (!lite_) conv2.init("point_head.voxel2", channels, channels, rng);
  point_fc1.init("point_head.point1", channels, channels, rng);
  if (!lite_) point_fc2.init("point_head.point2", channels, channels, rng);
  fuse1.init("point_head.fuse1", 2 * channels, channels, rng);
  fuse2.init("point_head.fuse2", channels, classes, rng);

  conv1.collect(params_);
  if (!lite_) conv2.collect(params_);
  point_fc1.collect(params_);
  if (!lite_) point_fc2.collect(params_);
  fuse1.collect(params_);
  fuse2.collect(params_);
}

template <typename T>
ad::Tensor<T> PointHead<T>::forward(const SparseVoxelGrid& grid, const ad::Tensor<T>& point_features) {
  const T slope = T(kLeakySlope);
  if (point_features.ndim() != 2 || point_features.shape()[1] != channels_)
    throw NumericError("point_head: feature shape mismatch");
  if (static_cast<int>(grid.point_to_voxel.size()) != point_features.shape()[0])
    throw NumericError("point_head: grid and feature row count differ");

  auto vf = ad::scatter_mean_rows(point_features, grid.point_to_voxel, grid.n_voxels());
  vf = ad::leaky_relu(conv1.forward(grid, vf), slope);
  if (!lite_) vf = ad::leaky_relu(conv2.forward(grid, vf), slope);
  auto per_point_voxel = ad::gather_rows(vf, grid.point_to_voxel);

  auto pf = ad::leaky_relu(point_fc1.forward(point_features), slope);
  if (!lite_) pf = ad::leaky_relu(point_fc2.forward(pf), slope);

  auto fused = ad::concat<T>({per_point_voxel, pf}, 1);
  auto h = ad::leaky_relu(fuse1.forward(fused), slope);
  return fuse2.forward(h);
}

template <typename T>
ad::Tensor<T> run_point_head(PointHead<T>& head, const PointCloud& cloud,
                             const std::vector<double>& image_features, int feature_channels,
                             const RangeImage& image, double voxel_size) {
  const std::vector<double> feats = back_project(image_features, feature_channels, image);
  std::vector<T> data(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) data[i] = static_cast<T>(feats[i]);
  auto tensor = ad::Tensor<T>::from_data({static_cast<int>(cloud.size()), feature_channels}, std::move(data));
  const SparseVoxelGrid grid = voxelize(cloud, voxel_size);
  return head.forward(grid, tensor);
}

#define MOS_PR_INSTANTIATE(T)                                                                            \
  template ad::Tensor<T> sparse_conv3d<T>(const SparseVoxelGrid&, const ad::Tensor<T>&,                  \
                                          const ad::Tensor<T>&, const ad::Tensor<T>&);                   \
  template struct SparseConv3dLayer<T>;                                                                  \
  template class PointHead<T>;                                                                           \
  template ad::Tensor<T> run_point_head<T>(PointHead<T>&, const PointCloud&, const std::vector<double>&, \
                                           int, const RangeImage&, double);

MOS_PR_INSTANTIATE(float)
MOS_PR_INSTANTIATE(double)

#undef MOS_PR_INSTANTIATE

}  // namespace mos

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lidarmos/nn_layers.hpp"

namespace mos {

// Topology is fully determined by this config; channel widths derive from
// base_channels (stage i uses base * 2^min(i,3)).
struct NetworkConfig {
  int base_channels = 16;
  int stages = 3;
  int n_res = 8;
  std::vector<int> attention_scales;  // 1-based stage indices; empty = every stage
  int head_classes = 2;
  int height = 64;
  int width = 256;
  double dropout_p = 0.2;
  bool use_dropout = true;
  std::string pool = "softpool";  // BlockB pooling: softpool | avgpool
  bool use_meta_kernel = true;
  int meta_hidden = 16;
  bool single_branch = false;  // concat residuals into the range input (ablation mode)

  // Point refinement settings used by the pipeline around the 2D net.
  std::string point_head = "full";  // none | full | lite
  double voxel_size = 0.25;

  int channels_at(int stage) const;  // stage 0 = stem
  bool attention_at(int stage) const;
  void validate() const;

  static NetworkConfig load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;
};

namespace nn {

template <typename T>
struct ResContextBlock {
  Conv2dLayer<T> shortcut_conv;  // 1x1
  Conv2dLayer<T> conv1;          // 3x3
  Conv2dLayer<T> conv2;          // 3x3 dilation 2
  BatchNorm2dLayer<T> bn1, bn2;

  void init(const std::string& name, int in_ch, int out_ch, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& x, bool training);
  void collect(Params<T>& out);
};

// Dilated residual block (BlockA / BlockE).
template <typename T>
struct ResBlock {
  Conv2dLayer<T> shortcut_conv;  // 1x1
  Conv2dLayer<T> conv1;          // 3x3
  Conv2dLayer<T> conv2;          // 3x3 dilation 2
  Conv2dLayer<T> conv3;          // 2x2 dilation 2
  Conv2dLayer<T> fuse;           // 1x1 on the concatenated branches
  BatchNorm2dLayer<T> bn1, bn2, bn3, bn4;

  void init(const std::string& name, int in_ch, int out_ch, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& x, bool training);
  void collect(Params<T>& out);
};

// Per-pixel 3x3 kernels generated by a shared MLP over relative coordinates;
// invalid neighbors contribute zero.
template <typename T>
struct MetaKernelLayer {
  Conv2dLayer<T> mlp1;  // 1x1, 3 -> hidden
  Conv2dLayer<T> mlp2;  // 1x1, hidden -> channels
  Conv2dLayer<T> agg;   // 1x1, 9*channels -> out

  void init(const std::string& name, int channels, int hidden, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& features, const ad::Tensor<T>& coords,
                        const ad::Tensor<T>& valid) const;
  void collect(Params<T>& out);
};

// Spatial sigmoid gate from motion features, then channel attention:
//   f_a'  = f_a * Sigmoid(Conv1x1(f_m))
//   f_a'' = f_a' * [Softmax(Conv1x1(APool(f_a'))) * C] + f_a
template <typename T>
struct MotionGuidedAttention {
  Conv2dLayer<T> spatial_conv;  // C_m -> 1
  Conv2dLayer<T> channel_conv;  // C -> C

  void init(const std::string& name, int channels, int motion_channels, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& f_a, const ad::Tensor<T>& f_m) const;
  void collect(Params<T>& out);
};

// PixelShuffle upsample + skip concat + convs (BlockC/BlockD).
template <typename T>
struct UpBlock {
  Conv2dLayer<T> conv1, conv2;
  BatchNorm2dLayer<T> bn1, bn2;

  void init(const std::string& name, int in_ch, int skip_ch, int out_ch, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& x, const ad::Tensor<T>& skip, bool training, double dropout_p,
                        ad::Rng* rng);
  void collect(Params<T>& out);
};

}  // namespace nn

// Dual-branch encoder/decoder over range and residual images.
template <typename T>
class MosNet {
 public:
  explicit MosNet(const NetworkConfig& config, std::uint64_t init_seed = 1);

  // range (N,5,H,W), residual (N,n_res,H,W), coords (N,3,H,W), valid (N,1,H,W).
  // Returns per-pixel class logits (N,classes,H,W). The final decoder feature
  // map (N,base,H,W) from the same forward is stored in last_features().
  ad::Tensor<T> forward(const ad::Tensor<T>& range_image, const ad::Tensor<T>& residuals,
                        const ad::Tensor<T>& coords, const ad::Tensor<T>& valid, bool training,
                        ad::Rng* rng = nullptr);

  const ad::Tensor<T>& last_features() const { return last_features_; }

  const NetworkConfig& config() const { return config_; }
  nn::Params<T>& parameters() { return params_; }
  const nn::Params<T>& parameters() const { return params_; }

  void set_trainable(bool trainable);
  std::uint64_t parameter_hash() const { return nn::hash_params(params_); }
  std::int64_t parameter_count() const;

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

  // Parameter table plus per-scale feature shapes, for the shape regression test.
  std::string describe() const;

 private:
  struct Impl;
  NetworkConfig config_;
  std::shared_ptr<Impl> impl_;
  nn::Params<T> params_;
  ad::Tensor<T> last_features_;
};

}  // namespace mos

#include "lidarmos/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mos {

using nlohmann::json;

namespace {
constexpr double kLeakySlope = 0.01;
}

// ------------------------------------------------------------- NetworkConfig

int NetworkConfig::channels_at(int stage) const {
  int e = std::min(stage, 3);
  return base_channels << e;
}

bool NetworkConfig::attention_at(int stage) const {
  if (single_branch) return false;
  if (attention_scales.empty()) return true;
  for (int s : attention_scales)
    if (s == stage) return true;
  return false;
}

void NetworkConfig::validate() const {
  if (base_channels < 4 || base_channels % 2 != 0)
    throw ConfigError("network: base_channels must be an even number >= 4");
  if (stages < 1 || stages > 5) throw ConfigError("network: stages must be in [1,5]");
  if (n_res < 1) throw ConfigError("network: n_res must be >= 1");
  if (head_classes != 2 && head_classes != 3) throw ConfigError("network: head_classes must be 2 or 3");
  if (height < 1 || width < 1) throw ConfigError("network: image size must be positive");
  const int div = 1 << stages;
  if (height % div != 0 || width % div != 0)
    throw ConfigError("network: image dims must be divisible by 2^stages");
  for (int i = 1; i <= stages; ++i)
    if (channels_at(i) % 4 != 0) throw ConfigError("network: stage channels must be divisible by 4");
  for (int s : attention_scales)
    if (s < 1 || s > stages) throw ConfigError("network: attention scale out of range");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("network: dropout_p must be in [0,1)");
  if (pool != "softpool" && pool != "avgpool") throw ConfigError("network: pool must be softpool or avgpool");
  if (point_head != "none" && point_head != "full" && point_head != "lite")
    throw ConfigError("network: point_head must be none, full or lite");
  if (!(voxel_size > 0)) throw ConfigError("network: voxel_size must be positive");
  if (meta_hidden < 1) throw ConfigError("network: meta_hidden must be >= 1");
}

static NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.stages = j.value("stages", c.stages);
  c.n_res = j.value("n_res", c.n_res);
  if (j.contains("attention_scales")) c.attention_scales = j["attention_scales"].get<std::vector<int>>();
  c.head_classes = j.value("head_classes", c.head_classes);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.use_dropout = j.value("use_dropout", c.use_dropout);
  c.pool = j.value("pool", c.pool);
  c.use_meta_kernel = j.value("use_meta_kernel", c.use_meta_kernel);
  c.meta_hidden = j.value("meta_hidden", c.meta_hidden);
  c.single_branch = j.value("single_branch", c.single_branch);
  c.point_head = j.value("point_head", c.point_head);
  c.voxel_size = j.value("voxel_size", c.voxel_size);
  c.validate();
  return c;
}

static json config_to_json(const NetworkConfig& c) {
  json j;
  j["base_channels"] = c.base_channels;
  j["stages"] = c.stages;
  j["n_res"] = c.n_res;
  j["attention_scales"] = c.attention_scales;
  j["head_classes"] = c.head_classes;
  j["height"] = c.height;
  j["width"] = c.width;
  j["dropout_p"] = c.dropout_p;
  j["use_dropout"] = c.use_dropout;
  j["pool"] = c.pool;
  j["use_meta_kernel"] = c.use_meta_kernel;
  j["meta_hidden"] = c.meta_hidden;
  j["single_branch"] = c.single_branch;
  j["point_head"] = c.point_head;
  j["voxel_size"] = c.voxel_size;
  return j;
}

NetworkConfig NetworkConfig::load(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw IoError("cannot open network config " + json_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("network config " + json_path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void NetworkConfig::save(const std::filesystem::path& json_path) const {
  std::ofstream f(json_path);
  if (!f) throw IoError("cannot write network config " + json_path.string());
  f << config_to_json(*this).dump(2) << "\n";
}

namespace nn {

// ------------------------------------------------------------------- layers

template <typename T>
void init_uniform(ad::Tensor<T>& t, int fan_in, ad::Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (T& v : t.value()) v = static_cast<T>((rng.uniform() * 2.0 - 1.0) * bound);
}

template <typename T>
void Conv2dLayer<T>::init(const std::string& name, int in_ch, int out_ch, int kh, int kw,
                          const ad::Conv2dOpts& o, ad::Rng& rng) {
  opts = o;
  weight.name = name + ".weight";
  weight.tensor = ad::Tensor<T>::zeros({out_ch, in_ch, kh, kw}, true);
  bias.name = name + ".bias";
  bias.tensor = ad::Tensor<T>::zeros({out_ch}, true);
  bias.decay = false;
  const int fan_in = in_ch * kh * kw;
  init_uniform(weight.tensor, fan_in, rng);
  init_uniform(bias.tensor, fan_in, rng);
}

template <typename T>
ad::Tensor<T> Conv2dLayer<T>::forward(const ad::Tensor<T>& x) const {
  return ad::conv2d(x, weight.tensor, bias.tensor, opts);
}

template <typename T>
void Conv2dLayer<T>::collect(Params<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
void LinearLayer<T>::init(const std::string& name, int in_dim, int out_dim, ad::Rng& rng) {
  weight.name = name + ".weight";
  weight.tensor = ad::Tensor<T>::zeros({out_dim, in_dim}, true);
  bias.name = name + ".bias";
  bias.tensor = ad::Tensor<T>::zeros({out_dim}, true);
  bias.decay = false;
  init_uniform(weight.tensor, in_dim, rng);
  init_uniform(bias.tensor, in_dim, rng);
}

template <typename T>
ad::Tensor<T> LinearLayer<T>::forward(const ad::Tensor<T>& x) const {
  return ad::linear(x, weight.tensor, bias.tensor);
}

template <typename T>
void LinearLayer<T>::collect(Params<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
void BatchNorm2dLayer<T>::init(const std::string& layer_name, int channels) {
  name = layer_name;
  gamma.name = name + ".gamma";
  gamma.tensor = ad::Tensor<T>::full({channels}, T(1));
  gamma.tensor.node->requires_grad = true;
  gamma.decay = false;
  beta.name = name + ".beta";
  beta.tensor = ad::Tensor<T>::zeros({channels}, true);
  beta.decay = false;
  running_mean.assign(channels, T(0));
  running_var.assign(channels, T(1));
}

template <typename T>
ad::Tensor<T> BatchNorm2dLayer<T>::forward(const ad::Tensor<T>& x, bool training) {
  return ad::batch_norm2d(x, gamma.tensor, beta.tensor, running_mean, running_var, training, momentum, eps);
}

template <typename T>
void BatchNorm2dLayer<T>::collect(Params<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void BatchNorm2dLayer<T>::save_buffers(Checkpoint& ckpt) const {
  const auto n = static_cast<std::uint32_t>(running_mean.size());
  if constexpr (std::is_same_v<T, float>) {
    ckpt.put_f32(name + ".running_mean", {n}, running_mean.data(), running_mean.size());
    ckpt.put_f32(name + ".running_var", {n}, running_var.data(), running_var.size());
  } else {
    ckpt.put_f64(name + ".running_mean", {n}, running_mean.data(), running_mean.size());
    ckpt.put_f64(name + ".running_var", {n}, running_var.data(), running_var.size());
  }
}

template <typename T>
void BatchNorm2dLayer<T>::load_buffers(const Checkpoint& ckpt) {
  if constexpr (std::is_same_v<T, float>) {
    running_mean = ckpt.get_f32(name + ".running_mean");
    running_var = ckpt.get_f32(name + ".running_var");
  } else {
    running_mean = ckpt.get_f64(name + ".running_mean");
    running_var = ckpt.get_f64(name + ".running_var");
  }
}

template <typename T>
void save_params(const Params<T>& params, Checkpoint& ckpt) {
  for (const auto* p : params) {
    std::vector<std::uint32_t> shape;
    for (int d : p->tensor.shape()) shape.push_back(static_cast<std::uint32_t>(d));
    if constexpr (std::is_same_v<T, float>)
      ckpt.put_f32(p->name, shape, p->tensor.value().data(), p->tensor.value().size());
    else
      ckpt.put_f64(p->name, shape, p->tensor.value().data(), p->tensor.value().size());
  }
}

template <typename T>
void load_params(const Params<T>& params, const Checkpoint& ckpt) {
  for (auto* p : params) {
    std::vector<T> data;
    if constexpr (std::is_same_v<T, float>)
      data = ckpt.get_f32(p->name);
    else
      data = ckpt.get_f64(p->name);
    if (static_cast<std::int64_t>(data.size()) != p->tensor.numel())
      throw FormatError("checkpoint: size mismatch for '" + p->name + "'");
    p->tensor.value() = std::move(data);
  }
}

template <typename T>
std::uint64_t hash_params(const Params<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params) feed(p->tensor.value().data(), p->tensor.value().size() * sizeof(T));
  return h;
}

// ------------------------------------------------------------------- blocks

template <typename T>
void ResContextBlock<T>::init(const std::string& name, int in_ch, int out_ch, ad::Rng& rng) {
  shortcut_conv.init(name + ".shortcut", in_ch, out_ch, 1, 1, {}, rng);
  ad::Conv2dOpts o3;
  o3.pad_h = 1;
  o3.pad_w = 1;
  o3.circular_w = true;
  conv1.init(name + ".conv1", out_ch, out_ch, 3, 3, o3, rng);
  ad::Conv2dOpts o3d;
  o3d.pad_h = 2;
  o3d.pad_w = 2;
  o3d.dilation_h = 2;
  o3d.dilation_w = 2;
  o3d.circular_w = true;
  conv2.init(name + ".conv2", out_ch, out_ch, 3, 3, o3d, rng);
  bn1.init(name + ".bn1", out_ch);
  bn2.init(name + ".bn2", out_ch);
}

template <typename T>
ad::Tensor<T> ResContextBlock<T>::forward(const ad::Tensor<T>& x, bool training) {
  const T slope = T(kLeakySlope);
  auto shortcut = ad::leaky_relu(shortcut_conv.forward(x), slope);
  auto a = bn1.forward(ad::leaky_relu(conv1.forward(shortcut), slope), training);
  a = bn2.forward(ad::leaky_relu(conv2.forward(a), slope), training);
  return ad::add(shortcut, a);
}

template <typename T>
void ResContextBlock<T>::collect(Params<T>& out) {
  shortcut_conv.collect(out);
  conv1.collect(out);
  conv2.collect(out);
  bn1.collect(out);
  bn2.collect(out);
}

template <typename T>
void ResBlock<T>::init(const std::string& name, int in_ch, int out_ch, ad::Rng& rng) {
  shortcut_conv.init(name + ".shortcut", in_ch, out_ch, 1, 1, {}, rng);
  ad::Conv2dOpts o3;
  o3.pad_h = 1;
  o3.pad_w = 1;
  o3.circular_w = true;
  conv1.init(name + ".conv1", in_ch, out_ch, 3, 3, o3, rng);
  ad::Conv2dOpts o3d;
  o3d.pad_h = 2;
  o3d.pad_w = 2;
  o3d.dilation_h = 2;
  o3d.dilation_w = 2;
  o3d.circular_w = true;
  conv2.init(name + ".conv2", out_ch, out_ch, 3, 3, o3d, rng);
  ad::Conv2dOpts o2d;  // 2x2 kernel, dilation 2, pad 1 keeps dims
  o2d.pad_h = 1;
  o2d.pad_w = 1;
  o2d.dilation_h = 2;
  o2d.dilation_w = 2;
  o2d.circular_w = true;
  conv3.init(name + ".conv3", out_ch, out_ch, 2, 2, o2d, rng);
  fuse.init(name + ".fuse", out_ch * 3, out_ch, 1, 1, {}, rng);
  bn1.init(name + ".bn1", out_ch);
  bn2.init(name + ".bn2", out_ch);
  bn3.init(name + ".bn3", out_ch);
  bn4.init(name + ".bn4", out_ch);
}

template <typename T>
ad::Tensor<T> ResBlock<T>::forward(const ad::Tensor<T>& x, bool training) {
  const T slope = T(kLeakySlope);
  auto shortcut = ad::leaky_relu(shortcut_conv.forward(x), slope);
  auto a1 = bn1.forward(ad::leaky_relu(conv1.forward(x), slope), training);
  auto a2 = bn2.forward(ad::leaky_relu(conv2.forward(a1), slope), training);
  auto a3 = bn3.forward(ad::leaky_relu(conv3.forward(a2), slope), training);
  auto fused = bn4.forward(ad::leaky_relu(fuse.forward(ad::concat<T>({a1, a2, a3}, 1)), slope), training);
  return ad::add(shortcut, fused);
}

template <typename T>
void ResBlock<T>::collect(Params<T>& out) {
  shortcut_conv.collect(out);
  conv1.collect(out);
  conv2.collect(out);
  conv3.collect(out);
  fuse.collect(out);
  bn1.collect(out);
  bn2.collect(out);
  bn3.collect(out);
  bn4.collect(out);
}

template <typename T>
void MetaKernelLayer<T>::init(const std::string& name, int channels, int hidden, ad::Rng& rng) {
  mlp1.init(name + ".mlp1", 3, hidden, 1, 1, {}, rng);
  mlp2.init(name + ".mlp2", hidden, channels, 1, 1, {}, rng);
  agg.init(name + ".agg", 9 * channels, channels, 1, 1, {}, rng);
}

template <typename T>
ad::Tensor<T> MetaKernelLayer<T>::forward(const ad::Tensor<T>& features, const ad::Tensor<T>& coords,
                                          const ad::Tensor<T>& valid) const {
  const T slope = T(kLeakySlope);
  std::vector<ad::Tensor<T>> neighbors;
  neighbors.reserve(9);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      auto f_sh = ad::spatial_shift(features, dy, dx, true);
      auto c_sh = ad::spatial_shift(coords, dy, dx, true);
      auto v_sh = ad::spatial_shift(valid, dy, dx, true);
      auto mask = ad::mul(v_sh, valid);
      auto rel = ad::scale_spatial(ad::sub(c_sh, coords), mask);
      auto wj = mlp2.forward(ad::leaky_relu(mlp1.forward(rel), slope));
      neighbors.push_back(ad::scale_spatial(ad::mul(wj, f_sh), mask));
    }
  return agg.forward(ad::concat(neighbors, 1));
}

template <typename T>
void MetaKernelLayer<T>::collect(Params<T>& out) {
  mlp1.collect(out);
  mlp2.collect(out);
  agg.collect(out);
}

template <typename T>
void MotionGuidedAttention<T>::init(const std::string& name, int channels, int motion_channels,
                                    ad::Rng& rng) {
  spatial_conv.init(name + ".spatial", motion_channels, 1, 1, 1, {}, rng);
  channel_conv.init(name + ".channel", channels, channels, 1, 1, {}, rng);
}

template <typename T>
ad::Tensor<T> MotionGuidedAttention<T>::forward(const ad::Tensor<T>& f_a, const ad::Tensor<T>& f_m) const {
  const int channels = f_a.shape()[1];
  auto gate = ad::sigmoid(spatial_conv.forward(f_m));
  auto fa_prime = ad::scale_spatial(f_a, gate);
  auto pooled = ad::global_avg_pool(fa_prime);
  auto attn = ad::scalar_mul(ad::softmax(channel_conv.forward(pooled), 1), static_cast<T>(channels));
  return ad::add(ad::scale_channels(fa_prime, attn), f_a);
}

template <typename T>
void MotionGuidedAttention<T>::collect(Params<T>& out) {
  spatial_conv.collect(out);
  channel_conv.collect(out);
}

template <typename T>
void UpBlock<T>::init(const std::string& name, int in_ch, int skip_ch, int out_ch, ad::Rng& rng) {
  ad::Conv2dOpts o3;
  o3.pad_h = 1;
  o3.pad_w = 1;
  o3.circular_w = true;
  conv1.init(name + ".conv1", in_ch / 4 + skip_ch, out_ch, 3, 3, o3, rng);
  conv2.init(name + ".conv2", out_ch, out_ch, 3, 3, o3, rng);
  bn1.init(name + ".bn1", out_ch);
  bn2.init(name + ".bn2", out_ch);
}

template <typename T>
ad::Tensor<T> UpBlock<T>::forward(const ad::Tensor<T>& x, const ad::Tensor<T>& skip, bool training,
                                  double dropout_p, ad::Rng* rng) {
  const T slope = T(kLeakySlope);
  auto up = ad::pixel_shuffle(x, 2);
  if (training && dropout_p > 0 && rng) up = ad::dropout(up, static_cast<T>(dropout_p), training, *rng);
  auto a = ad::concat<T>({up, skip}, 1);
  a = bn1.forward(ad::leaky_relu(conv1.forward(a), slope), training);
  a = bn2.forward(ad::leaky_relu(conv2.forward(a), slope), training);
  if (training && dropout_p > 0 && rng) a = ad::dropout(a, static_cast<T>(dropout_p), training, *rng);
  return a;
}

template <typename T>
void UpBlock<T>::collect(Params<T>& out) {
  conv1.collect(out);
  conv2.collect(out);
  bn1.collect(out);
  bn2.collect(out);
}

#define MOS_NN_INSTANTIATE(T)                                                       \
  template void init_uniform<T>(ad::Tensor<T>&, int, ad::Rng&);                     \
  template struct Conv2dLayer<T>;                                                   \
  template struct LinearLayer<T>;                                                   \
  template struct BatchNorm2dLayer<T>;                                              \
  template struct ResContextBlock<T>;                                               \
  template struct ResBlock<T>;                                                      \
  template struct MetaKernelLayer<T>;                                               \
  template struct MotionGuidedAttention<T>;                                         \
  template struct UpBlock<T>;                                                       \
  template void save_params<T>(const Params<T>&, Checkpoint&);                      \
  template void load_params<T>(const Params<T>&, const Checkpoint&);                \
  template std::uint64_t hash_params<T>(const Params<T>&);

MOS_NN_INSTANTIATE(float)
MOS_NN_INSTANTIATE(double)

#undef MOS_NN_INSTANTIATE

}  // namespace nn

// ------------------------------------------------------------------- MosNet

template <typename T>
struct MosNet<T>::Impl {
  nn::ResContextBlock<T> rc1, rc2;
  nn::MetaKernelLayer<T> meta;
  nn::ResContextBlock<T> enc_m_rc;
  std::vector<nn::ResBlock<T>> enc_a, enc_m;
  std::vector<std::unique_ptr<nn::MotionGuidedAttention<T>>> attn;
  std::vector<nn::UpBlock<T>> ups;
  nn::Conv2dLayer<T> head;
  std::vector<nn::BatchNorm2dLayer<T>*> bns;
};

template <typename T>
MosNet<T>::MosNet(const NetworkConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  impl_ = std::make_shared<Impl>();
  ad::Rng rng(init_seed);

  const int base = config_.base_channels;
  const int in_a = config_.single_branch ? 5 + config_.n_res : 5;

  impl_->rc1.init("enc_a.rc1", in_a, base, rng);
  if (config_.use_meta_kernel) impl_->meta.init("enc_a.meta", base, config_.meta_hidden, rng);
  impl_->rc2.init("enc_a.rc2", base, base, rng);
  if (!config_.single_branch) impl_->enc_m_rc.init("enc_m.rc", config_.n_res, base, rng);

  for (int i = 1; i <= config_.stages; ++i) {
    const int cin = config_.channels_at(i - 1), cout = config_.channels_at(i);
    impl_->enc_a.emplace_back();
    impl_->enc_a.back().init("enc_a.block" + std::to_string(i), cin, cout, rng);
    if (!config_.single_branch) {
      impl_->enc_m.emplace_back();
      impl_->enc_m.back().init("enc_m.block" + std::to_string(i), cin, cout, rng);
      if (config_.attention_at(i)) {
        auto mga = std::make_unique<nn::MotionGuidedAttention<T>>();
        mga->init("attn" + std::to_string(i), cout, cout, rng);
        impl_->attn.push_back(std::move(mga));
      } else {
        impl_->attn.push_back(nullptr);
      }
    }
  }

  for (int i = 1; i <= config_.stages; ++i) {
    const int cin = config_.channels_at(i), cskip = config_.channels_at(i), cout = config_.channels_at(i - 1);
    impl_->ups.emplace_back();
    impl_->ups.back().init("dec.up" + std::to_string(i), cin, cskip, cout, rng);
  }

  impl_->head.init("head", base, config_.head_classes, 1, 1, {}, rng);

  // Fixed collection order defines the checkpoint layout and the freeze hash.
  impl_->rc1.collect(params_);
  if (config_.use_meta_kernel) impl_->meta.collect(params_);
  impl_->rc2.collect(params_);
  if (!config_.single_branch) impl_->enc_m_rc.collect(params_);
  for (auto& b : impl_->enc_a) b.collect(params_);
  for (auto& b : impl_->enc_m) b.collect(params_);
  for (auto& a : impl_->attn)
    if (a) a->collect(params_);
  for (auto& u : impl_->ups) u.collect(params_);
  impl_->head.collect(params_);

  auto add_rc = [this](nn::ResContextBlock<T>& b) {
    impl_->bns.push_back(&b.bn1);
    impl_->bns.push_back(&b.bn2);
  };
  auto add_res = [this](nn::ResBlock<T>& b) {
    impl_->bns.push_back(&b.bn1);
    impl_->bns.push_back(&b.bn2);
    impl_->bns.push_back(&b.bn3);
    impl_->bns.push_back(&b.bn4);
  };
  add_rc(impl_->rc1);
  add_rc(impl_->rc2);
  if (!config_.single_branch) add_rc(impl_->enc_m_rc);
  for (auto& b : impl_->enc_a) add_res(b);
  for (auto& b : impl_->enc_m) add_res(b);
  for (auto& u : impl_->ups) {
    impl_->bns.push_back(&u.bn1);
    impl_->bns.push_back(&u.bn2);
  }
}

template <typename T>
ad::Tensor<T> MosNet<T>::forward(const ad::Tensor<T>& range_image, const ad::Tensor<T>& residuals,
                                 const ad::Tensor<T>& coords, const ad::Tensor<T>& valid, bool training,
                                 ad::Rng* rng) {
  if (training && config_.use_dropout && config_.dropout_p > 0 && rng == nullptr)
    throw NumericError("forward: training with dropout requires an rng");

  auto pool = [this](const ad::Tensor<T>& x) {
    return config_.pool == "softpool" ? ad::soft_pool2d(x, 2, 2) : ad::avg_pool2d(x, 2, 2);
  };
  auto maybe_dropout = [&](ad::Tensor<T> x) {
    if (training && config_.use_dropout && config_.dropout_p > 0)
      return ad::dropout(x, static_cast<T>(config_.dropout_p), training, *rng);
    return x;
  };

  ad::Tensor<T> input_a = range_image;
  if (config_.single_branch) input_a = ad::concat<T>({range_image, residuals}, 1);

  auto xa = impl_->rc1.forward(input_a, training);
  if (config_.use_meta_kernel) xa = impl_->meta.forward(xa, coords, valid);
  xa = impl_->rc2.forward(xa, training);

  ad::Tensor<T> xm;
  if (!config_.single_branch) xm = impl_->enc_m_rc.forward(residuals, training);

  std::vector<ad::Tensor<T>> skips;
  for (int i = 0; i < config_.stages; ++i) {
    auto skip = impl_->enc_a[i].forward(xa, training);
    skips.push_back(skip);
    xa = maybe_dropout(pool(skip));
    if (!config_.single_branch) {
      xm = maybe_dropout(pool(impl_->enc_m[i].forward(xm, training)));
      if (impl_->attn[i]) xa = impl_->attn[i]->forward(xa, xm);
    }
  }

  auto d = xa;
  for (int i = config_.stages - 1; i >= 0; --i)
    d = impl_->ups[i].forward(d, skips[i], training, config_.use_dropout ? config_.dropout_p : 0.0, rng);

  last_features_ = d;
  return impl_->head.forward(d);
}

template <typename T>
void MosNet<T>::set_trainable(bool trainable) {
  for (auto* p : params_) {
    p->trainable = trainable;
    p->tensor.node->requires_grad = trainable;
  }
}

template <typename T>
std::int64_t MosNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto* p : params_) n += p->tensor.numel();
  return n;
}

template <typename T>
void MosNet<T>::save(Checkpoint& ckpt) const {
  nn::save_params(params_, ckpt);
  for (const auto* bn : impl_->bns) bn->save_buffers(ckpt);
  ckpt.put_string("net/config", config_to_json(config_).dump());
}

template <typename T>
void MosNet<T>::load(const Checkpoint& ckpt) {
  nn::load_params(params_, ckpt);
  for (auto* bn : impl_->bns) bn->load_buffers(ckpt);
}

template <typename T>
std::string MosNet<T>::describe() const {
  std::ostringstream os;
  os << "parameters:\n";
  for (const auto* p : params_) {
    os << "  " << p->name << " [";
    for (std::size_t i = 0; i < p->tensor.shape().size(); ++i)
      os << (i ? "x" : "") << p->tensor.shape()[i];
    os << "] " << p->tensor.numel() << "\n";
  }
  os << "total parameters: " << parameter_count() << "\n";
  os << "feature shapes (batch 1):\n";
  os << "  input range: 1x" << (config_.single_branch ? 5 + config_.n_res : 5) << "x" << config_.height << "x"
     << config_.width << "\n";
  os << "  stem: 1x" << config_.base_channels << "x" << config_.height << "x" << config_.width << "\n";
  for (int i = 1; i <= config_.stages; ++i) {
    const int h = config_.height >> i, w = config_.width >> i;
    os << "  enc stage " << i << ": 1x" << config_.channels_at(i) << "x" << h << "x" << w;
    if (config_.attention_at(i)) os << " (fused)";
    os << "\n";
  }
  for (int i = config_.stages - 1; i >= 0; --i) {
    const int h = config_.height >> i, w = config_.width >> i;
    os << "  dec stage " << (i + 1) << ": 1x" << config_.channels_at(i) << "x" << h << "x" << w << "\n";
  }
  os << "  logits: 1x" << config_.head_classes << "x" << config_.height << "x" << config_.width << "\n";
  return os.str();
}

template class MosNet<float>;
template class MosNet<double>;

}  // namespace mos

#pragma once

#include <string>
#include <vector>

#include "lidarmos/autodiff.hpp"
#include "lidarmos/checkpoint.hpp"

namespace mos::nn {

template <typename T>
using Params = std::vector<ad::Parameter<T>*>;

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for weights and biases.
template <typename T>
void init_uniform(ad::Tensor<T>& t, int fan_in, ad::Rng& rng);

template <typename T>
struct Conv2dLayer {
  ad::Parameter<T> weight;  // (co, ci, kh, kw)
  ad::Parameter<T> bias;    // (co)
  ad::Conv2dOpts opts;

  void init(const std::string& name, int in_ch, int out_ch, int kh, int kw, const ad::Conv2dOpts& o,
            ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
  void collect(Params<T>& out);
};

template <typename T>
struct LinearLayer {
  ad::Parameter<T> weight;  // (out, in)
  ad::Parameter<T> bias;    // (out)

  void init(const std::string& name, int in_dim, int out_dim, ad::Rng& rng);
  ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
  void collect(Params<T>& out);
};

template <typename T>
struct BatchNorm2dLayer {
  ad::Parameter<T> gamma;  // decay disabled
  ad::Parameter<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  std::string name;

  void init(const std::string& layer_name, int channels);
  ad::Tensor<T> forward(const ad::Tensor<T>& x, bool training);
  void collect(Params<T>& out);

  void save_buffers(Checkpoint& ckpt) const;
  void load_buffers(const Checkpoint& ckpt);
};

// Checkpoint helpers shared by every module with parameters.
template <typename T>
void save_params(const Params<T>& params, Checkpoint& ckpt);
template <typename T>
void load_params(const Params<T>& params, const Checkpoint& ckpt);

// FNV-1a over the raw value bytes; order follows the parameter list.
template <typename T>
std::uint64_t hash_params(const Params<T>& params);

}  // namespace mos::nn

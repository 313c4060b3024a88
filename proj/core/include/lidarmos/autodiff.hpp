#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lidarmos/errors.hpp"

namespace mos::ad {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  std::uint64_t integer(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

// Dense tensor with a reverse-mode tape. Values are stored row-major; image
// tensors use NCHW. Gradients accumulate on leaves across backward() calls;
// interior gradients are recomputed per call.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // lazily sized
    bool requires_grad = false;
    std::function<void()> backward_fn;  // empty on leaves
    std::vector<std::shared_ptr<Node>> parents;

    std::vector<T>& ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node = std::make_shared<Node>();
    t.node->shape = std::move(shape);
    t.node->value.assign(static_cast<std::size_t>(shape_numel(t.node->shape)), T(0));
    t.node->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (T& x : t.node->value) x = v;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw NumericError("tensor: data size does not match shape");
    Tensor t;
    t.node = std::make_shared<Node>();
    t.node->shape = std::move(shape);
    t.node->value = std::move(data);
    t.node->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return static_cast<bool>(node); }
  const Shape& shape() const { return node->shape; }
  int ndim() const { return static_cast<int>(node->shape.size()); }
  int dim(int i) const { return node->shape[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node->value.size()); }

  std::vector<T>& value() { return node->value; }
  const std::vector<T>& value() const { return node->value; }
  std::vector<T>& grad() { return node->ensure_grad(); }
  bool has_grad() const { return !node->grad.empty(); }
  bool requires_grad() const { return node && node->requires_grad; }

  T item() const {
    if (numel() != 1) throw NumericError("tensor: item() on non-scalar");
    return node->value[0];
  }

  void zero_grad() {
    if (node && !node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), T(0));
  }

  std::shared_ptr<Node> node;
};

// Accumulates dLoss/dX into the grad of every reachable leaf that requires
// grad. Interior grads are zeroed first, so repeated calls double only leaves.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scalar_mul(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scalar_add(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

// Normalizes to sum 1 along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);

// Inverted dropout; identity when not training.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, T p, bool training, Rng& rng);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// ---- dense linear algebra ----
// x (n,in), w (out,in), b (out); b may be default-constructed to skip.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// ---- NCHW image ops ----
struct Conv2dOpts {
  int stride_h = 1, stride_w = 1;
  int dilation_h = 1, dilation_w = 1;
  int pad_h = 0, pad_w = 0;
  bool circular_w = false;  // azimuth wraps
};

// Cross-correlation, x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co) optional.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Conv2dOpts& opts);

// Non-overlapping windows; window must divide the spatial dims.
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, int kh, int kw);

// SoftPool: sum(x*e^x)/sum(e^x) per window (max-shifted for stability).
template <typename T> Tensor<T> soft_pool2d(const Tensor<T>& x, int kh, int kw);

// Spatial average to (N,C,1,1).
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

// Depth-to-space, (N,C*r*r,H,W) -> (N,C,H*r,W*r).
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);

// out[v][u] = in[v+dy][u+dx]; rows out of range give 0, columns wrap if wrap_w.
template <typename T> Tensor<T> spatial_shift(const Tensor<T>& x, int dy, int dx, bool wrap_w);

// Broadcast multiplies: s (N,C,1,1) over space, m (N,1,H,W) over channels.
template <typename T> Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);
template <typename T> Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m);

// Batch norm over (N,H,W) per channel; running stats are plain buffers owned by
// the caller and only mutated when training.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5));

// ---- row ops ((rows, cols) matrices) ----
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int32_t>& idx);

// out[r] = mean of x rows m with row_of_input[m] == r. Members are summed in a
// canonical order (sorted by row content) so the result is independent of the
// input row order.
template <typename T>
Tensor<T> scatter_mean_rows(const Tensor<T>& x, const std::vector<std::int32_t>& row_of_input, int out_rows);

// Gathers per-item channel vectors from (N,C,H,W); items are n*H*W + v*W + u.
template <typename T> Tensor<T> gather_pixels(const Tensor<T>& x, const std::vector<std::int64_t>& items);

// ---- parameters ----
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
  bool decay = true;  // weight decay applies (off for norm scales and biases)
};

}  // namespace mos::ad

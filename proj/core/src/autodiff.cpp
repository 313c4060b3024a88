#include "lidarmos/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace mos::ad {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
using NodePtr = std::shared_ptr<typename Tensor<T>::Node>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<Tensor<T>> parents) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  for (const auto& p : parents) {
    if (p.defined() && p.node->requires_grad) out.node->requires_grad = true;
    if (p.defined()) out.node->parents.push_back(p.node);
  }
  return out;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) throw NumericError(std::string(op) + ": shape mismatch");
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) throw NumericError("backward: loss must be a defined scalar");

  using Node = typename Tensor<T>::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are per-call scratch; only leaves accumulate across calls.
  for (Node* n : order)
    if (n->backward_fn) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
  loss.node->ensure_grad()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a, b});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];
  if (out.node->requires_grad) {
    auto an = a.node, bn = b.node, on = out.node.get();
    out.node->backward_fn = [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a, b});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (out.node->requires_grad) {
    auto an = a.node, bn = b.node, on = out.node.get();
    out.node->backward_fn = [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a, b});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (out.node->requires_grad) {
    auto an = a.node, bn = b.node, on = out.node.get();
    out.node->backward_fn = [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->value[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on, s] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * s;
    };
  }
  return out;
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& a, T s) {
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + s;
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T(0));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope) {
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a.value()[i];
    out.value()[i] = x > T(0) ? x : negative_slope * x;
  }
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on, negative_slope] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += on->grad[i] * (an->value[i] > T(0) ? T(1) : negative_slope);
    };
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = T(1) / (T(1) + std::exp(-a.value()[i]));
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = on->value[i];
        g[i] += on->grad[i] * y * (T(1) - y);
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd) throw NumericError("softmax: axis out of range");
  const auto& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < nd; ++i) inner *= sh[i];
  const std::int64_t k = sh[axis];

  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * k * inner + in;
      T m = a.value()[base];
      for (std::int64_t j = 1; j < k; ++j) m = std::max(m, a.value()[base + j * inner]);
      T denom = T(0);
      for (std::int64_t j = 0; j < k; ++j) {
        const T e = std::exp(a.value()[base + j * inner] - m);
        out.value()[base + j * inner] = e;
        denom += e;
      }
      for (std::int64_t j = 0; j < k; ++j) out.value()[base + j * inner] /= denom;
    }

  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on, outer, inner, k] {
      auto& g = an->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * k * inner + in;
          T dot = T(0);
          for (std::int64_t j = 0; j < k; ++j) dot += on->grad[base + j * inner] * on->value[base + j * inner];
          for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t idx = base + j * inner;
            g[idx] += on->value[idx] * (on->grad[idx] - dot);
          }
        }
    };
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T p, bool training, Rng& rng) {
  if (!training || p <= T(0)) return a;
  if (p >= T(1)) throw NumericError("dropout: p must be < 1");

  const std::size_t n = a.value().size();
  std::vector<T> mask(n);
  const T keep = T(1) - p;
  for (std::size_t i = 0; i < n; ++i) mask[i] = (rng.uniform() < static_cast<double>(p)) ? T(0) : T(1) / keep;

  Tensor<T> out = make_result(a.shape(), std::vector<Tensor<T>>{a});
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * mask[i];
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on, mask = std::move(mask)] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * mask[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw NumericError("concat: no inputs");
  const int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) throw NumericError("concat: axis out of range");

  Shape out_shape = xs[0].shape();
  std::int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw NumericError("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && x.shape()[i] != out_shape[i]) throw NumericError("concat: shape mismatch");
    axis_total += x.shape()[axis];
  }
  out_shape[axis] = static_cast<int>(axis_total);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= out_shape[i];

  Tensor<T> out = make_result(out_shape, xs);
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const std::int64_t ka = x.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(x.value().data() + o * ka * inner, ka * inner,
                  out.value().data() + (o * axis_total + offset) * inner);
    offset += ka;
  }

  if (out.node->requires_grad) {
    std::vector<NodePtr<T>> parents;
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& x : xs) {
      parents.push_back(x.node);
      offsets.push_back(off);
      off += x.shape()[axis];
    }
    auto on = out.node.get();
    out.node->backward_fn = [parents, offsets, on, outer, inner, axis_total, axis] {
      for (std::size_t pi = 0; pi < parents.size(); ++pi) {
        auto& pn = parents[pi];
        if (!pn->requires_grad) continue;
        auto& g = pn->ensure_grad();
        const std::int64_t ka = pn->shape[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = on->grad.data() + (o * axis_total + offsets[pi]) * inner;
          T* dst = g.data() + o * ka * inner;
          for (std::int64_t i = 0; i < ka * inner; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw NumericError("reshape: element count mismatch");
  Tensor<T> out = make_result(std::move(shape), std::vector<Tensor<T>>{a});
  out.value() = a.value();
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = make_result(Shape{1}, std::vector<Tensor<T>>{a});
  T acc = T(0);
  for (T v : a.value()) acc += v;
  out.value()[0] = acc;
  if (out.node->requires_grad) {
    auto an = a.node;
    auto on = out.node.get();
    out.node->backward_fn = [an, on] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[0];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  return scalar_mul(sum(a), inv);
}

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[1])
    throw NumericError("linear: shape mismatch");
  const int n = x.shape()[0], in = x.shape()[1], outc = w.shape()[0];
  if (b.defined() && b.numel() != outc) throw NumericError("linear: bias size mismatch");

  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  Tensor<T> out = make_result(Shape{n, outc}, parents);

  // Plain fixed-order loops: keeps per-row results independent of row order
  // (needed for the point head's permutation equivariance).
  const T* xb = x.value().data();
  const T* wb = w.value().data();
  T* ob = out.value().data();
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < outc; ++o) {
      T acc = b.defined() ? b.value()[o] : T(0);
      const T* xr = xb + static_cast<std::size_t>(i) * in;
      const T* wr = wb + static_cast<std::size_t>(o) * in;
      for (int k2 = 0; k2 < in; ++k2) acc += xr[k2] * wr[k2];
      ob[static_cast<std::size_t>(i) * outc + o] = acc;
    }

  if (out.node->requires_grad) {
    auto xn = x.node, wn = w.node;
    auto bn2 = b.defined() ? b.node : nullptr;
    auto on = out.node.get();
    out.node->backward_fn = [xn, wn, bn2, on, n, in, outc] {
      const T* dy = on->grad.data();
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < outc; ++o) {
            const T d = dy[static_cast<std::size_t>(i) * outc + o];
            const T* wr = wn->value.data() + static_cast<std::size_t>(o) * in;
            T* gr = gx.data() + static_cast<std::size_t>(i) * in;
            for (int k2 = 0; k2 < in; ++k2) gr[k2] += d * wr[k2];
          }
      }
      if (wn->requires_grad) {
        auto& gw = wn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < outc; ++o) {
            const T d = dy[static_cast<std::size_t>(i) * outc + o];
            const T* xr = xn->value.data() + static_cast<std::size_t>(i) * in;
            T* gr = gw.data() + static_cast<std::size_t>(o) * in;
            for (int k2 = 0; k2 < in; ++k2) gr[k2] += d * xr[k2];
          }
      }
      if (bn2 && bn2->requires_grad) {
        auto& gb = bn2->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < outc; ++o) gb[o] += dy[static_cast<std::size_t>(i) * outc + o];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------- conv2d

namespace {

struct ConvDims {
  int n, ci, h, w, co, kh, kw, ho, wo;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Conv2dOpts& o) {
  if (x.ndim() != 4 || w.ndim() != 4) throw NumericError("conv2d: expected 4-d input and kernel");
  if (x.shape()[1] != w.shape()[1]) throw NumericError("conv2d: channel mismatch");
  if (o.dilation_h < 1 || o.dilation_w < 1) throw NumericError("conv2d: dilation must be >= 1");
  ConvDims d;
  d.n = x.shape()[0];
  d.ci = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.co = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  const int eff_kh = o.dilation_h * (d.kh - 1) + 1;
  const int eff_kw = o.dilation_w * (d.kw - 1) + 1;
  d.ho = (d.h + 2 * o.pad_h - eff_kh) / o.stride_h + 1;
  d.wo = (d.w + 2 * o.pad_w - eff_kw) / o.stride_w + 1;
  if (d.ho < 1 || d.wo < 1) throw NumericError("conv2d: output would be empty");
  return d;
}

// col: (ci*kh*kw) x (ho*wo) for one batch item.
template <typename T>
void im2col(const T* x, const ConvDims& d, const Conv2dOpts& o, T* col) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t p = static_cast<std::int64_t>(d.ho) * d.wo;
  std::int64_t row = 0;
  for (int ci = 0; ci < d.ci; ++ci)
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj, ++row) {
        T* dst = col + row * p;
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * o.stride_h - o.pad_h + ki * o.dilation_h;
          if (ih < 0 || ih >= d.h) {
            std::fill(dst, dst + d.wo, T(0));
            dst += d.wo;
            continue;
          }
          const T* src = x + ci * plane + static_cast<std::int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.wo; ++ow) {
            int iw = ow * o.stride_w - o.pad_w + kj * o.dilation_w;
            if (o.circular_w) {
              iw %= d.w;
              if (iw < 0) iw += d.w;
              *dst++ = src[iw];
            } else {
              *dst++ = (iw >= 0 && iw < d.w) ? src[iw] : T(0);
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, const Conv2dOpts& o, T* gx) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  std::int64_t row = 0;
  for (int ci = 0; ci < d.ci; ++ci)
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj, ++row) {
        const T* src = col + row * static_cast<std::int64_t>(d.ho) * d.wo;
        for (int oh = 0; oh < d.ho; ++oh, src += d.wo) {
          const int ih = oh * o.stride_h - o.pad_h + ki * o.dilation_h;
          if (ih < 0 || ih >= d.h) continue;
          T* dst = gx + ci * plane + static_cast<std::int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.wo; ++ow) {
            int iw = ow * o.stride_w - o.pad_w + kj * o.dilation_w;
            if (o.circular_w) {
              iw %= d.w;
              if (iw < 0) iw += d.w;
              dst[iw] += src[ow];
            } else if (iw >= 0 && iw < d.w) {
              dst[iw] += src[ow];
            }
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Conv2dOpts& opts) {
  const ConvDims d = conv_dims(x, w, opts);
  if (b.defined() && b.numel() != d.co) throw NumericError("conv2d: bias size mismatch");

  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  Tensor<T> out = make_result(Shape{d.n, d.co, d.ho, d.wo}, parents);

  const std::int64_t k = static_cast<std::int64_t>(d.ci) * d.kh * d.kw;
  const std::int64_t p = static_cast<std::int64_t>(d.ho) * d.wo;
  std::vector<T> col(static_cast<std::size_t>(k) * p);

  CMapRM<T> wm(w.value().data(), d.co, k);
  for (int n = 0; n < d.n; ++n) {
    const T* xn = x.value().data() + static_cast<std::int64_t>(n) * d.ci * d.h * d.w;
    T* on = out.value().data() + static_cast<std::int64_t>(n) * d.co * p;
    im2col(xn, d, opts, col.data());
    CMapRM<T> cm(col.data(), k, p);
    MapRM<T> om(on, d.co, p);
    om.noalias() = wm * cm;
    if (b.defined())
      for (int co = 0; co < d.co; ++co) om.row(co).array() += b.value()[co];
  }

  if (out.node->requires_grad) {
    auto xn = x.node, wn = w.node;
    auto bn2 = b.defined() ? b.node : nullptr;
    auto on = out.node.get();
    out.node->backward_fn = [xn, wn, bn2, on, d, opts, k, p] {
      std::vector<T> col(static_cast<std::size_t>(k) * p);
      std::vector<T> dcol;
      for (int n = 0; n < d.n; ++n) {
        const T* dy = on->grad.data() + static_cast<std::int64_t>(n) * d.co * p;
        CMapRM<T> dym(dy, d.co, p);
        if (wn->requires_grad) {
          im2col(xn->value.data() + static_cast<std::int64_t>(n) * d.ci * d.h * d.w, d, opts, col.data());
          CMapRM<T> cm(col.data(), k, p);
          MapRM<T> gwm(wn->ensure_grad().data(), d.co, k);
          gwm.noalias() += dym * cm.transpose();
        }
        if (xn->requires_grad) {
          dcol.resize(static_cast<std::size_t>(k) * p);
          CMapRM<T> wm(wn->value.data(), d.co, k);
          MapRM<T> dcm(dcol.data(), k, p);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(dcol.data(), d, opts,
                     xn->ensure_grad().data() + static_cast<std::int64_t>(n) * d.ci * d.h * d.w);
        }
        if (bn2 && bn2->requires_grad) {
          auto& gb = bn2->ensure_grad();
          for (int co = 0; co < d.co; ++co) gb[co] += dym.row(co).sum();
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------- pooling

namespace {

template <typename T>
void check_pool_dims(const Tensor<T>& x, int kh, int kw) {
  if (x.ndim() != 4) throw NumericError("pool2d: expected 4-d input");
  if (kh < 1 || kw < 1) throw NumericError("pool2d: window must be >= 1");
  if (x.shape()[2] % kh != 0 || x.shape()[3] % kw != 0)
    throw NumericError("pool2d: window must divide spatial dims");
}

}  // namespace

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kh, int kw) {
  check_pool_dims(x, kh, kw);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = h / kh, wo = w / kw;
  Tensor<T> out = make_result(Shape{n, c, ho, wo}, std::vector<Tensor<T>>{x});

  const T inv = T(1) / static_cast<T>(kh * kw);
  for (int nc = 0; nc < n * c; ++nc) {
    const T* xp = x.value().data() + static_cast<std::int64_t>(nc) * h * w;
    T* op = out.value().data() + static_cast<std::int64_t>(nc) * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        T acc = T(0);
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j) acc += xp[(oh * kh + i) * w + ow * kw + j];
        op[oh * wo + ow] = acc * inv;
      }
  }

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, n, c, h, w, ho, wo, kh, kw, inv] {
      auto& g = xn->ensure_grad();
      for (int nc = 0; nc < n * c; ++nc) {
        T* gp = g.data() + static_cast<std::int64_t>(nc) * h * w;
        const T* dy = on->grad.data() + static_cast<std::int64_t>(nc) * ho * wo;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            const T d = dy[oh * wo + ow] * inv;
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) gp[(oh * kh + i) * w + ow * kw + j] += d;
          }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> soft_pool2d(const Tensor<T>& x, int kh, int kw) {
  check_pool_dims(x, kh, kw);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = h / kh, wo = w / kw;
  Tensor<T> out = make_result(Shape{n, c, ho, wo}, std::vector<Tensor<T>>{x});

  for (int nc = 0; nc < n * c; ++nc) {
    const T* xp = x.value().data() + static_cast<std::int64_t>(nc) * h * w;
    T* op = out.value().data() + static_cast<std::int64_t>(nc) * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        T m = xp[(oh * kh) * w + ow * kw];
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j) m = std::max(m, xp[(oh * kh + i) * w + ow * kw + j]);
        T denom = T(0), num = T(0);
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j) {
            const T v = xp[(oh * kh + i) * w + ow * kw + j];
            const T e = std::exp(v - m);
            denom += e;
            num += v * e;
          }
        op[oh * wo + ow] = num / denom;
      }
  }

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, n, c, h, w, ho, wo, kh, kw] {
      auto& g = xn->ensure_grad();
      for (int nc = 0; nc < n * c; ++nc) {
        const T* xp = xn->value.data() + static_cast<std::int64_t>(nc) * h * w;
        T* gp = g.data() + static_cast<std::int64_t>(nc) * h * w;
        const T* yp = on->value.data() + static_cast<std::int64_t>(nc) * ho * wo;
        const T* dy = on->grad.data() + static_cast<std::int64_t>(nc) * ho * wo;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            T m = xp[(oh * kh) * w + ow * kw];
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) m = std::max(m, xp[(oh * kh + i) * w + ow * kw + j]);
            T denom = T(0);
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) denom += std::exp(xp[(oh * kh + i) * w + ow * kw + j] - m);
            const T y = yp[oh * wo + ow];
            const T d = dy[oh * wo + ow];
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const std::int64_t idx = (oh * kh + i) * w + ow * kw + j;
                const T e = std::exp(xp[idx] - m);
                gp[idx] += d * e * (T(1) + xp[idx] - y) / denom;
              }
          }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw NumericError("global_avg_pool: expected 4-d input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out = make_result(Shape{n, c, 1, 1}, std::vector<Tensor<T>>{x});
  const T inv = T(1) / static_cast<T>(h * w);
  for (int nc = 0; nc < n * c; ++nc) {
    const T* xp = x.value().data() + static_cast<std::int64_t>(nc) * h * w;
    T acc = T(0);
    for (int i = 0; i < h * w; ++i) acc += xp[i];
    out.value()[nc] = acc * inv;
  }
  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, n, c, h, w, inv] {
      auto& g = xn->ensure_grad();
      for (int nc = 0; nc < n * c; ++nc) {
        const T d = on->grad[nc] * inv;
        T* gp = g.data() + static_cast<std::int64_t>(nc) * h * w;
        for (int i = 0; i < h * w; ++i) gp[i] += d;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (x.ndim() != 4) throw NumericError("pixel_shuffle: expected 4-d input");
  if (r < 1) throw NumericError("pixel_shuffle: upscale must be >= 1");
  const int n = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (c_in % (r * r) != 0) throw NumericError("pixel_shuffle: channels not divisible by r^2");
  const int c = c_in / (r * r), ho = h * r, wo = w * r;

  Tensor<T> out = make_result(Shape{n, c, ho, wo}, std::vector<Tensor<T>>{x});
  auto idx_in = [&](int nn, int cc, int hh, int ww) {
    return ((static_cast<std::int64_t>(nn) * c_in + cc) * h + hh) * w + ww;
  };
  auto idx_out = [&](int nn, int cc, int hh, int ww) {
    return ((static_cast<std::int64_t>(nn) * c + cc) * ho + hh) * wo + ww;
  };
  for (int nn = 0; nn < n; ++nn)
    for (int cc = 0; cc < c; ++cc)
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
              out.value()[idx_out(nn, cc, hh * r + i, ww * r + j)] =
                  x.value()[idx_in(nn, cc * r * r + i * r + j, hh, ww)];

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, n, c, c_in, h, w, ho, wo, r] {
      auto& g = xn->ensure_grad();
      auto idx_in = [&](int nn, int cc, int hh, int ww) {
        return ((static_cast<std::int64_t>(nn) * c_in + cc) * h + hh) * w + ww;
      };
      auto idx_out = [&](int nn, int cc, int hh, int ww) {
        return ((static_cast<std::int64_t>(nn) * c + cc) * ho + hh) * wo + ww;
      };
      for (int nn = 0; nn < n; ++nn)
        for (int cc = 0; cc < c; ++cc)
          for (int hh = 0; hh < h; ++hh)
            for (int ww = 0; ww < w; ++ww)
              for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                  g[idx_in(nn, cc * r * r + i * r + j, hh, ww)] +=
                      on->grad[idx_out(nn, cc, hh * r + i, ww * r + j)];
    };
  }
  return out;
}

template <typename T>
Tensor<T> spatial_shift(const Tensor<T>& x, int dy, int dx, bool wrap_w) {
  if (x.ndim() != 4) throw NumericError("spatial_shift: expected 4-d input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out = make_result(x.shape(), std::vector<Tensor<T>>{x});

  for (int nc = 0; nc < n * c; ++nc) {
    const T* xp = x.value().data() + static_cast<std::int64_t>(nc) * h * w;
    T* op = out.value().data() + static_cast<std::int64_t>(nc) * h * w;
    for (int v = 0; v < h; ++v) {
      const int sv = v + dy;
      if (sv < 0 || sv >= h) {
        std::fill(op + v * w, op + (v + 1) * w, T(0));
        continue;
      }
      for (int u = 0; u < w; ++u) {
        int su = u + dx;
        if (wrap_w) {
          su %= w;
          if (su < 0) su += w;
          op[v * w + u] = xp[sv * w + su];
        } else {
          op[v * w + u] = (su >= 0 && su < w) ? xp[sv * w + su] : T(0);
        }
      }
    }
  }

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, n, c, h, w, dy, dx, wrap_w] {
      auto& g = xn->ensure_grad();
      for (int nc = 0; nc < n * c; ++nc) {
        T* gp = g.data() + static_cast<std::int64_t>(nc) * h * w;
        const T* dy_p = on->grad.data() + static_cast<std::int64_t>(nc) * h * w;
        for (int v = 0; v < h; ++v) {
          const int sv = v + dy;
          if (sv < 0 || sv >= h) continue;
          for (int u = 0; u < w; ++u) {
            int su = u + dx;
            if (wrap_w) {
              su %= w;
              if (su < 0) su += w;
              gp[sv * w + su] += dy_p[v * w + u];
            } else if (su >= 0 && su < w) {
              gp[sv * w + su] += dy_p[v * w + u];
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.ndim() != 4 || s.ndim() != 4) throw NumericError("scale_channels: expected 4-d inputs");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (s.shape()[0] != n || s.shape()[1] != c || s.shape()[2] != 1 || s.shape()[3] != 1)
    throw NumericError("scale_channels: scale must be (N,C,1,1)");

  Tensor<T> out = make_result(x.shape(), std::vector<Tensor<T>>{x, s});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int nc = 0; nc < n * c; ++nc) {
    const T sv = s.value()[nc];
    const T* xp = x.value().data() + nc * hw;
    T* op = out.value().data() + nc * hw;
    for (std::int64_t i = 0; i < hw; ++i) op[i] = xp[i] * sv;
  }

  if (out.node->requires_grad) {
    auto xn = x.node, sn = s.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, sn, on, n, c, hw] {
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (int nc = 0; nc < n * c; ++nc) {
          const T sv = sn->value[nc];
          for (std::int64_t i = 0; i < hw; ++i) g[nc * hw + i] += on->grad[nc * hw + i] * sv;
        }
      }
      if (sn->requires_grad) {
        auto& g = sn->ensure_grad();
        for (int nc = 0; nc < n * c; ++nc) {
          T acc = T(0);
          for (std::int64_t i = 0; i < hw; ++i) acc += on->grad[nc * hw + i] * xn->value[nc * hw + i];
          g[nc] += acc;
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  if (x.ndim() != 4 || m.ndim() != 4) throw NumericError("scale_spatial: expected 4-d inputs");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (m.shape()[0] != n || m.shape()[1] != 1 || m.shape()[2] != h || m.shape()[3] != w)
    throw NumericError("scale_spatial: mask must be (N,1,H,W)");

  Tensor<T> out = make_result(x.shape(), std::vector<Tensor<T>>{x, m});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int nn = 0; nn < n; ++nn) {
    const T* mp = m.value().data() + nn * hw;
    for (int cc = 0; cc < c; ++cc) {
      const T* xp = x.value().data() + (static_cast<std::int64_t>(nn) * c + cc) * hw;
      T* op = out.value().data() + (static_cast<std::int64_t>(nn) * c + cc) * hw;
      for (std::int64_t i = 0; i < hw; ++i) op[i] = xp[i] * mp[i];
    }
  }

  if (out.node->requires_grad) {
    auto xn = x.node, mn = m.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, mn, on, n, c, hw] {
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (int nn = 0; nn < n; ++nn) {
          const T* mp = mn->value.data() + nn * hw;
          for (int cc = 0; cc < c; ++cc) {
            const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * hw;
            for (std::int64_t i = 0; i < hw; ++i) g[base + i] += on->grad[base + i] * mp[i];
          }
        }
      }
      if (mn->requires_grad) {
        auto& g = mn->ensure_grad();
        for (int nn = 0; nn < n; ++nn) {
          T* gp = g.data() + nn * hw;
          for (int cc = 0; cc < c; ++cc) {
            const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * hw;
            for (std::int64_t i = 0; i < hw; ++i) gp[i] += on->grad[base + i] * xn->value[base + i];
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, bool training, T momentum,
                       T eps) {
  if (x.ndim() != 4) throw NumericError("batch_norm2d: expected 4-d input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (gamma.numel() != c || beta.numel() != c) throw NumericError("batch_norm2d: affine size mismatch");
  if (static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c)
    throw NumericError("batch_norm2d: running stat size mismatch");

  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(n) * hw;

  std::vector<T> mean_c(c), inv_std_c(c);
  if (training) {
    for (int cc = 0; cc < c; ++cc) {
      T acc = T(0);
      for (int nn = 0; nn < n; ++nn) {
        const T* xp = x.value().data() + (static_cast<std::int64_t>(nn) * c + cc) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += xp[i];
      }
      const T mu = acc / static_cast<T>(m);
      T var = T(0);
      for (int nn = 0; nn < n; ++nn) {
        const T* xp = x.value().data() + (static_cast<std::int64_t>(nn) * c + cc) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T d = xp[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean_c[cc] = mu;
      inv_std_c[cc] = T(1) / std::sqrt(var + eps);
      running_mean[cc] = (T(1) - momentum) * running_mean[cc] + momentum * mu;
      const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
      running_var[cc] = (T(1) - momentum) * running_var[cc] + momentum * unbiased;
    }
  } else {
    for (int cc = 0; cc < c; ++cc) {
      mean_c[cc] = running_mean[cc];
      inv_std_c[cc] = T(1) / std::sqrt(running_var[cc] + eps);
    }
  }

  Tensor<T> out = make_result(x.shape(), std::vector<Tensor<T>>{x, gamma, beta});
  for (int nn = 0; nn < n; ++nn)
    for (int cc = 0; cc < c; ++cc) {
      const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * hw;
      const T mu = mean_c[cc], is = inv_std_c[cc], ga = gamma.value()[cc], be = beta.value()[cc];
      for (std::int64_t i = 0; i < hw; ++i) out.value()[base + i] = (x.value()[base + i] - mu) * is * ga + be;
    }

  if (out.node->requires_grad) {
    auto xn = x.node, gn = gamma.node, bn2 = beta.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, gn, bn2, on, n, c, hw, m, training, mean_c = std::move(mean_c),
                             inv_std_c = std::move(inv_std_c)] {
      for (int cc = 0; cc < c; ++cc) {
        const T mu = mean_c[cc], is = inv_std_c[cc];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int nn = 0; nn < n; ++nn) {
          const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const T dy = on->grad[base + i];
            sum_dy += dy;
            sum_dy_xhat += dy * (xn->value[base + i] - mu) * is;
          }
        }
        if (gn->requires_grad) gn->ensure_grad()[cc] += sum_dy_xhat;
        if (bn2->requires_grad) bn2->ensure_grad()[cc] += sum_dy;
        if (xn->requires_grad) {
          auto& g = xn->ensure_grad();
          const T ga = gn->value[cc];
          const T inv_m = T(1) / static_cast<T>(m);
          for (int nn = 0; nn < n; ++nn) {
            const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const T dy = on->grad[base + i];
              const T xhat = (xn->value[base + i] - mu) * is;
              if (training)
                g[base + i] += ga * is * (dy - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
              else
                g[base + i] += ga * is * dy;
            }
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------- row ops

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int32_t>& idx) {
  if (x.ndim() != 2) throw NumericError("gather_rows: expected 2-d input");
  const int rows = x.shape()[0], cols = x.shape()[1];
  for (std::int32_t i : idx)
    if (i < 0 || i >= rows) throw NumericError("gather_rows: index out of range");

  Tensor<T> out = make_result(Shape{static_cast<int>(idx.size()), cols}, std::vector<Tensor<T>>{x});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.value().data() + static_cast<std::int64_t>(idx[r]) * cols, cols,
                out.value().data() + static_cast<std::int64_t>(r) * cols);

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, idx, cols] {
      auto& g = xn->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        T* dst = g.data() + static_cast<std::int64_t>(idx[r]) * cols;
        const T* src = on->grad.data() + static_cast<std::int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scatter_mean_rows(const Tensor<T>& x, const std::vector<std::int32_t>& row_of_input, int out_rows) {
  if (x.ndim() != 2) throw NumericError("scatter_mean_rows: expected 2-d input");
  const int rows = x.shape()[0], cols = x.shape()[1];
  if (static_cast<int>(row_of_input.size()) != rows) throw NumericError("scatter_mean_rows: index size mismatch");

  std::vector<std::vector<std::int32_t>> members(out_rows);
  for (int i = 0; i < rows; ++i) {
    const std::int32_t r = row_of_input[i];
    if (r < 0 || r >= out_rows) throw NumericError("scatter_mean_rows: index out of range");
    members[r].push_back(i);
  }

  // Canonical member order (by row content) makes the sum independent of the
  // input row order.
  const T* xp = x.value().data();
  auto row_less = [&](std::int32_t a, std::int32_t b) {
    const T* ra = xp + static_cast<std::int64_t>(a) * cols;
    const T* rb = xp + static_cast<std::int64_t>(b) * cols;
    return std::lexicographical_compare(ra, ra + cols, rb, rb + cols);
  };
  for (auto& mem : members) std::sort(mem.begin(), mem.end(), row_less);

  Tensor<T> out = make_result(Shape{out_rows, cols}, std::vector<Tensor<T>>{x});
  std::vector<T> inv_count(out_rows, T(0));
  for (int r = 0; r < out_rows; ++r) {
    if (members[r].empty()) continue;
    inv_count[r] = T(1) / static_cast<T>(members[r].size());
    T* op = out.value().data() + static_cast<std::int64_t>(r) * cols;
    for (std::int32_t i : members[r]) {
      const T* src = xp + static_cast<std::int64_t>(i) * cols;
      for (int c = 0; c < cols; ++c) op[c] += src[c];
    }
    for (int c = 0; c < cols; ++c) op[c] *= inv_count[r];
  }

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, row_of_input, inv_count = std::move(inv_count), cols] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < row_of_input.size(); ++i) {
        const std::int32_t r = row_of_input[i];
        const T s = inv_count[r];
        const T* src = on->grad.data() + static_cast<std::int64_t>(r) * cols;
        T* dst = g.data() + static_cast<std::int64_t>(i) * cols;
        for (int c = 0; c < cols; ++c) dst[c] += src[c] * s;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> gather_pixels(const Tensor<T>& x, const std::vector<std::int64_t>& items) {
  if (x.ndim() != 4) throw NumericError("gather_pixels: expected 4-d input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (std::int64_t it : items)
    if (it < 0 || it >= static_cast<std::int64_t>(n) * hw) throw NumericError("gather_pixels: item out of range");

  Tensor<T> out = make_result(Shape{static_cast<int>(items.size()), c}, std::vector<Tensor<T>>{x});
  for (std::size_t r = 0; r < items.size(); ++r) {
    const std::int64_t nn = items[r] / hw, flat = items[r] % hw;
    for (int cc = 0; cc < c; ++cc)
      out.value()[r * c + cc] = x.value()[(nn * c + cc) * hw + flat];
  }

  if (out.node->requires_grad) {
    auto xn = x.node;
    auto on = out.node.get();
    out.node->backward_fn = [xn, on, items, c, hw] {
      auto& g = xn->ensure_grad();
      for (std::size_t r = 0; r < items.size(); ++r) {
        const std::int64_t nn = items[r] / hw, flat = items[r] % hw;
        for (int cc = 0; cc < c; ++cc) g[(nn * c + cc) * hw + flat] += on->grad[r * c + cc];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------- instantiate

#define MOS_AD_INSTANTIATE(T)                                                                              \
  template void backward<T>(const Tensor<T>&);                                                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scalar_mul<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> scalar_add<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                            \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                         \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                                    \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, bool, Rng&);                                          \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                                        \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dOpts&);   \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int, int);                                            \
  template Tensor<T> soft_pool2d<T>(const Tensor<T>&, int, int);                                           \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                                 \
  template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int);                                              \
  template Tensor<T> spatial_shift<T>(const Tensor<T>&, int, int, bool);                                   \
  template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale_spatial<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::vector<T>&, \
                                     std::vector<T>&, bool, T, T);                                         \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<std::int32_t>&);                   \
  template Tensor<T> scatter_mean_rows<T>(const Tensor<T>&, const std::vector<std::int32_t>&, int);        \
  template Tensor<T> gather_pixels<T>(const Tensor<T>&, const std::vector<std::int64_t>&);

MOS_AD_INSTANTIATE(float)
MOS_AD_INSTANTIATE(double)

#undef MOS_AD_INSTANTIATE

}  // namespace mos::ad

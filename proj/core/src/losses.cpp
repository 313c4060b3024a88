#include "lidarmos/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mos {

ClassFrequencies ClassFrequencies::from_counts(const std::vector<std::int64_t>& counts) {
  ClassFrequencies out;
  std::int64_t total = 0;
  for (std::int64_t c : counts) total += c;
  out.freq.resize(counts.size(), 0.0);
  out.alpha.resize(counts.size(), 0.0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.freq[i] = total > 0 ? static_cast<double>(counts[i]) / static_cast<double>(total) : 0.0;
    out.alpha[i] = out.freq[i] > 0.0 ? 1.0 / std::sqrt(out.freq[i]) : 0.0;
  }
  return out;
}

int label_to_class(Label l, int n_classes) {
  if (n_classes == 3) return static_cast<int>(l);
  switch (l) {
    case Label::kUnlabeled: return -1;
    case Label::kStatic: return 0;
    case Label::kMoving: return 1;
  }
  return -1;
}

Label class_to_label(int cls, int n_classes) {
  if (n_classes == 3) return static_cast<Label>(cls);
  return cls == 1 ? Label::kMoving : Label::kStatic;
}

namespace {

template <typename T>
void check_probs(const ad::Tensor<T>& probs, const std::vector<int>& truth) {
  if (probs.ndim() != 2) throw NumericError("loss: probs must be (items, classes)");
  const int m = probs.shape()[0], c = probs.shape()[1];
  if (static_cast<int>(truth.size()) != m) throw NumericError("loss: truth size mismatch");
  for (int t : truth)
    if (t < 0 || t >= c) throw NumericError("loss: truth class out of range (excluded items must be filtered)");
  for (int i = 0; i < m; ++i) {
    T s = T(0);
    for (int j = 0; j < c; ++j) s += probs.value()[static_cast<std::size_t>(i) * c + j];
    if (std::abs(static_cast<double>(s) - 1.0) > 1e-4)
      throw NumericError("loss: probability rows must sum to 1");
  }
}

}  // namespace

template <typename T>
ad::Tensor<T> weighted_cross_entropy(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                                     const std::vector<T>& alpha, int* n_clamped) {
  check_probs(probs, truth);
  const int m = probs.shape()[0], c = probs.shape()[1];
  if (static_cast<int>(alpha.size()) != c) throw NumericError("weighted_cross_entropy: alpha size mismatch");

  constexpr T kEps = T(1e-12);
  ad::Tensor<T> out = ad::Tensor<T>::zeros({1});
  out.node->requires_grad = probs.node->requires_grad;
  out.node->parents.push_back(probs.node);

  int clamped = 0;
  if (m > 0) {
    T acc = T(0);
    for (int i = 0; i < m; ++i) {
      T p = probs.value()[static_cast<std::size_t>(i) * c + truth[i]];
      if (p < kEps) {
        p = kEps;
        ++clamped;
      }
      acc -= alpha[truth[i]] * std::log(p);
    }
    out.value()[0] = acc / static_cast<T>(m);
  }
  if (n_clamped) *n_clamped = clamped;

  if (out.node->requires_grad) {
    auto pn = probs.node;
    auto on = out.node.get();
    out.node->backward_fn = [pn, on, truth, alpha, m, c] {
      if (m == 0) return;
      auto& g = pn->ensure_grad();
      const T d = on->grad[0] / static_cast<T>(m);
      for (int i = 0; i < m; ++i) {
        const std::size_t idx = static_cast<std::size_t>(i) * c + truth[i];
        const T p = pn->value[idx];
        if (p >= T(1e-12)) g[idx] -= d * alpha[truth[i]] / p;
      }
    };
  }
  return out;
}

template <typename T>
ad::Tensor<T> lovasz_softmax(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                             const std::vector<int>& scored_classes) {
  check_probs(probs, truth);
  const int m = probs.shape()[0], c = probs.shape()[1];

  struct ClassPlan {
    int cls;
    std::vector<std::int32_t> perm;  // item indices sorted by error desc
    std::vector<T> grad;             // Jaccard-extension gradient at sorted positions
  };
  std::vector<ClassPlan> plans;
  T total = T(0);

  for (int cls : scored_classes) {
    if (cls < 0 || cls >= c) throw NumericError("lovasz_softmax: scored class out of range");
    bool present = false;
    for (int t : truth)
      if (t == cls) {
        present = true;
        break;
      }
    if (!present) continue;  // skipped by convention

    std::vector<T> errors(m);
    for (int i = 0; i < m; ++i) {
      const T p = probs.value()[static_cast<std::size_t>(i) * c + cls];
      errors[i] = truth[i] == cls ? T(1) - p : p;
    }
    ClassPlan plan;
    plan.cls = cls;
    plan.perm.resize(m);
    std::iota(plan.perm.begin(), plan.perm.end(), 0);
    std::stable_sort(plan.perm.begin(), plan.perm.end(),
                     [&errors](std::int32_t a, std::int32_t b) { return errors[a] > errors[b]; });

    // Gradient of the Lovász extension of the Jaccard loss for this class.
    std::int64_t gts = 0;
    for (int t : truth)
      if (t == cls) ++gts;
    plan.grad.resize(m);
    std::int64_t inter_cum = 0, union_cum = 0;
    T prev = T(0);
    for (int j = 0; j < m; ++j) {
      const bool is_gt = truth[plan.perm[j]] == cls;
      inter_cum += is_gt ? 1 : 0;
      union_cum += is_gt ? 0 : 1;
      const T jac = T(1) - static_cast<T>(gts - inter_cum) / static_cast<T>(gts + union_cum);
      plan.grad[j] = jac - prev;
      prev = jac;
    }

    T loss_c = T(0);
    for (int j = 0; j < m; ++j) loss_c += errors[plan.perm[j]] * plan.grad[j];
    total += loss_c;
    plans.push_back(std::move(plan));
  }

  ad::Tensor<T> out = ad::Tensor<T>::zeros({1});
  out.node->requires_grad = probs.node->requires_grad;
  out.node->parents.push_back(probs.node);
  const int k = static_cast<int>(plans.size());
  if (k > 0) out.value()[0] = total / static_cast<T>(k);

  if (out.node->requires_grad && k > 0) {
    auto pn = probs.node;
    auto on = out.node.get();
    out.node->backward_fn = [pn, on, truth, plans = std::move(plans), k, c] {
      auto& g = pn->ensure_grad();
      const T d = on->grad[0] / static_cast<T>(k);
      for (const auto& plan : plans)
        for (std::size_t j = 0; j < plan.perm.size(); ++j) {
          const int i = plan.perm[j];
          const T sign = truth[i] == plan.cls ? T(-1) : T(1);
          g[static_cast<std::size_t>(i) * c + plan.cls] += d * sign * plan.grad[j];
        }
    };
  }
  return out;
}

template <typename T>
ad::Tensor<T> combined_loss(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                            const std::vector<T>& alpha, const std::vector<int>& scored_classes,
                            int* n_clamped) {
  return ad::add(weighted_cross_entropy(probs, truth, alpha, n_clamped),
                 lovasz_softmax(probs, truth, scored_classes));
}

#define MOS_LOSS_INSTANTIATE(T)                                                                        \
  template ad::Tensor<T> weighted_cross_entropy<T>(const ad::Tensor<T>&, const std::vector<int>&,      \
                                                   const std::vector<T>&, int*);                       \
  template ad::Tensor<T> lovasz_softmax<T>(const ad::Tensor<T>&, const std::vector<int>&,              \
                                           const std::vector<int>&);                                   \
  template ad::Tensor<T> combined_loss<T>(const ad::Tensor<T>&, const std::vector<int>&,               \
                                          const std::vector<T>&, const std::vector<int>&, int*);

MOS_LOSS_INSTANTIATE(float)
MOS_LOSS_INSTANTIATE(double)

#undef MOS_LOSS_INSTANTIATE

}  // namespace mos

#pragma once

#include <vector>

#include "lidarmos/autodiff.hpp"
#include "lidarmos/types.hpp"

namespace mos {

// Inverse square-root frequency weights; zero-frequency classes get weight 0.
struct ClassFrequencies {
  std::vector<double> freq;
  std::vector<double> alpha;

  static ClassFrequencies from_counts(const std::vector<std::int64_t>& counts);
};

// Class index used in probability rows; unlabeled maps to -1 (excluded) for
// two-class heads and to its own class for three-class heads.
int label_to_class(Label l, int n_classes);
Label class_to_label(int cls, int n_classes);

// Mean over items of -alpha[y] * log(p[y]). probs is (M, C) with rows summing
// to 1; truth holds class indices (no excluded items). Zero probabilities are
// clamped at 1e-12 and counted in *n_clamped.
template <typename T>
ad::Tensor<T> weighted_cross_entropy(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                                     const std::vector<T>& alpha, int* n_clamped = nullptr);

// Lovász-Softmax over the scored classes: per class, sorted errors weighted by
// the Jaccard-extension gradient; mean over scored classes present in truth.
// Classes absent from the truth are skipped; none present gives 0.
template <typename T>
ad::Tensor<T> lovasz_softmax(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                             const std::vector<int>& scored_classes);

// L = L_wce + L_ls.
template <typename T>
ad::Tensor<T> combined_loss(const ad::Tensor<T>& probs, const std::vector<int>& truth,
                            const std::vector<T>& alpha, const std::vector<int>& scored_classes,
                            int* n_clamped = nullptr);

}  // namespace mos

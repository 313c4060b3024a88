#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>

#include "lidarmos/dataset.hpp"
#include "lidarmos/network.hpp"
#include "lidarmos/point_refine.hpp"
#include "lidarmos/postprocess.hpp"

namespace mos {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs_stage1 = 60;
  int epochs_stage2 = 40;
  int batch_size = 2;
  std::uint64_t seed = 1;
  double static_keep_ratio = 1.0;  // downsampling of contiguous static frames
  double lr_decay = 1.0;           // per-epoch multiplier
  AugmentConfig augment;

  void validate() const {
    // lr 0 is allowed so a no-update epoch stays expressible.
    if (lr < 0) throw ConfigError("train: lr must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ConfigError("train: epochs must be >= 0");
    if (static_keep_ratio <= 0 || static_keep_ratio > 1) throw ConfigError("train: ratio must be in (0,1]");
    if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("train: lr_decay must be in (0,1]");
  }

  static TrainConfig load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;
};

// Momentum SGD with coupled L2 weight decay:
//   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.
// Decay is skipped for parameters flagged decay=false (norm scales, biases).
template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;  // aligned with the parameter list

  void ensure(const nn::Params<T>& params) {
    if (velocity.size() != params.size()) {
      velocity.clear();
      for (const auto* p : params) velocity.emplace_back(p->tensor.numel(), T(0));
    }
  }
};

template <typename T>
void sgd_step(nn::Params<T>& params, SgdState<T>& state, double lr, double momentum, double weight_decay);

struct TrainLogEntry {
  int stage = 1;
  int epoch = 0;
  double wce = 0.0;
  double lovasz = 0.0;
  double total = 0.0;
  double val_iou = 0.0;
};

struct TrainResult {
  Checkpoint best;       // highest validation IoU
  double best_iou = 0.0;
  std::vector<TrainLogEntry> log;
};

// Stage 1: pixel-level losses on the 2D network. Validation IoU is the
// pixel-level moving IoU on `val` (train set IoU when val is null).
TrainResult train_stage1(const FrameDataset& train, const FrameDataset* val, MosNet<float>& net,
                         const TrainConfig& config, std::ostream* log_stream = nullptr);

// Stage 2: freezes the 2D network (bitwise, asserted per epoch) and trains the
// point head on point-level losses. Validation IoU is point-level.
TrainResult train_stage2(const FrameDataset& train, const FrameDataset* val, MosNet<float>& net,
                         PointHead<float>& head, const TrainConfig& config,
                         std::ostream* log_stream = nullptr);

// All dynamic frames plus a seeded subset of static frames, keeping at least
// one static frame per contiguous static run.
std::vector<int> sample_training_frames(const ScanSequence& seq, double ratio, std::uint64_t seed);

// Pixel-level moving IoU of the 2D net over a dataset (eval mode).
double evaluate_pixel_iou(const FrameDataset& ds, MosNet<float>& net);

// Point-level moving IoU. With a head, predictions come from the point head;
// otherwise from back-projected pixel labels, optionally kNN-refined.
double evaluate_point_iou(const FrameDataset& ds, MosNet<float>& net, PointHead<float>* head,
                          const KnnConfig* knn = nullptr);

// Per-frame point predictions for one sample in eval mode.
std::vector<Label> predict_point_labels(const Sample& sample, MosNet<float>& net, PointHead<float>* head,
                                        const KnnConfig* knn, int n_classes);

}  // namespace mos

#include "lidarmos/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "lidarmos/losses.hpp"
#include "lidarmos/metrics.hpp"

namespace mos {

using nlohmann::json;

TrainConfig TrainConfig::load(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw IoError("cannot open train config " + json_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("train config " + json_path.string() + ": " + e.what());
  }
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs_stage1 = j.value("epochs_stage1", c.epochs_stage1);
  c.epochs_stage2 = j.value("epochs_stage2", c.epochs_stage2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.static_keep_ratio = j.value("static_keep_ratio", c.static_keep_ratio);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.augment.roll = j.value("aug_roll", c.augment.roll);
  c.augment.flip = j.value("aug_flip", c.augment.flip);
  c.augment.pixel_dropout = j.value("aug_pixel_dropout", c.augment.pixel_dropout);
  c.validate();
  return c;
}

void TrainConfig::save(const std::filesystem::path& json_path) const {
  json j;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["epochs_stage1"] = epochs_stage1;
  j["epochs_stage2"] = epochs_stage2;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["static_keep_ratio"] = static_keep_ratio;
  j["lr_decay"] = lr_decay;
  j["aug_roll"] = augment.roll;
  j["aug_flip"] = augment.flip;
  j["aug_pixel_dropout"] = augment.pixel_dropout;
  std::ofstream f(json_path);
  if (!f) throw IoError("cannot write train config " + json_path.string());
  f << j.dump(2) << "\n";
}

template <typename T>
void sgd_step(nn::Params<T>& params, SgdState<T>& state, double lr, double momentum, double weight_decay) {
  state.ensure(params);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    if (!p->trainable || !p->tensor.has_grad()) continue;
    auto& value = p->tensor.value();
    auto& grad = p->tensor.grad();
    auto& v = state.velocity[pi];
    const T mu = static_cast<T>(momentum);
    const T wd = p->decay ? static_cast<T>(weight_decay) : T(0);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!std::isfinite(static_cast<double>(grad[i])))
        throw NumericError("sgd_step: non-finite gradient in " + p->name);
      v[i] = mu * v[i] + grad[i] + wd * value[i];
      value[i] -= eta * v[i];
    }
  }
}

template void sgd_step<float>(nn::Params<float>&, SgdState<float>&, double, double, double);
template void sgd_step<double>(nn::Params<double>&, SgdState<double>&, double, double, double);

namespace {

void zero_grads(nn::Params<float>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

struct BatchInput {
  ad::Tensor<float> range, residual, coords, valid;
  std::vector<std::int64_t> items;  // labeled pixels as n*H*W + flat
  std::vector<int> truth;
};

BatchInput assemble_batch(const std::vector<const Sample*>& samples) {
  BatchInput b;
  std::vector<ad::Tensor<float>> ranges, residuals, coords, valids;
  const int hw = samples[0]->image.height * samples[0]->image.width;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Sample* s = samples[n];
    ranges.push_back(s->range_in);
    residuals.push_back(s->residual_in);
    coords.push_back(s->coords);
    valids.push_back(s->valid);
    for (int i = 0; i < hw; ++i)
      if (s->pixel_class[i] >= 0) {
        b.items.push_back(static_cast<std::int64_t>(n) * hw + i);
        b.truth.push_back(s->pixel_class[i]);
      }
  }
  b.range = ad::concat(ranges, 0);
  b.residual = ad::concat(residuals, 0);
  b.coords = ad::concat(coords, 0);
  b.valid = ad::concat(valids, 0);
  return b;
}

std::vector<int> moving_scored_classes(int n_classes) {
  return {label_to_class(Label::kMoving, n_classes)};
}

void emit_log(std::ostream* os, const TrainLogEntry& e) {
  if (!os) return;
  (*os) << "stage " << e.stage << " epoch " << e.epoch << " wce " << e.wce << " lovasz " << e.lovasz
        << " total " << e.total << " val_iou " << e.val_iou << "\n";
  os->flush();
}

}  // namespace

double evaluate_pixel_iou(const FrameDataset& ds, MosNet<float>& net) {
  ConfusionCounts agg;
  const int n_classes = net.config().head_classes;
  for (const auto& s : ds.samples) {
    auto logits = net.forward(s.range_in, s.residual_in, s.coords, s.valid, false);
    const int hw = s.image.height * s.image.width;
    std::vector<Label> pred(hw, Label::kStatic);
    for (int i = 0; i < hw; ++i) {
      int best = 0;
      for (int c = 1; c < n_classes; ++c)
        if (logits.value()[c * hw + i] > logits.value()[best * hw + i]) best = c;
      pred[i] = class_to_label(best, n_classes);
    }
    std::vector<Label> truth(hw, Label::kUnlabeled);
    for (int i = 0; i < hw; ++i) truth[i] = s.pixel_labels[i];
    agg += count_moving_confusion(pred, truth);
  }
  return agg.iou();
}

std::vector<Label> predict_point_labels(const Sample& sample, MosNet<float>& net, PointHead<float>* head,
                                        const KnnConfig* knn, int n_classes) {
  auto logits = net.forward(sample.range_in, sample.residual_in, sample.coords, sample.valid, false);
  const int hw = sample.image.height * sample.image.width;

  if (head) {
    const auto& feats = net.last_features();
    const int fc = feats.shape()[1];
    std::vector<double> image_features(static_cast<std::size_t>(fc) * hw);
    for (std::size_t i = 0; i < image_features.size(); ++i)
      image_features[i] = static_cast<double>(feats.value()[i]);
    auto scores = run_point_head(*head, sample.cloud, image_features, fc, sample.image,
                                 net.config().voxel_size);
    std::vector<Label> pred(sample.cloud.size(), Label::kStatic);
    for (std::size_t i = 0; i < sample.cloud.size(); ++i) {
      int best = 0;
      for (int c = 1; c < n_classes; ++c)
        if (scores.value()[i * n_classes + c] > scores.value()[i * n_classes + best]) best = c;
      pred[i] = class_to_label(best, n_classes);
    }
    return pred;
  }

  std::vector<Label> pixel_pred(hw, Label::kStatic);
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
      if (logits.value()[c * hw + i] > logits.value()[best * hw + i]) best = c;
    pixel_pred[i] = class_to_label(best, n_classes);
  }
  if (knn) return knn_refine(sample.cloud, pixel_pred, sample.image, *knn);
  return back_project_labels(pixel_pred, sample.image);
}

double evaluate_point_iou(const FrameDataset& ds, MosNet<float>& net, PointHead<float>* head,
                          const KnnConfig* knn) {
  ConfusionCounts agg;
  const int n_classes = net.config().head_classes;
  for (const auto& s : ds.samples) {
    const std::vector<Label> pred = predict_point_labels(s, net, head, knn, n_classes);
    agg += count_moving_confusion(pred, s.point_labels);
  }
  return agg.iou();
}

TrainResult train_stage1(const FrameDataset& train, const FrameDataset* val, MosNet<float>& net,
                         const TrainConfig& config, std::ostream* log_stream) {
  config.validate();
  if (train.samples.empty()) throw ConfigError("train_stage1: empty dataset");
  const int n_classes = net.config().head_classes;

  const ClassFrequencies freqs = ClassFrequencies::from_counts(count_pixel_classes(train));
  std::vector<float> alpha(freqs.alpha.begin(), freqs.alpha.end());
  const std::vector<int> scored = moving_scored_classes(n_classes);

  ad::Rng shuffle_rng(config.seed * 0x9E3779B97F4A7C15ull + 1);
  ad::Rng aug_rng(config.seed * 0x9E3779B97F4A7C15ull + 2);
  ad::Rng dropout_rng(config.seed * 0x9E3779B97F4A7C15ull + 3);

  SgdState<float> sgd;
  TrainResult result;
  result.best_iou = -1.0;

  std::vector<int> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.lr;

  const bool use_aug = config.augment.roll || config.augment.flip || config.augment.pixel_dropout > 0.0;

  for (int epoch = 0; epoch < config.epochs_stage1; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum_wce = 0.0, sum_ls = 0.0;
    int n_batches = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + config.batch_size); ++j) {
        const Sample& s = train.samples[order[j]];
        if (use_aug) {
          augmented.push_back(augment_sample(s, config.augment, aug_rng));
        } else {
          batch.push_back(&s);
        }
      }
      if (use_aug)
        for (const auto& s : augmented) batch.push_back(&s);

      BatchInput in = assemble_batch(batch);
      if (in.items.empty()) continue;

      auto logits = net.forward(in.range, in.residual, in.coords, in.valid, true, &dropout_rng);
      auto probs = ad::softmax(logits, 1);
      auto item_probs = ad::gather_pixels(probs, in.items);
      auto wce = weighted_cross_entropy(item_probs, in.truth, alpha);
      auto ls = lovasz_softmax(item_probs, in.truth, scored);
      auto loss = ad::add(wce, ls);

      ad::backward(loss);
      sgd_step(net.parameters(), sgd, lr, config.momentum, config.weight_decay);
      zero_grads(net.parameters());

      sum_wce += wce.item();
      sum_ls += ls.item();
      ++n_batches;
    }

    const double val_iou = evaluate_pixel_iou(val ? *val : train, net);
    TrainLogEntry entry{1, epoch, n_batches ? sum_wce / n_batches : 0.0,
                        n_batches ? sum_ls / n_batches : 0.0,
                        n_batches ? (sum_wce + sum_ls) / n_batches : 0.0, val_iou};
    result.log.push_back(entry);
    emit_log(log_stream, entry);

    if (val_iou > result.best_iou) {
      result.best_iou = val_iou;
      Checkpoint ckpt;
      net.save(ckpt);
      ckpt.put_string("meta/stage", "1");
      ckpt.put_string("meta/epoch", std::to_string(epoch));
      ckpt.put_string("meta/val_iou", std::to_string(val_iou));
      result.best = std::move(ckpt);
    }
    lr *= config.lr_decay;
  }

  if (config.epochs_stage1 == 0) {
    Checkpoint ckpt;
    net.save(ckpt);
    ckpt.put_string("meta/stage", "1");
    ckpt.put_string("meta/epoch", "0");
    result.best = std::move(ckpt);
    result.best_iou = evaluate_pixel_iou(val ? *val : train, net);
  }
  return result;
}

TrainResult train_stage2(const FrameDataset& train, const FrameDataset* val, MosNet<float>& net,
                         PointHead<float>& head, const TrainConfig& config, std::ostream* log_stream) {
  config.validate();
  if (train.samples.empty()) throw ConfigError("train_stage2: empty dataset");
  const int n_classes = net.config().head_classes;

  net.set_trainable(false);
  const std::uint64_t frozen_hash = net.parameter_hash();

  const ClassFrequencies freqs = ClassFrequencies::from_counts(count_point_classes(train));
  std::vector<float> alpha(freqs.alpha.begin(), freqs.alpha.end());
  const std::vector<int> scored = moving_scored_classes(n_classes);

  // The 2D network is frozen, so its features are constants: compute them once.
  struct Prepared {
    ad::Tensor<float> feats;  // (N, C)
    SparseVoxelGrid grid;
    std::vector<std::int32_t> labeled;  // labeled point rows
    std::vector<int> truth;
  };
  std::vector<Prepared> prepared;
  for (const auto& s : train.samples) {
    net.forward(s.range_in, s.residual_in, s.coords, s.valid, false);
    const auto& f = net.last_features();
    const int fc = f.shape()[1];
    const int hw = s.image.height * s.image.width;
    std::vector<double> image_features(static_cast<std::size_t>(fc) * hw);
    for (std::size_t i = 0; i < image_features.size(); ++i) image_features[i] = f.value()[i];
    const std::vector<double> pf = back_project(image_features, fc, s.image);
    std::vector<float> pf32(pf.size());
    for (std::size_t i = 0; i < pf.size(); ++i) pf32[i] = static_cast<float>(pf[i]);

    Prepared p;
    p.feats = ad::Tensor<float>::from_data({static_cast<int>(s.cloud.size()), fc}, std::move(pf32));
    p.grid = voxelize(s.cloud, net.config().voxel_size);
    for (std::size_t i = 0; i < s.point_class.size(); ++i)
      if (s.point_class[i] >= 0) {
        p.labeled.push_back(static_cast<std::int32_t>(i));
        p.truth.push_back(s.point_class[i]);
      }
    prepared.push_back(std::move(p));
  }

  ad::Rng shuffle_rng(config.seed * 0x9E3779B97F4A7C15ull + 11);
  SgdState<float> sgd;
  TrainResult result;
  result.best_iou = -1.0;

  std::vector<int> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.lr;

  for (int epoch = 0; epoch < config.epochs_stage2; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum_wce = 0.0, sum_ls = 0.0;
    int n_steps = 0;

    for (int idx : order) {
      Prepared& p = prepared[idx];
      if (p.truth.empty()) continue;
      auto scores = head.forward(p.grid, p.feats);
      auto probs = ad::softmax(scores, 1);
      auto item_probs = ad::gather_rows(probs, p.labeled);
      auto wce = weighted_cross_entropy(item_probs, p.truth, alpha);
      auto ls = lovasz_softmax(item_probs, p.truth, scored);
      auto loss = ad::add(wce, ls);

      ad::backward(loss);
      sgd_step(head.parameters(), sgd, lr, config.momentum, config.weight_decay);
      zero_grads(head.parameters());

      sum_wce += wce.item();
      sum_ls += ls.item();
      ++n_steps;
    }

    if (net.parameter_hash() != frozen_hash)
      throw NumericError("train_stage2: frozen 2D parameters changed");

    const double val_iou = evaluate_point_iou(val ? *val : train, net, &head);
    TrainLogEntry entry{2, epoch, n_steps ? sum_wce / n_steps : 0.0, n_steps ? sum_ls / n_steps : 0.0,
                        n_steps ? (sum_wce + sum_ls) / n_steps : 0.0, val_iou};
    result.log.push_back(entry);
    emit_log(log_stream, entry);

    if (val_iou > result.best_iou) {
      result.best_iou = val_iou;
      Checkpoint ckpt;
      net.save(ckpt);
      head.save(ckpt);
      ckpt.put_string("meta/stage", "2");
      ckpt.put_string("meta/epoch", std::to_string(epoch));
      ckpt.put_string("meta/val_iou", std::to_string(val_iou));
      ckpt.put_string("meta/point_head", head.lite() ? "lite" : "full");
      result.best = std::move(ckpt);
    }
    lr *= config.lr_decay;
  }

  if (config.epochs_stage2 == 0) {
    Checkpoint ckpt;
    net.save(ckpt);
    head.save(ckpt);
    ckpt.put_string("meta/stage", "2");
    ckpt.put_string("meta/epoch", "0");
    ckpt.put_string("meta/point_head", head.lite() ? "lite" : "full");
    result.best = std::move(ckpt);
    result.best_iou = evaluate_point_iou(val ? *val : train, net, &head);
  }

  if (net.parameter_hash() != frozen_hash) throw NumericError("train_stage2: frozen 2D parameters changed");
  return result;
}

std::vector<int> sample_training_frames(const ScanSequence& seq, double ratio, std::uint64_t seed) {
  if (ratio <= 0 || ratio > 1) throw ConfigError("sample_training_frames: ratio must be in (0,1]");
  std::vector<int> kept;
  std::vector<char> is_dynamic(seq.size(), 0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.frames[i].labels) throw ConfigError("sample_training_frames: frame without labels");
    is_dynamic[i] = is_dynamic_frame(*seq.frames[i].labels) ? 1 : 0;
  }

  ad::Rng rng(seed);
  std::vector<char> keep(seq.size(), 0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (is_dynamic[i])
      keep[i] = 1;
    else if (ratio >= 1.0 || rng.uniform() < ratio)
      keep[i] = 1;
  }

  // Preserve at least one static frame per contiguous static run.
  std::size_t i = 0;
  while (i < seq.size()) {
    if (is_dynamic[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool any = false;
    while (j < seq.size() && !is_dynamic[j]) any = any || keep[j], ++j;
    if (!any) keep[i + (j - i) / 2] = 1;
    i = j;
  }

  for (std::size_t k = 0; k < seq.size(); ++k)
    if (keep[k]) kept.push_back(static_cast<int>(k));
  return kept;
}

}  // namespace mos

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidarmos/types.hpp"

namespace mos {

// Confusion counts for the moving class; truth-unlabeled points are excluded.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }

  // IoU = TP / (TP + FP + FN); defined as 1 when the denominator is 0.
  double iou() const {
    const std::int64_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }

  bool no_movers() const { return tp + fp + fn == 0; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

ConfusionCounts count_moving_confusion(const std::vector<Label>& pred, const std::vector<Label>& truth);
double moving_iou(const std::vector<Label>& pred, const std::vector<Label>& truth);

// Dynamic frame: strictly more than 100 moving points.
bool is_dynamic_frame(const MosLabels& truth);

struct EvalRow {
  std::string sequence_id;
  ConfusionCounts counts;
};

// Per-sequence and aggregate moving IoU for one evaluated split/mode.
struct EvalReport {
  std::string split_name;
  std::string mode;  // e.g. "image+knn", "point"
  std::vector<EvalRow> rows;

  ConfusionCounts aggregate() const;
  std::string to_csv() const;
  std::string to_text() const;
};

}  // namespace mos

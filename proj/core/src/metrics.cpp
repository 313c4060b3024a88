#include "lidarmos/metrics.hpp"

#include <iomanip>
#include <sstream>

namespace mos {

ConfusionCounts count_moving_confusion(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  if (pred.size() != truth.size()) throw NumericError("confusion: prediction/truth length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == Label::kUnlabeled) continue;
    const bool p = pred[i] == Label::kMoving;
    const bool t = truth[i] == Label::kMoving;
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double moving_iou(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  return count_moving_confusion(pred, truth).iou();
}

bool is_dynamic_frame(const MosLabels& truth) { return truth.count(Label::kMoving) > 100; }

ConfusionCounts EvalReport::aggregate() const {
  ConfusionCounts agg;
  for (const auto& r : rows) agg += r.counts;
  return agg;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "split,mode,sequence,moving_iou,tp,fp,fn,tn,note\n";
  auto emit = [&](const std::string& seq, const ConfusionCounts& c) {
    os << split_name << "," << mode << "," << seq << "," << std::setprecision(10) << c.iou() << "," << c.tp
       << "," << c.fp << "," << c.fn << "," << c.tn << "," << (c.no_movers() ? "no-movers" : "") << "\n";
  };
  for (const auto& r : rows) emit(r.sequence_id, r.counts);
  emit("ALL", aggregate());
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "moving-object IoU [" << mode << "] (" << split_name << ")\n";
  os << "  sequence    IoU        TP        FP        FN\n";
  auto emit = [&](const std::string& seq, const ConfusionCounts& c) {
    os << "  " << std::left << std::setw(10) << seq << std::right << std::fixed << std::setprecision(4)
       << std::setw(8) << c.iou() << std::setw(10) << c.tp << std::setw(10) << c.fp << std::setw(10) << c.fn;
    if (c.no_movers()) os << "  (no-movers)";
    os << "\n";
  };
  for (const auto& r : rows) emit(r.sequence_id, r.counts);
  emit("ALL", aggregate());
  return os.str();
}

}  // namespace mos

#include "lidarmos/postprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace mos {

std::vector<Label> knn_refine(const PointCloud& points, const std::vector<Label>& pixel_labels,
                              const RangeImage& image, const KnnConfig& config) {
  config.validate();
  if (pixel_labels.size() != image.pixel_count()) throw ConfigError("knn_refine: label image size mismatch");
  if (points.size() != image.n_points) throw ConfigError("knn_refine: point count differs from index map");

  const int h = image.height, w = image.width;
  const int half = config.window / 2;
  const std::size_t hw = image.pixel_count();
  const double inv_two_sigma2 = 1.0 / (2.0 * config.sigma * config.sigma);

  struct Candidate {
    double delta;
    int order;
    Label label;
  };

  std::vector<Label> out(points.size(), Label::kStatic);
  std::vector<Candidate> cand;
  cand.reserve(static_cast<std::size_t>(config.window) * config.window);

  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::int32_t flat = image.point_pixel[i];
    if (flat < 0) continue;  // out of view: explicit "not moving"
    const int v0 = flat / w, u0 = flat % w;
    const Label own = pixel_labels[flat];
    const double r_pt = points.points[i].norm();

    cand.clear();
    int order = 0;
    for (int dv = -half; dv <= half; ++dv) {
      const int v = v0 + dv;
      if (v < 0 || v >= h) continue;
      for (int du = -half; du <= half; ++du, ++order) {
        int u = (u0 + du) % w;
        if (u < 0) u += w;
        const std::size_t nflat = static_cast<std::size_t>(v) * w + u;
        if (image.index_map[nflat] < 0) continue;
        const double delta = std::abs(image.channels[3 * hw + nflat] - r_pt);
        if (delta > config.cutoff) continue;
        // The point's own pixel wins distance ties.
        cand.push_back({delta, (dv == 0 && du == 0) ? -1 : order, pixel_labels[nflat]});
      }
    }

    if (cand.empty()) {
      out[i] = own;
      continue;
    }

    const int keep = std::min<int>(config.k, static_cast<int>(cand.size()));
    std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(), [](const Candidate& a, const Candidate& b) {
      if (a.delta != b.delta) return a.delta < b.delta;
      return a.order < b.order;
    });

    std::array<double, 3> votes{0.0, 0.0, 0.0};
    for (int j = 0; j < keep; ++j)
      votes[static_cast<int>(cand[j].label)] += std::exp(-cand[j].delta * cand[j].delta * inv_two_sigma2);

    int best = 0;
    for (int l = 1; l < 3; ++l)
      if (votes[l] > votes[best]) best = l;
    out[i] = static_cast<Label>(best);
  }
  return out;
}

}  // namespace mos

#pragma once

#include <vector>

#include "lidarmos/range_projection.hpp"
#include "lidarmos/types.hpp"

namespace mos {

struct KnnConfig {
  int k = 5;
  int window = 5;      // odd window side length
  double sigma = 1.0;  // Gaussian weight on range proximity
  double cutoff = 1.0; // meters; neighbors with larger range difference are excluded

  void validate() const {
    if (window < 1 || window % 2 == 0) throw ConfigError("knn: window must be a positive odd number");
    if (k < 1 || k > window * window) throw ConfigError("knn: k must be in [1, window^2]");
    if (!(sigma > 0)) throw ConfigError("knn: sigma must be positive");
    if (cutoff < 0) throw ConfigError("knn: cutoff must be >= 0");
  }
};

// Per-point label vote over the k nearest-by-range pixels inside the window
// around each point's projected pixel, Gaussian-weighted by range proximity.
// Points with no qualifying neighbor keep their own pixel's label; out-of-view
// points are labeled static.
std::vector<Label> knn_refine(const PointCloud& points, const std::vector<Label>& pixel_labels,
                              const RangeImage& image, const KnnConfig& config);

}  // namespace mos

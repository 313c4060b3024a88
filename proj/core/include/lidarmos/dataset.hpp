#pragma once

#include <vector>

#include "lidarmos/autodiff.hpp"
#include "lidarmos/network.hpp"
#include "lidarmos/residual.hpp"
#include "lidarmos/types.hpp"

namespace mos {

// One training/eval frame with precomputed network inputs. Tensors are float,
// (1,C,H,W); class indices are -1 where excluded from losses and metrics.
struct Sample {
  ad::Tensor<float> range_in;     // (1,5,H,W): x,y,z,r,e with -1 fill
  ad::Tensor<float> residual_in;  // (1,n_res,H,W)
  ad::Tensor<float> coords;       // (1,3,H,W)
  ad::Tensor<float> valid;        // (1,1,H,W) in {0,1}
  std::vector<int> pixel_class;   // h*w
  std::vector<Label> pixel_labels;
  std::vector<int> point_class;  // N
  std::vector<Label> point_labels;
  RangeImage image;
  PointCloud cloud;
  int frame_id = 0;
  bool dynamic = false;
};

struct FrameDataset {
  ProjectionConfig projection;
  int n_res = 8;
  int n_classes = 2;
  std::vector<Sample> samples;

  // Builds samples for the given frames (all frames when empty).
  static FrameDataset build(const ScanSequence& seq, const ProjectionConfig& projection, int n_res,
                            int n_classes, const std::vector<int>& frame_indices = {});
};

// Pixel/point class frequency counts over a dataset (for loss weights).
std::vector<std::int64_t> count_pixel_classes(const FrameDataset& ds);
std::vector<std::int64_t> count_point_classes(const FrameDataset& ds);

struct AugmentConfig {
  bool roll = false;           // random azimuth rotation (column roll + xy rotation)
  bool flip = false;           // horizontal mirror + y negation
  double pixel_dropout = 0.0;  // probability of invalidating a valid pixel
};

// Image-domain augmentation for stage-1 training; the returned sample's cloud
// and point arrays are untouched (stage 2 trains without augmentation).
Sample augment_sample(const Sample& in, const AugmentConfig& config, ad::Rng& rng);

}  // namespace mos

#include "lidarmos/dataset.hpp"

#include <cmath>

#include "lidarmos/losses.hpp"
#include "lidarmos/metrics.hpp"

namespace mos {

FrameDataset FrameDataset::build(const ScanSequence& seq, const ProjectionConfig& projection, int n_res,
                                 int n_classes, const std::vector<int>& frame_indices) {
  projection.validate();
  if (n_res < 1) throw ConfigError("dataset: n_res must be >= 1");
  if (n_classes != 2 && n_classes != 3) throw ConfigError("dataset: n_classes must be 2 or 3");

  FrameDataset ds;
  ds.projection = projection;
  ds.n_res = n_res;
  ds.n_classes = n_classes;

  std::vector<int> frames = frame_indices;
  if (frames.empty())
    for (int i = 0; i < static_cast<int>(seq.size()); ++i) frames.push_back(i);

  const int h = projection.height, w = projection.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;

  for (int l : frames) {
    if (l < 0 || l >= static_cast<int>(seq.size())) throw ConfigError("dataset: frame index out of range");
    const auto& frame = seq.frames[l];

    Sample s;
    s.frame_id = frame.cloud.frame_id;
    s.cloud = frame.cloud;
    s.image = build_range_image(frame.cloud, projection);
    const ResidualStack stack = build_residual_stack(seq, l, n_res, projection);

    std::vector<float> range_data(5 * hw);
    for (std::size_t i = 0; i < 5 * hw; ++i) range_data[i] = static_cast<float>(s.image.channels[i]);
    s.range_in = ad::Tensor<float>::from_data({1, 5, h, w}, std::move(range_data));

    std::vector<float> res_data(static_cast<std::size_t>(n_res) * hw);
    for (std::size_t i = 0; i < res_data.size(); ++i) res_data[i] = static_cast<float>(stack.values[i]);
    s.residual_in = ad::Tensor<float>::from_data({1, n_res, h, w}, std::move(res_data));

    std::vector<float> coord_data(3 * hw);
    for (std::size_t i = 0; i < 3 * hw; ++i) coord_data[i] = static_cast<float>(s.image.channels[i]);
    s.coords = ad::Tensor<float>::from_data({1, 3, h, w}, std::move(coord_data));

    std::vector<float> valid_data(hw);
    for (std::size_t i = 0; i < hw; ++i) valid_data[i] = s.image.index_map[i] >= 0 ? 1.0f : 0.0f;
    s.valid = ad::Tensor<float>::from_data({1, 1, h, w}, std::move(valid_data));

    s.pixel_labels.assign(hw, Label::kUnlabeled);
    s.pixel_class.assign(hw, -1);
    if (frame.labels) {
      for (std::size_t i = 0; i < hw; ++i) {
        const std::int32_t idx = s.image.index_map[i];
        if (idx < 0) continue;
        const Label lab = frame.labels->labels[idx];
        s.pixel_labels[i] = lab;
        s.pixel_class[i] = label_to_class(lab, n_classes);
      }
      s.point_labels = frame.labels->labels;
      s.point_class.resize(s.point_labels.size());
      for (std::size_t i = 0; i < s.point_labels.size(); ++i)
        s.point_class[i] = label_to_class(s.point_labels[i], n_classes);
      s.dynamic = is_dynamic_frame(*frame.labels);
    }

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::int64_t> count_pixel_classes(const FrameDataset& ds) {
  std::vector<std::int64_t> counts(ds.n_classes, 0);
  for (const auto& s : ds.samples)
    for (int c : s.pixel_class)
      if (c >= 0) ++counts[c];
  return counts;
}

std::vector<std::int64_t> count_point_classes(const FrameDataset& ds) {
  std::vector<std::int64_t> counts(ds.n_classes, 0);
  for (const auto& s : ds.samples)
    for (int c : s.point_class)
      if (c >= 0) ++counts[c];
  return counts;
}

namespace {

// Copies only the image-domain members that augmentation touches.
Sample clone_images(const Sample& in) {
  Sample out;
  out.range_in = ad::Tensor<float>::from_data(in.range_in.shape(), in.range_in.value());
  out.residual_in = ad::Tensor<float>::from_data(in.residual_in.shape(), in.residual_in.value());
  out.coords = ad::Tensor<float>::from_data(in.coords.shape(), in.coords.value());
  out.valid = ad::Tensor<float>::from_data(in.valid.shape(), in.valid.value());
  out.pixel_class = in.pixel_class;
  out.pixel_labels = in.pixel_labels;
  out.point_class = in.point_class;
  out.point_labels = in.point_labels;
  out.image = in.image;
  out.cloud = in.cloud;
  out.frame_id = in.frame_id;
  out.dynamic = in.dynamic;
  return out;
}

void roll_columns(std::vector<float>& data, int channels, int h, int w, int shift) {
  std::vector<float> tmp(static_cast<std::size_t>(w));
  for (int c = 0; c < channels; ++c)
    for (int v = 0; v < h; ++v) {
      float* row = data.data() + (static_cast<std::size_t>(c) * h + v) * w;
      for (int u = 0; u < w; ++u) tmp[(u + shift) % w] = row[u];
      std::copy(tmp.begin(), tmp.end(), row);
    }
}

template <typename V>
void roll_columns_flat(std::vector<V>& data, int h, int w, int shift) {
  std::vector<V> tmp(static_cast<std::size_t>(w));
  for (int v = 0; v < h; ++v) {
    V* row = data.data() + static_cast<std::size_t>(v) * w;
    for (int u = 0; u < w; ++u) tmp[(u + shift) % w] = row[u];
    std::copy(tmp.begin(), tmp.end(), row);
  }
}

void mirror_columns(std::vector<float>& data, int channels, int h, int w) {
  for (int c = 0; c < channels; ++c)
    for (int v = 0; v < h; ++v) {
      float* row = data.data() + (static_cast<std::size_t>(c) * h + v) * w;
      std::reverse(row, row + w);
    }
}

template <typename V>
void mirror_columns_flat(std::vector<V>& data, int h, int w) {
  for (int v = 0; v < h; ++v) {
    V* row = data.data() + static_cast<std::size_t>(v) * w;
    std::reverse(row, row + w);
  }
}

// Rotate the x,y planes (plane indices 0,1) about z by the given angle.
void rotate_xy(std::vector<float>& data, int h, int w, double angle) {
  const float ca = static_cast<float>(std::cos(angle));
  const float sa = static_cast<float>(std::sin(angle));
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < hw; ++i) {
    const float x = data[i], y = data[hw + i];
    data[i] = ca * x - sa * y;
    data[hw + i] = sa * x + ca * y;
  }
}

}  // namespace

Sample augment_sample(const Sample& in, const AugmentConfig& config, ad::Rng& rng) {
  Sample out = clone_images(in);
  const int h = in.image.height, w = in.image.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const int n_res = in.residual_in.shape()[1];

  if (config.roll) {
    const int shift = static_cast<int>(rng.integer(static_cast<std::uint64_t>(w)));
    if (shift != 0) {
      roll_columns(out.range_in.value(), 5, h, w, shift);
      roll_columns(out.residual_in.value(), n_res, h, w, shift);
      roll_columns(out.coords.value(), 3, h, w, shift);
      roll_columns(out.valid.value(), 1, h, w, shift);
      roll_columns_flat(out.pixel_class, h, w, shift);
      roll_columns_flat(out.pixel_labels, h, w, shift);
      // Column u+shift reads data from column u; its azimuth is smaller by
      // 2*pi*shift/w, so the coordinates rotate accordingly.
      const double angle = -2.0 * M_PI * shift / w;
      rotate_xy(out.range_in.value(), h, w, angle);
      rotate_xy(out.coords.value(), h, w, angle);
    }
  }

  if (config.flip && rng.uniform() < 0.5) {
    mirror_columns(out.range_in.value(), 5, h, w);
    mirror_columns(out.residual_in.value(), n_res, h, w);
    mirror_columns(out.coords.value(), 3, h, w);
    mirror_columns(out.valid.value(), 1, h, w);
    mirror_columns_flat(out.pixel_class, h, w);
    mirror_columns_flat(out.pixel_labels, h, w);
    for (std::size_t i = 0; i < hw; ++i) {
      out.range_in.value()[hw + i] = -out.range_in.value()[hw + i];
      out.coords.value()[hw + i] = -out.coords.value()[hw + i];
    }
  }

  if (config.pixel_dropout > 0.0) {
    for (std::size_t i = 0; i < hw; ++i) {
      if (out.valid.value()[i] == 0.0f || rng.uniform() >= config.pixel_dropout) continue;
      out.valid.value()[i] = 0.0f;
      for (int c = 0; c < 5; ++c) out.range_in.value()[c * hw + i] = static_cast<float>(RangeImage::kFill);
      for (int c = 0; c < 3; ++c) out.coords.value()[c * hw + i] = static_cast<float>(RangeImage::kFill);
      for (int c = 0; c < n_res; ++c) out.residual_in.value()[c * hw + i] = 0.0f;
      out.pixel_class[i] = -1;
      out.pixel_labels[i] = Label::kUnlabeled;
    }
  }
  return out;
}

}  // namespace mos

#include <doctest.h>

#include <random>

#include "lidarmos/postprocess.hpp"
#include "testutil.hpp"

using namespace mos;

namespace {

// One point per pixel in a small band, all at the given range.
struct Fixture {
  PointCloud cloud;
  RangeImage image;
  std::vector<Label> labels;
};

Fixture uniform_band(const ProjectionConfig& cfg, double range, Label fill) {
  Fixture f;
  for (int v = 20; v < 30; ++v)
    for (int u = 50; u < 70; ++u) {
      f.cloud.points.push_back(range * pixel_center_direction(u + 0.5, v + 0.5, cfg));
      f.cloud.intensity.push_back(0.5);
    }
  f.image = build_range_image(f.cloud, cfg);
  f.labels.assign(f.image.pixel_count(), Label::kUnlabeled);
  for (std::size_t i = 0; i < f.image.pixel_count(); ++i)
    if (f.image.index_map[i] >= 0) f.labels[i] = fill;
  return f;
}

}  // namespace

TEST_SUITE("postprocess") {

TEST_CASE("uniform window leaves labels unchanged") {
  const auto cfg = ProjectionConfig::desk();
  Fixture f = uniform_band(cfg, 10.0, Label::kMoving);
  const auto out = knn_refine(f.cloud, f.labels, f.image, {});
  for (std::size_t i = 0; i < f.cloud.size(); ++i) CHECK(out[i] == Label::kMoving);
}

TEST_CASE("isolated wrong pixel flips to the surrounding majority") {
  const auto cfg = ProjectionConfig::desk();
  Fixture f = uniform_band(cfg, 10.0, Label::kStatic);
  // Poison one interior pixel.
  const int v = 25, u = 60;
  const std::size_t flat = static_cast<std::size_t>(v) * cfg.width + u;
  REQUIRE(f.image.index_map[flat] >= 0);
  f.labels[flat] = Label::kMoving;

  KnnConfig knn;
  knn.k = 5;
  knn.window = 3;
  const auto out = knn_refine(f.cloud, f.labels, f.image, knn);
  const std::int32_t poisoned_point = f.image.index_map[flat];
  CHECK(out[poisoned_point] == Label::kStatic);
}

TEST_CASE("points beyond the range cutoff fall back to their own pixel label") {
  const auto cfg = ProjectionConfig::desk();
  // Two points collide in one pixel: near winner, far loser.
  const Eigen::Vector3d dir = pixel_center_direction(80.5, 25.5, cfg);
  PointCloud cloud;
  cloud.points.push_back(5.0 * dir);
  cloud.points.push_back(30.0 * dir);  // loser, far behind
  cloud.intensity = {0.5, 0.5};
  const auto image = build_range_image(cloud, cfg);
  std::vector<Label> labels(image.pixel_count(), Label::kUnlabeled);
  const std::size_t flat = 25 * cfg.width + 80;
  labels[flat] = Label::kMoving;

  KnnConfig knn;
  knn.cutoff = 1.0;  // 25 m difference excludes every neighbor
  const auto out = knn_refine(cloud, labels, image, knn);
  CHECK(out[1] == Label::kMoving);  // fallback to own pixel label
}

TEST_CASE("k=1 with zero cutoff reproduces back-projected labels") {
  const auto cfg = ProjectionConfig::desk();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> range_d(2.0, 40.0);
  PointCloud cloud;
  for (int i = 0; i < 2000; ++i) {
    const double u = static_cast<double>(rng() % (cfg.width * 1000)) / 1000.0;
    const double v = static_cast<double>(rng() % (cfg.height * 1000)) / 1000.0;
    cloud.points.push_back(range_d(rng) * pixel_center_direction(u, v, cfg));
    cloud.intensity.push_back(0.5);
  }
  const auto image = build_range_image(cloud, cfg);
  std::vector<Label> labels(image.pixel_count());
  for (auto& l : labels) l = (rng() % 2) ? Label::kMoving : Label::kStatic;

  KnnConfig knn;
  knn.k = 1;
  knn.cutoff = 0.0;
  const auto refined = knn_refine(cloud, labels, image, knn);
  const auto projected = back_project_labels(labels, image);
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(refined[i] == projected[i]);
}

TEST_CASE("output labels come from the point's search window") {
  const auto cfg = ProjectionConfig::desk();
  std::mt19937_64 rng(5);
  Fixture f = uniform_band(cfg, 12.0, Label::kStatic);
  for (auto& l : f.labels)
    if (l != Label::kUnlabeled) l = (rng() % 2) ? Label::kMoving : Label::kStatic;

  KnnConfig knn;
  knn.k = 7;
  knn.window = 5;
  const auto out = knn_refine(f.cloud, f.labels, f.image, knn);
  const int half = knn.window / 2;
  for (std::size_t i = 0; i < f.cloud.size(); ++i) {
    const std::int32_t flat = f.image.point_pixel[i];
    const int v0 = flat / cfg.width, u0 = flat % cfg.width;
    bool found = false;
    for (int dv = -half; dv <= half && !found; ++dv)
      for (int du = -half; du <= half && !found; ++du) {
        const int v = v0 + dv;
        if (v < 0 || v >= cfg.height) continue;
        int u = (u0 + du) % cfg.width;
        if (u < 0) u += cfg.width;
        if (f.labels[static_cast<std::size_t>(v) * cfg.width + u] == out[i]) found = true;
      }
    CHECK(found);  // no label invention
  }
}

TEST_CASE("invalid window and k are rejected") {
  const auto cfg = ProjectionConfig::desk();
  Fixture f = uniform_band(cfg, 10.0, Label::kStatic);
  KnnConfig bad;
  bad.window = 4;  // even
  CHECK_THROWS_AS(knn_refine(f.cloud, f.labels, f.image, bad), ConfigError);
  bad.window = 3;
  bad.k = 10;  // > window^2
  CHECK_THROWS_AS(knn_refine(f.cloud, f.labels, f.image, bad), ConfigError);
}

}  // TEST_SUITE

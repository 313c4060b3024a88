#include <doctest.h>

#include <cmath>
#include <random>

#include "lidarmos/residual.hpp"
#include "lidarmos/synthetic.hpp"
#include "testutil.hpp"

using namespace mos;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-30.0, 30.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.emplace_back(d(rng), d(rng), d(rng));
    c.intensity.push_back(0.5);
  }
  return c;
}

SyntheticConfig room_scene() {
  SyntheticConfig cfg;
  cfg.n_frames = 2;
  cfg.rays = ProjectionConfig::desk();
  // Four walls around the origin, tall enough to cover the upward FOV band.
  auto wall = [](double cx, double cy, double hx, double hy) {
    SyntheticBox b;
    b.center = {cx, cy, 3.0};
    b.half_extents = {hx, hy, 6.0};
    return b;
  };
  cfg.boxes.push_back(wall(15.0, 0.0, 0.5, 18.0));
  cfg.boxes.push_back(wall(-15.0, 0.0, 0.5, 18.0));
  cfg.boxes.push_back(wall(0.0, 15.0, 18.0, 0.5));
  cfg.boxes.push_back(wall(0.0, -15.0, 18.0, 0.5));
  return cfg;
}

}  // namespace

TEST_SUITE("residual") {

TEST_CASE("transform_scan with identical poses is the identity") {
  const PointCloud c = random_cloud(100, 1);
  const Pose p = Pose::rotation_z(0.7).compose(Pose::translation_xyz(1, 2, 3));
  const PointCloud t = transform_scan(c, p, p);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(t.points[i].isApprox(c.points[i], 1e-12));
}

TEST_CASE("transform_scan applies the relative translation") {
  const PointCloud c = random_cloud(50, 2);
  const PointCloud t = transform_scan(c, Pose::translation_xyz(1, 0, 0), Pose::identity());
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(t.points[i].isApprox(c.points[i] + Eigen::Vector3d(1, 0, 0), 1e-12));
}

TEST_CASE("pure rotations preserve norms") {
  const PointCloud c = random_cloud(1000, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> a(-M_PI, M_PI);
  const Pose prev = Pose::rotation_z(a(rng));
  const Pose cur = Pose::rotation_z(a(rng));
  const PointCloud t = transform_scan(c, prev, cur);
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(t.points[i].norm() == doctest::Approx(c.points[i].norm()).epsilon(1e-12));
}

TEST_CASE("compute_residual applies the normalized difference at co-valid pixels") {
  const auto cfg = ProjectionConfig::desk();
  const Eigen::Vector3d dir = pixel_center_direction(40.5, 30.5, cfg);
  PointCloud cur, prev;
  cur.points.push_back(10.0 * dir);
  cur.intensity.push_back(0.5);
  prev.points.push_back(8.0 * dir);
  prev.intensity.push_back(0.5);
  const auto img_cur = build_range_image(cur, cfg);
  const auto img_prev = build_range_image(prev, cfg);
  const auto d = compute_residual(img_cur, img_prev);
  const std::size_t flat = 30 * cfg.width + 40;
  CHECK(d[flat] == doctest::Approx(0.2).epsilon(1e-12));
  // Every other pixel lacks co-validity.
  for (std::size_t i = 0; i < d.size(); ++i)
    if (i != flat) CHECK(d[i] == 0.0);
}

TEST_CASE("static frames with identity ego-motion give zero residual") {
  SyntheticConfig cfg = room_scene();
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  const auto stack = build_residual_stack(seq, 1, 1, cfg.rays);
  double max_d = 0.0;
  for (double v : stack.values) max_d = std::max(max_d, v);
  CHECK(max_d < 1e-12);
}

TEST_CASE("rotating sensor with exact poses cancels out") {
  // The sensor rotates by an exact column multiple per frame, so both frames
  // sample identical world points and any residual is pipeline error.
  SyntheticConfig cfg = room_scene();
  cfg.motion.yaw_rate = -2.0 * M_PI * 7.0 / cfg.rays.width;
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  const auto stack = build_residual_stack(seq, 1, 1, cfg.rays);
  double max_d = 0.0;
  for (double v : stack.values) max_d = std::max(max_d, v);
  CHECK(max_d < 1e-5);
}

TEST_CASE("frames before the sequence start give all-zero channels") {
  SyntheticConfig cfg = room_scene();
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  const auto stack = build_residual_stack(seq, 0, 3, cfg.rays);
  CHECK(stack.n_channels() == 3);
  for (double v : stack.values) CHECK(v == 0.0);
}

TEST_CASE("rejects n_res < 1") {
  SyntheticConfig cfg = room_scene();
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  CHECK_THROWS_AS(build_residual_stack(seq, 1, 0, cfg.rays), ConfigError);
}

TEST_CASE("constant-velocity mover doubles its residual at offset 2") {
  SyntheticConfig cfg = room_scene();
  cfg.n_frames = 3;
  SyntheticBox mover;
  mover.center = {12.0, 0.0, 1.5};  // at frame 2 its face sits at 10 - 0.5
  mover.half_extents = {0.5, 2.0, 1.5};
  mover.velocity = {-1.0, 0.0, 0.0};
  mover.intensity = 0.9;
  cfg.boxes.push_back(mover);
  const ScanSequence seq = generate_synthetic_sequence(cfg);

  const auto stack = build_residual_stack(seq, 2, 2, cfg.rays);
  const auto cur = build_range_image(seq.frames[2].cloud, cfg.rays);
  const auto img0 = build_range_image(seq.frames[0].cloud, cfg.rays);
  const auto img1 = build_range_image(seq.frames[1].cloud, cfg.rays);

  const std::size_t hw = cur.pixel_count();
  int checked = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    // Restrict to pixels that saw the mover's front face in all three frames,
    // where the constant-velocity geometry is exact.
    auto on_front_face = [&](const RangeImage& img, int frame) {
      const std::int32_t idx = img.index_map[i];
      if (idx < 0) return false;
      const auto& f = seq.frames[frame];
      if (f.labels->labels[idx] != Label::kMoving) return false;
      const double face_x = 12.0 - frame - 0.5;
      return std::abs(f.pose.apply(f.cloud.points[idx]).x() - face_x) < 1e-6;
    };
    if (!on_front_face(cur, 2) || !on_front_face(img1, 1) || !on_front_face(img0, 0)) continue;
    const double d1 = stack.values[0 * hw + i];
    const double d2 = stack.values[1 * hw + i];
    if (d1 <= 0 || d2 <= 0) continue;
    CHECK(d2 / d1 == doctest::Approx(2.0).epsilon(0.01));
    CHECK(d2 > d1);  // residual grows with temporal offset
    ++checked;
  }
  CHECK(checked > 5);
}

TEST_CASE("residual cache round-trips and reuses entries") {
  testutil::TempDir dir("cache");
  ResidualCache cache(dir.path());
  const int h = 4, w = 8;
  std::vector<double> data(h * w);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = 0.25 * static_cast<double>(i);

  int computes = 0;
  auto compute = [&] {
    ++computes;
    return data;
  };
  const auto a = cache.load_or_compute("08", 3, 1, h, w, compute);
  const auto b = cache.load_or_compute("08", 3, 1, h, w, compute);
  CHECK(computes == 1);
  CHECK(a == data);
  CHECK(b == data);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "lidarmos/lidar_io.hpp"
#include "lidarmos/residual.hpp"
#include "lidarmos/synthetic.hpp"
#include "testutil.hpp"

using namespace mos;

namespace {

void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
  std::ofstream f(p, std::ios::binary);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

SyntheticConfig wall_scene() {
  SyntheticConfig cfg;
  cfg.n_frames = 2;
  cfg.rays = ProjectionConfig::desk();
  SyntheticBox wall;
  wall.center = {12.0, 0.0, 2.0};
  wall.half_extents = {0.5, 20.0, 4.0};
  cfg.boxes.push_back(wall);
  return cfg;
}

}  // namespace

TEST_SUITE("lidar_io") {

TEST_CASE("read_scan decodes 16-byte records") {
  testutil::TempDir dir("scan");
  const float raw[8] = {1.f, 0.f, 0.f, 0.5f, 0.f, 1.f, 0.f, 0.25f};
  write_bytes(dir.path() / "a.bin", raw, sizeof(raw));
  const PointCloud c = read_scan(dir.path() / "a.bin");
  REQUIRE(c.size() == 2);
  CHECK(c.points[0] == Eigen::Vector3d(1, 0, 0));
  CHECK(c.intensity[0] == 0.5);
  CHECK(c.intensity[1] == 0.25);
}

TEST_CASE("read_scan handles the empty file") {
  testutil::TempDir dir("scan");
  { std::ofstream f(dir.path() / "empty.bin", std::ios::binary); }
  CHECK(read_scan(dir.path() / "empty.bin").size() == 0);
}

TEST_CASE("read_scan rejects lengths not divisible by 16") {
  testutil::TempDir dir("scan");
  const char junk[17] = {};
  write_bytes(dir.path() / "bad.bin", junk, 17);
  CHECK_THROWS_AS(read_scan(dir.path() / "bad.bin"), FormatError);
}

TEST_CASE("read_scan drops non-finite points and clamps intensity") {
  testutil::TempDir dir("scan");
  float raw[8] = {1.f, 2.f, 3.f, 4.0f, 0.f, 0.f, 0.f, 0.1f};
  raw[4] = std::numeric_limits<float>::quiet_NaN();
  write_bytes(dir.path() / "n.bin", raw, sizeof(raw));
  int dropped = 0;
  const PointCloud c = read_scan(dir.path() / "n.bin", &dropped);
  CHECK(dropped == 1);
  REQUIRE(c.size() == 1);
  CHECK(c.intensity[0] == 1.0);  // clamped from 4.0
}

TEST_CASE("scan write/read round-trip is bit-exact") {
  testutil::TempDir dir("scan");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> d(-50.f, 50.f), e(0.f, 1.f);
  PointCloud c;
  for (int i = 0; i < 500; ++i) {
    c.points.emplace_back(d(rng), d(rng), d(rng));
    c.intensity.push_back(e(rng));
  }
  write_scan(dir.path() / "rt.bin", c);
  const PointCloud back = read_scan(dir.path() / "rt.bin");
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back.points[i] == c.points[i]);
    CHECK(back.intensity[i] == c.intensity[i]);
  }
}

TEST_CASE("read_poses parses identity and equal lines") {
  testutil::TempDir dir("poses");
  {
    std::ofstream f(dir.path() / "poses.txt");
    f << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    f << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  const auto poses = read_poses(dir.path() / "poses.txt", Pose::identity());
  REQUIRE(poses.size() == 2);
  CHECK(poses[0].rotation.isApprox(Eigen::Matrix3d::Identity()));
  CHECK(poses[0].translation.norm() == 0.0);
  CHECK(poses[0].rotation == poses[1].rotation);
  CHECK(poses[0].translation == poses[1].translation);
}

TEST_CASE("read_poses rejects short lines with the line number") {
  testutil::TempDir dir("poses");
  {
    std::ofstream f(dir.path() / "poses.txt");
    f << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    f << "1 0 0 0 0 1 0 0 0 0 1\n";
  }
  try {
    read_poses(dir.path() / "poses.txt", Pose::identity());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("poses conjugate through the calib transform") {
  testutil::TempDir dir("poses");
  // Camera frame pose: rotate about camera y, translate.
  const Pose calib = Pose::rotation_z(0.5).compose(Pose::translation_xyz(0.1, -0.2, 0.3));
  std::vector<Pose> lidar_poses{Pose::rotation_z(0.3).compose(Pose::translation_xyz(1, 2, 3)),
                                Pose::translation_xyz(-4, 0, 1)};
  write_poses(dir.path() / "poses.txt", lidar_poses, calib);
  const auto back = read_poses(dir.path() / "poses.txt", calib);
  REQUIRE(back.size() == lidar_poses.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].rotation.isApprox(lidar_poses[i].rotation, 1e-9));
    CHECK(back[i].translation.isApprox(lidar_poses[i].translation, 1e-9));
  }
  // Orthonormal within 1e-6 after conjugation.
  for (const auto& p : back) CHECK(p.is_valid(1e-6));
}

TEST_CASE("label remap follows the benchmark convention and is total") {
  const LabelRemap remap = LabelRemap::mos_benchmark();
  CHECK(remap.map(0) == Label::kUnlabeled);
  CHECK(remap.map(9) == Label::kStatic);
  CHECK(remap.map(251) == Label::kMoving);
  // Any other 16-bit id maps to static (total map).
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto id = static_cast<std::uint16_t>(rng());
    const Label l = remap.map(id);
    const bool known = id == 0 || id == 9 || id == 251;
    if (!known) CHECK(l == Label::kStatic);
  }
}

TEST_CASE("read_labels decodes words and ignores instance bits") {
  testutil::TempDir dir("labels");
  const std::uint32_t words[3] = {9u, 251u, (7u << 16) | 251u};
  write_bytes(dir.path() / "l.label", words, sizeof(words));
  const MosLabels l = read_labels(dir.path() / "l.label", LabelRemap::mos_benchmark());
  REQUIRE(l.size() == 3);
  CHECK(l.labels[0] == Label::kStatic);
  CHECK(l.labels[1] == Label::kMoving);
  CHECK(l.labels[2] == Label::kMoving);
}

TEST_CASE("label remap config round-trips through json") {
  testutil::TempDir dir("remap");
  const LabelRemap remap = LabelRemap::mos_benchmark();
  remap.save(dir.path() / "remap.json");
  const LabelRemap back = LabelRemap::load(dir.path() / "remap.json");
  CHECK(back.default_label == remap.default_label);
  CHECK(back.table.size() == remap.table.size());
  CHECK(back.map(251) == Label::kMoving);
}

TEST_CASE("synthetic static world yields static labels and on-surface points") {
  SyntheticConfig cfg = wall_scene();
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  REQUIRE(seq.size() == 2);
  for (int f = 0; f < 2; ++f) {
    const auto& frame = seq.frames[f];
    REQUIRE(frame.labels.has_value());
    CHECK(frame.cloud.size() > 100);
    for (std::size_t i = 0; i < frame.cloud.size(); ++i) {
      CHECK(frame.labels->labels[i] == Label::kStatic);
      const Eigen::Vector3d p_world = frame.pose.apply(frame.cloud.points[i]);
      CHECK(scene_surface_distance(cfg, f, p_world) < 1e-9);
    }
  }
}

TEST_CASE("synthetic mover points are labeled moving") {
  SyntheticConfig cfg = wall_scene();
  SyntheticBox mover;
  mover.center = {6.0, 0.0, 1.0};
  mover.half_extents = {0.5, 1.0, 1.0};
  mover.velocity = {-1.0, 0.0, 0.0};
  mover.intensity = 0.9;
  cfg.boxes.push_back(mover);
  const ScanSequence seq = generate_synthetic_sequence(cfg);

  int moving = 0;
  const auto& frame = seq.frames[1];
  for (std::size_t i = 0; i < frame.cloud.size(); ++i) {
    const bool is_mover_hit = frame.cloud.intensity[i] == 0.9;
    CHECK((frame.labels->labels[i] == Label::kMoving) == is_mover_hit);
    if (is_mover_hit) {
      ++moving;
      const Eigen::Vector3d p_world = frame.pose.apply(frame.cloud.points[i]);
      CHECK(scene_surface_distance(cfg, 1, p_world) < 1e-9);
    }
  }
  CHECK(moving > 10);
}

TEST_CASE("translating sensor over a static world keeps labels static") {
  SyntheticConfig cfg = wall_scene();
  cfg.motion.velocity = {0.4, 0.1, 0.0};
  const ScanSequence seq = generate_synthetic_sequence(cfg);
  for (const auto& frame : seq.frames)
    for (Label l : frame.labels->labels) CHECK(l == Label::kStatic);
}

TEST_CASE("degenerate scene is rejected") {
  SyntheticConfig cfg;
  cfg.n_frames = 2;
  CHECK_THROWS_AS(generate_synthetic_sequence(cfg), ConfigError);
}

TEST_CASE("synthetic config round-trips through json") {
  testutil::TempDir dir("synth");
  SyntheticConfig cfg = wall_scene();
  cfg.motion.velocity = {0.1, 0.0, 0.0};
  cfg.save(dir.path() / "scene.json");
  const SyntheticConfig back = SyntheticConfig::load(dir.path() / "scene.json");
  CHECK(back.n_frames == cfg.n_frames);
  CHECK(back.boxes.size() == cfg.boxes.size());
  CHECK(back.rays.width == cfg.rays.width);
  CHECK(back.motion.velocity == cfg.motion.velocity);
}

TEST_CASE("sequence write/read round-trip through the KITTI layout") {
  testutil::TempDir dir("seq");
  SyntheticConfig cfg = wall_scene();
  cfg.n_frames = 3;
  cfg.motion.velocity = {0.2, 0.0, 0.0};
  cfg.sequence_id = "41";
  ScanSequence seq = generate_synthetic_sequence(cfg);
  const LabelRemap remap = LabelRemap::mos_benchmark();
  write_sequence(dir.path(), seq, remap);
  const ScanSequence back = read_sequence(dir.path(), "41", remap);
  REQUIRE(back.size() == seq.size());
  for (std::size_t f = 0; f < seq.size(); ++f) {
    CHECK(back.frames[f].cloud.size() == seq.frames[f].cloud.size());
    CHECK(back.frames[f].pose.rotation.isApprox(seq.frames[f].pose.rotation, 1e-9));
    CHECK(back.frames[f].pose.translation.isApprox(seq.frames[f].pose.translation, 1e-9));
    REQUIRE(back.frames[f].labels.has_value());
    for (std::size_t i = 0; i < seq.frames[f].cloud.size(); ++i)
      CHECK(back.frames[f].labels->labels[i] == seq.frames[f].labels->labels[i]);
  }
}

}  // TEST_SUITE

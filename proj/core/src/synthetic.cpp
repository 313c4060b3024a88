#include "lidarmos/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace mos {

using nlohmann::json;

void SyntheticConfig::validate() const {
  if (n_frames < 2) throw ConfigError("synthetic: n_frames must be >= 2");
  rays.validate();
  if (boxes.empty() && !ground) throw ConfigError("synthetic: degenerate scene (no geometry)");
  if (!(max_range > 0)) throw ConfigError("synthetic: max_range must be > 0");
  for (const auto& b : boxes)
    if (!(b.half_extents.minCoeff() > 0)) throw ConfigError("synthetic: box half_extents must be positive");
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  double intensity = 0.0;
  bool moving = false;
};

// Slab test; only entries from outside count (t_enter > eps).
bool ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
             const Eigen::Vector3d& hi, double* t_hit) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return false;
  }
  if (t_enter <= 1e-9) return false;
  *t_hit = t_enter;
  return true;
}

}  // namespace

ScanSequence generate_synthetic_sequence(const SyntheticConfig& config) {
  config.validate();

  ScanSequence seq;
  seq.sequence_id = config.sequence_id;

  for (int frame = 0; frame < config.n_frames; ++frame) {
    const Pose pose = config.motion.pose_at(frame);
    const Eigen::Vector3d origin = pose.translation;
    const Eigen::Matrix3d R = pose.rotation;
    const Eigen::Matrix3d Rt = R.transpose();

    ScanSequence::Frame out;
    out.pose = pose;
    out.cloud.frame_id = frame;

    MosLabels labels;
    labels.frame_id = frame;

    for (int v = 0; v < config.rays.height; ++v) {
      for (int u = 0; u < config.rays.width; ++u) {
        const Eigen::Vector3d dir_sensor = pixel_center_direction(u + 0.5, v + 0.5, config.rays);
        const Eigen::Vector3d dir = R * dir_sensor;

        Hit best;
        for (const auto& box : config.boxes) {
          const Eigen::Vector3d c = box.center_at(frame);
          double t;
          if (ray_box(origin, dir, c - box.half_extents, c + box.half_extents, &t) && t < best.t)
            best = Hit{t, box.intensity, box.moving()};
        }
        if (config.ground && dir.z() != 0.0) {
          const double t = (config.ground->z - origin.z()) / dir.z();
          if (t > 1e-9 && t < best.t) best = Hit{t, config.ground->intensity, false};
        }

        if (!std::isfinite(best.t) || best.t > config.max_range) continue;
        const Eigen::Vector3d p_world = origin + best.t * dir;
        out.cloud.points.emplace_back(Rt * (p_world - origin));
        out.cloud.intensity.push_back(best.intensity);
        labels.labels.push_back(best.moving ? Label::kMoving : Label::kStatic);
      }
    }

    out.labels = std::move(labels);
    seq.frames.push_back(std::move(out));
  }

  seq.validate();
  return seq;
}

double scene_surface_distance(const SyntheticConfig& config, int frame, const Eigen::Vector3d& p_world) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& box : config.boxes) {
    const Eigen::Vector3d q = (p_world - box.center_at(frame)).cwiseAbs() - box.half_extents;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    best = std::min(best, std::abs(outside + inside));
  }
  if (config.ground) best = std::min(best, std::abs(p_world.z() - config.ground->z));
  return best;
}

static json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

static Eigen::Vector3d vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("synthetic config: expected 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

SyntheticConfig SyntheticConfig::load(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw IoError("cannot open synthetic config " + json_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("synthetic config " + json_path.string() + ": " + e.what());
  }

  SyntheticConfig c;
  c.n_frames = j.value("n_frames", 2);
  c.sequence_id = j.value("sequence_id", std::string("00"));
  c.max_range = j.value("max_range", 80.0);
  if (j.contains("rays")) {
    const json& r = j["rays"];
    c.rays.width = r.value("width", c.rays.width);
    c.rays.height = r.value("height", c.rays.height);
    c.rays.fov_up = r.value("fov_up_deg", 3.0) * M_PI / 180.0;
    c.rays.fov_down = r.value("fov_down_deg", -25.0) * M_PI / 180.0;
  }
  if (j.contains("motion")) {
    const json& m = j["motion"];
    if (m.contains("start_position")) c.motion.start_position = vec3_from_json(m["start_position"]);
    c.motion.start_yaw = m.value("start_yaw", 0.0);
    if (m.contains("velocity")) c.motion.velocity = vec3_from_json(m["velocity"]);
    c.motion.yaw_rate = m.value("yaw_rate", 0.0);
    // Exact azimuth-grid rotation: an integer number of columns per frame.
    if (m.contains("yaw_columns_per_frame"))
      c.motion.yaw_rate = -2.0 * M_PI * m["yaw_columns_per_frame"].get<double>() / c.rays.width;
  }
  if (j.contains("ground")) {
    SyntheticGround g;
    g.z = j["ground"].value("z", 0.0);
    g.intensity = j["ground"].value("intensity", 0.2);
    c.ground = g;
  }
  for (const json& b : j.value("boxes", json::array())) {
    SyntheticBox box;
    box.center = vec3_from_json(b.at("center"));
    box.half_extents = vec3_from_json(b.at("half_extents"));
    if (b.contains("velocity")) box.velocity = vec3_from_json(b["velocity"]);
    box.intensity = b.value("intensity", 0.5);
    c.boxes.push_back(box);
  }
  c.validate();
  return c;
}

void SyntheticConfig::save(const std::filesystem::path& json_path) const {
  json j;
  j["n_frames"] = n_frames;
  j["sequence_id"] = sequence_id;
  j["max_range"] = max_range;
  j["rays"] = {{"width", rays.width},
               {"height", rays.height},
               {"fov_up_deg", rays.fov_up * 180.0 / M_PI},
               {"fov_down_deg", rays.fov_down * 180.0 / M_PI}};
  j["motion"] = {{"start_position", vec3_to_json(motion.start_position)},
                 {"start_yaw", motion.start_yaw},
                 {"velocity", vec3_to_json(motion.velocity)},
                 {"yaw_rate", motion.yaw_rate}};
  if (ground) j["ground"] = {{"z", ground->z}, {"intensity", ground->intensity}};
  json boxes_j = json::array();
  for (const auto& b : boxes)
    boxes_j.push_back({{"center", vec3_to_json(b.center)},
                       {"half_extents", vec3_to_json(b.half_extents)},
                       {"velocity", vec3_to_json(b.velocity)},
                       {"intensity", b.intensity}});
  j["boxes"] = boxes_j;

  std::ofstream f(json_path);
  if (!f) throw IoError("cannot write synthetic config " + json_path.string());
  f << j.dump(2) << "\n";
}

}  // namespace mos

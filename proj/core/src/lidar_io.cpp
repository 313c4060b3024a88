#include "lidarmos/lidar_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mos {

namespace fs = std::filesystem;
using nlohmann::json;

LabelRemap LabelRemap::mos_benchmark() {
  LabelRemap r;
  r.table[0] = Label::kUnlabeled;
  r.table[9] = Label::kStatic;
  r.table[251] = Label::kMoving;
  r.default_label = Label::kStatic;
  return r;
}

static Label label_from_string(const std::string& s) {
  if (s == "unlabeled") return Label::kUnlabeled;
  if (s == "static") return Label::kStatic;
  if (s == "moving") return Label::kMoving;
  throw ConfigError("label remap: unknown class '" + s + "'");
}

static const char* label_to_string(Label l) {
  switch (l) {
    case Label::kUnlabeled: return "unlabeled";
    case Label::kStatic: return "static";
    case Label::kMoving: return "moving";
  }
  return "unlabeled";
}

LabelRemap LabelRemap::load(const fs::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw IoError("cannot open label remap " + json_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("label remap " + json_path.string() + ": " + e.what());
  }
  LabelRemap r;
  r.default_label = label_from_string(j.value("default", "static"));
  for (auto& [key, value] : j.at("table").items()) {
    int id = std::stoi(key);
    if (id < 0 || id > 0xFFFF) throw FormatError("label remap: id out of 16-bit range: " + key);
    r.table[static_cast<std::uint16_t>(id)] = label_from_string(value.get<std::string>());
  }
  return r;
}

void LabelRemap::save(const fs::path& json_path) const {
  json j;
  j["default"] = label_to_string(default_label);
  json t = json::object();
  for (const auto& [id, l] : table) t[std::to_string(id)] = label_to_string(l);
  j["table"] = t;
  std::ofstream f(json_path);
  if (!f) throw IoError("cannot write label remap " + json_path.string());
  f << j.dump(2) << "\n";
}

std::uint16_t LabelRemap::encode(Label l) const {
  // Prefer the canonical benchmark ids when the table contains them.
  std::uint16_t fallback[3] = {0, 9, 251};
  for (const auto& [id, lab] : table)
    if (lab == l && (id == 0 || id == 9 || id == 251)) return id;
  for (const auto& [id, lab] : table)
    if (lab == l) return id;
  return fallback[static_cast<int>(l)];
}

PointCloud read_scan(const fs::path& path, int* n_dropped) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open scan " + path.string());
  const std::streamoff bytes = f.tellg();
  if (bytes % 16 != 0)
    throw FormatError("scan " + path.string() + ": length " + std::to_string(bytes) + " not divisible by 16");
  f.seekg(0);

  const std::size_t n = static_cast<std::size_t>(bytes) / 16;
  std::vector<float> raw(n * 4);
  if (n > 0) f.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!f && n > 0) throw IoError("short read from " + path.string());

  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  int dropped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float x = raw[i * 4 + 0], y = raw[i * 4 + 1], z = raw[i * 4 + 2], e = raw[i * 4 + 3];
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(e)) {
      ++dropped;
      continue;
    }
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(std::clamp(static_cast<double>(e), 0.0, 1.0));
  }
  if (n_dropped) *n_dropped = dropped;
  return cloud;
}

void write_scan(const fs::path& path, const PointCloud& cloud) {
  if (!cloud.consistent()) throw FormatError("write_scan: point/intensity size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<float> raw(cloud.size() * 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    raw[i * 4 + 0] = static_cast<float>(cloud.points[i].x());
    raw[i * 4 + 1] = static_cast<float>(cloud.points[i].y());
    raw[i * 4 + 2] = static_cast<float>(cloud.points[i].z());
    raw[i * 4 + 3] = static_cast<float>(cloud.intensity[i]);
  }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!f) throw IoError("short write to " + path.string());
}

static Pose pose_from_12(const double* m) {
  Pose p;
  p.rotation << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
  p.translation << m[3], m[7], m[11];
  return p;
}

Pose read_calib(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open calib " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.rfind("Tr:", 0) != 0) continue;
    std::istringstream ss(line.substr(3));
    double m[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> m[i]))
        throw FormatError("calib " + path.string() + " line " + std::to_string(line_no) + ": expected 12 floats after Tr:");
    Pose tr = pose_from_12(m);
    if (!tr.is_valid()) throw FormatError("calib " + path.string() + ": Tr rotation not orthonormal");
    return tr;
  }
  throw FormatError("calib " + path.string() + ": no Tr: line");
}

void write_calib(const fs::path& path, const Pose& tr) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write calib " + path.string());
  f << "Tr:";
  f.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) f << " " << tr.rotation(r, c);
    f << " " << tr.translation(r);
  }
  f << "\n";
}

std::vector<Pose> read_poses(const fs::path& path, const Pose& calib) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open poses " + path.string());
  const Pose calib_inv = calib.inverse();

  std::vector<Pose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double m[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> m[i]))
        throw FormatError("poses " + path.string() + " line " + std::to_string(line_no) + ": expected 12 numeric tokens");
    double extra;
    if (ss >> extra)
      throw FormatError("poses " + path.string() + " line " + std::to_string(line_no) + ": more than 12 tokens");

    Pose cam = pose_from_12(m);
    Pose lidar = calib_inv.compose(cam).compose(calib);
    if (!lidar.is_valid())
      throw FormatError("poses " + path.string() + " line " + std::to_string(line_no) + ": rotation not orthonormal");
    poses.push_back(lidar);
  }
  return poses;
}

void write_poses(const fs::path& path, const std::vector<Pose>& lidar_poses, const Pose& calib) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write poses " + path.string());
  f.precision(17);
  const Pose calib_inv = calib.inverse();
  for (const Pose& lp : lidar_poses) {
    Pose cam = calib.compose(lp).compose(calib_inv);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        double v = (c < 3) ? cam.rotation(r, c) : cam.translation(r);
        f << v << (r == 2 && c == 3 ? "" : " ");
      }
    f << "\n";
  }
}

MosLabels read_labels(const fs::path& path, const LabelRemap& remap) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open labels " + path.string());
  const std::streamoff bytes = f.tellg();
  if (bytes % 4 != 0) throw FormatError("labels " + path.string() + ": length not divisible by 4");
  f.seekg(0);

  const std::size_t n = static_cast<std::size_t>(bytes) / 4;
  std::vector<std::uint32_t> words(n);
  if (n > 0) f.read(reinterpret_cast<char*>(words.data()), bytes);
  if (!f && n > 0) throw IoError("short read from " + path.string());

  MosLabels out;
  out.labels.reserve(n);
  for (std::uint32_t w : words) out.labels.push_back(remap.map(static_cast<std::uint16_t>(w & 0xFFFFu)));
  return out;
}

void write_labels(const fs::path& path, const MosLabels& labels, const LabelRemap& remap) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write labels " + path.string());
  std::vector<std::uint32_t> words(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) words[i] = remap.encode(labels.labels[i]);
  f.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!f) throw IoError("short write to " + path.string());
}

static std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

ScanSequence read_sequence(const fs::path& root, const std::string& sequence_id, const LabelRemap& remap,
                           int max_frames) {
  const fs::path dir = root / "sequences" / sequence_id;
  if (!fs::exists(dir)) throw IoError("sequence directory not found: " + dir.string());

  const Pose calib = read_calib(dir / "calib.txt");
  const std::vector<Pose> poses = read_poses(dir / "poses.txt", calib);

  ScanSequence seq;
  seq.sequence_id = sequence_id;
  const fs::path label_dir = dir / "labels";
  const bool has_labels = fs::exists(label_dir);

  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    if (max_frames >= 0 && i >= max_frames) break;
    const fs::path bin = dir / "velodyne" / (frame_name(i) + ".bin");
    if (!fs::exists(bin)) throw IoError("missing scan " + bin.string());

    ScanSequence::Frame frame;
    frame.cloud = read_scan(bin);
    frame.cloud.frame_id = i;
    frame.pose = poses[i];
    if (has_labels) {
      MosLabels l = read_labels(label_dir / (frame_name(i) + ".label"), remap);
      if (l.size() != frame.cloud.size())
        throw FormatError("sequence " + sequence_id + " frame " + std::to_string(i) +
                          ": label count differs from point count");
      l.frame_id = i;
      frame.labels = std::move(l);
    }
    seq.frames.push_back(std::move(frame));
  }
  seq.validate();
  return seq;
}

void write_sequence(const fs::path& root, const ScanSequence& seq, const LabelRemap& remap) {
  const fs::path dir = root / "sequences" / seq.sequence_id;
  fs::create_directories(dir / "velodyne");
  bool any_labels = false;
  for (const auto& f : seq.frames)
    if (f.labels) any_labels = true;
  if (any_labels) fs::create_directories(dir / "labels");

  const Pose calib = Pose::identity();
  write_calib(dir / "calib.txt", calib);

  std::vector<Pose> poses;
  for (int i = 0; i < static_cast<int>(seq.frames.size()); ++i) {
    const auto& frame = seq.frames[i];
    poses.push_back(frame.pose);
    write_scan(dir / "velodyne" / (frame_name(i) + ".bin"), frame.cloud);
    if (frame.labels) write_labels(dir / "labels" / (frame_name(i) + ".label"), *frame.labels, remap);
  }
  write_poses(dir / "poses.txt", poses, calib);
}

}  // namespace mos

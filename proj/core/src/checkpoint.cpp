#include "lidarmos/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mos {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

std::size_t dtype_size(Checkpoint::DType d) {
  switch (d) {
    case Checkpoint::DType::kF32: return 4;
    case Checkpoint::DType::kF64: return 8;
    case Checkpoint::DType::kBytes: return 1;
  }
  return 1;
}

}  // namespace

std::size_t Checkpoint::Array::element_count() const { return raw.size() / dtype_size(dtype); }

void Checkpoint::put_f32(const std::string& name, const std::vector<std::uint32_t>& shape, const float* data,
                         std::size_t count) {
  Array a;
  a.dtype = DType::kF32;
  a.shape = shape;
  a.raw.resize(count * 4);
  std::memcpy(a.raw.data(), data, count * 4);
  arrays_[name] = std::move(a);
}

void Checkpoint::put_f64(const std::string& name, const std::vector<std::uint32_t>& shape, const double* data,
                         std::size_t count) {
  Array a;
  a.dtype = DType::kF64;
  a.shape = shape;
  a.raw.resize(count * 8);
  std::memcpy(a.raw.data(), data, count * 8);
  arrays_[name] = std::move(a);
}

void Checkpoint::put_string(const std::string& name, const std::string& text) {
  Array a;
  a.dtype = DType::kBytes;
  a.shape = {static_cast<std::uint32_t>(text.size())};
  a.raw.assign(text.begin(), text.end());
  arrays_[name] = std::move(a);
}

const Checkpoint::Array& Checkpoint::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw IoError("checkpoint: missing entry '" + name + "'");
  return it->second;
}

std::vector<float> Checkpoint::get_f32(const std::string& name) const {
  const Array& a = at(name);
  if (a.dtype != DType::kF32) throw IoError("checkpoint: entry '" + name + "' is not f32");
  std::vector<float> out(a.element_count());
  std::memcpy(out.data(), a.raw.data(), a.raw.size());
  return out;
}

std::vector<double> Checkpoint::get_f64(const std::string& name) const {
  const Array& a = at(name);
  if (a.dtype != DType::kF64) throw IoError("checkpoint: entry '" + name + "' is not f64");
  std::vector<double> out(a.element_count());
  std::memcpy(out.data(), a.raw.data(), a.raw.size());
  return out;
}

std::string Checkpoint::get_string(const std::string& name) const {
  const Array& a = at(name);
  if (a.dtype != DType::kBytes) throw IoError("checkpoint: entry '" + name + "' is not a string");
  return std::string(a.raw.begin(), a.raw.end());
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string() + " for writing");
  f.write(kMagic, 8);
  write_pod(f, kVersion);
  write_pod(f, static_cast<std::uint64_t>(arrays_.size()));
  for (const auto& [name, a] : arrays_) {
    write_pod(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(f, static_cast<std::uint8_t>(a.dtype));
    write_pod(f, static_cast<std::uint32_t>(a.shape.size()));
    for (std::uint32_t d : a.shape) write_pod(f, d);
    write_pod(f, static_cast<std::uint64_t>(a.element_count()));
    f.write(reinterpret_cast<const char*>(a.raw.data()), static_cast<std::streamsize>(a.raw.size()));
  }
  if (!f) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("checkpoint " + path.string() + ": bad magic");
  const auto version = read_pod<std::uint32_t>(f);
  if (version != kVersion)
    throw FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  const auto count = read_pod<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    Array a;
    a.dtype = static_cast<DType>(read_pod<std::uint8_t>(f));
    const auto ndim = read_pod<std::uint32_t>(f);
    a.shape.resize(ndim);
    for (auto& d : a.shape) d = read_pod<std::uint32_t>(f);
    const auto elems = read_pod<std::uint64_t>(f);
    a.raw.resize(elems * dtype_size(a.dtype));
    f.read(reinterpret_cast<char*>(a.raw.data()), static_cast<std::streamsize>(a.raw.size()));
    if (!f) throw FormatError("checkpoint " + path.string() + ": truncated entry '" + name + "'");
    ckpt.arrays_[name] = std::move(a);
  }
  return ckpt;
}

}  // namespace mos

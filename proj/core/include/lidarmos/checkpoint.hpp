#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lidarmos/errors.hpp"

namespace mos {

// Named flat arrays with shapes. On-disk layout (all little-endian):
//   8-byte magic "MOSCKPT1", u32 version, u64 entry count, then per entry:
//   u32 name length, name bytes, u8 dtype (0=f32, 1=f64, 2=bytes),
//   u32 ndim, u32 dims[ndim], u64 element count, raw data.
class Checkpoint {
 public:
  enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kBytes = 2 };

  struct Array {
    DType dtype = DType::kF32;
    std::vector<std::uint32_t> shape;
    std::vector<unsigned char> raw;

    std::size_t element_count() const;
  };

  void put_f32(const std::string& name, const std::vector<std::uint32_t>& shape, const float* data,
               std::size_t count);
  void put_f64(const std::string& name, const std::vector<std::uint32_t>& shape, const double* data,
               std::size_t count);
  void put_string(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }
  const Array& at(const std::string& name) const;

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  const std::map<std::string, Array>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Array> arrays_;
};

}  // namespace mos

#pragma once

#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace occmocap {

/// A flat file of named, typed, n-dimensional arrays.
///
/// Layout (all integers little-endian):
///
///     magic        8 bytes  "OCMARCH\0"
///     version      u32      kArchiveFormatVersion
///     count        u32      number of entries
///     entry * count:
///       name_len   u32, name bytes (UTF-8, no terminator)
///       dtype      u8       0=f32 1=f64 2=i32 3=i64 4=u8
///       ndim       u8
///       dims       i64 * ndim
///       nbytes     u64
///       data       nbytes, C order
///
/// Entries are written sorted by name. Strings are stored as u8 arrays.
class ArrayArchive {
 public:
  static constexpr uint32_t kArchiveFormatVersion = 1;

  void put(const std::string& name, const torch::Tensor& value);
  void put_string(const std::string& name, const std::string& value);
  void put_int(const std::string& name, int64_t value);
  void put_double(const std::string& name, double value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  /// Throws DataError when `name` is missing.
  const torch::Tensor& get(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  int64_t get_int(const std::string& name) const;
  double get_double(const std::string& name) const;

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> entries_;
};

}  // namespace occmocap

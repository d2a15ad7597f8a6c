#include "occmocap/archive.hpp"

#include <torch/torch.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "occmocap/errors.hpp"

namespace occmocap {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'O', 'C', 'M', 'A', 'R', 'C', 'H', '\0'};

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32:
      return 0;
    case torch::kFloat64:
      return 1;
    case torch::kInt32:
      return 2;
    case torch::kInt64:
      return 3;
    case torch::kUInt8:
      return 4;
    case torch::kBool:
      return 4;
    default:
      throw InvalidArgument(std::string("archive: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_code(uint8_t c) {
  switch (c) {
    case 0:
      return torch::kFloat32;
    case 1:
      return torch::kFloat64;
    case 2:
      return torch::kInt32;
    case 3:
      return torch::kInt64;
    case 4:
      return torch::kUInt8;
    default:
      throw DataError("archive: unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void write_pod(std::ofstream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::filesystem::path& path) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) {
    throw DataError("archive " + path.string() + ": truncated file");
  }
  return value;
}

}  // namespace

void ArrayArchive::put(const std::string& name, const torch::Tensor& value) {
  if (name.empty()) {
    throw InvalidArgument("archive: empty entry name");
  }
  auto t = value.detach().to(torch::kCPU);
  if (t.scalar_type() == torch::kBool) {
    t = t.to(torch::kUInt8);
  }
  dtype_code(t.scalar_type());
  entries_[name] = t.contiguous().clone();
}

void ArrayArchive::put_string(const std::string& name, const std::string& value) {
  auto t = torch::empty({static_cast<int64_t>(value.size())}, torch::kUInt8);
  if (!value.empty()) {
    std::memcpy(t.data_ptr<uint8_t>(), value.data(), value.size());
  }
  entries_[name] = t;
}

void ArrayArchive::put_int(const std::string& name, int64_t value) {
  put(name, torch::tensor({value}, torch::kInt64));
}

void ArrayArchive::put_double(const std::string& name, double value) {
  put(name, torch::tensor({value}, torch::kFloat64));
}

const torch::Tensor& ArrayArchive::get(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw DataError("archive: missing entry '" + name + "'");
  }
  return it->second;
}

std::string ArrayArchive::get_string(const std::string& name) const {
  const auto& t = get(name);
  if (t.scalar_type() != torch::kUInt8 || t.dim() != 1) {
    throw DataError("archive: entry '" + name + "' is not a string");
  }
  return std::string(reinterpret_cast<const char*>(t.data_ptr<uint8_t>()), static_cast<size_t>(t.numel()));
}

int64_t ArrayArchive::get_int(const std::string& name) const {
  const auto& t = get(name);
  if (t.numel() != 1) {
    throw DataError("archive: entry '" + name + "' is not a scalar");
  }
  return t.to(torch::kInt64).item<int64_t>();
}

double ArrayArchive::get_double(const std::string& name) const {
  const auto& t = get(name);
  if (t.numel() != 1) {
    throw DataError("archive: entry '" + name + "' is not a scalar");
  }
  return t.to(torch::kFloat64).item<double>();
}

std::vector<std::string> ArrayArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) {
    out.push_back(name);
  }
  return out;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw DataError("archive: cannot open " + path.string() + " for writing");
  }
  os.write(kMagic.data(), kMagic.size());
  write_pod<uint32_t>(os, kArchiveFormatVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, dtype_code(t.scalar_type()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.dim()));
    for (int64_t d : t.sizes()) {
      write_pod<int64_t>(os, d);
    }
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    write_pod<uint64_t>(os, nbytes);
    os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
  }
  if (!os) {
    throw DataError("archive: write failed for " + path.string());
  }
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw DataError("archive: cannot open " + path.string());
  }
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) {
    throw DataError("archive " + path.string() + ": bad magic");
  }
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kArchiveFormatVersion) {
    throw DataError("archive " + path.string() + ": unsupported format version " + std::to_string(version));
  }
  const auto count = read_pod<uint32_t>(is, path);
  ArrayArchive archive;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is, path);
    if (name_len == 0 || name_len > 4096) {
      throw DataError("archive " + path.string() + ": bad entry name length");
    }
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto dtype = dtype_from_code(read_pod<uint8_t>(is, path));
    const auto ndim = read_pod<uint8_t>(is, path);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) {
      d = read_pod<int64_t>(is, path);
      if (d < 0) {
        throw DataError("archive " + path.string() + ": negative dimension in '" + name + "'");
      }
    }
    const auto nbytes = read_pod<uint64_t>(is, path);
    auto t = torch::empty(dims, dtype);
    if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) {
      throw DataError("archive " + path.string() + ": size mismatch in '" + name + "'");
    }
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!is) {
      throw DataError("archive " + path.string() + ": truncated data in '" + name + "'");
    }
    archive.entries_[name] = t;
  }
  return archive;
}

}  // namespace occmocap

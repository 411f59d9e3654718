#pragma once

// "SPKT" tensor container.
//
//   magic "SPKT" | version u32 | count u32 |
//   count × { name_len u32 | name bytes | rank u32 | dims u64 × rank |
//             dtype u32 (1 = f32, 2 = f64, 3 = u8 blob) | raw data }
//
// All integers and floats little-endian. dtype 3 carries opaque bytes
// (used for embedded JSON) with rank 1 and dims = {byte count}.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evsnn/tensor.hpp"

namespace evsnn {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint32_t { kF32 = 1, kF64 = 2, kU8 = 3 };

struct ArchiveEntry {
  Shape shape;
  DType dtype = DType::kF64;
  std::vector<double> values;  // f32/f64 entries
  std::string bytes;           // u8 entries
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw FormatError("SPKT: unexpected end of stream");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Tensor& t, DType dtype = DType::kF64) {
    if (dtype == DType::kU8) throw ContractError("SPKT: use put_blob for byte entries");
    ArchiveEntry e;
    e.shape = t.shape();
    e.dtype = dtype;
    e.values.assign(t.data().begin(), t.data().end());
    if (dtype == DType::kF32)
      for (double& v : e.values) v = static_cast<double>(static_cast<float>(v));
    insert(name, std::move(e));
  }

  void put_values(const std::string& name, Shape shape, std::vector<double> values, DType dtype = DType::kF64) {
    if (shape_numel(shape) != values.size()) throw ShapeError("SPKT: value count does not match shape");
    ArchiveEntry e;
    e.shape = std::move(shape);
    e.dtype = dtype;
    e.values = std::move(values);
    insert(name, std::move(e));
  }

  void put_blob(const std::string& name, std::string bytes) {
    ArchiveEntry e;
    e.shape = {bytes.size()};
    e.dtype = DType::kU8;
    e.bytes = std::move(bytes);
    insert(name, std::move(e));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const ArchiveEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError("SPKT: missing entry '" + name + "'");
    return it->second;
  }
  Tensor tensor(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype == DType::kU8) throw FormatError("SPKT: entry '" + name + "' is a byte blob");
    return Tensor(e.shape, e.values);
  }
  const std::string& blob(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != DType::kU8) throw FormatError("SPKT: entry '" + name + "' is not a byte blob");
    return e.bytes;
  }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  void write(std::ostream& os) const {
    using detail::put_le;
    os.write("SPKT", 4);
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
      const auto& e = entries_.at(name);
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put_le<std::uint64_t>(os, d);
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.dtype));
      switch (e.dtype) {
        case DType::kF32:
          for (double v : e.values) put_le<float>(os, static_cast<float>(v));
          break;
        case DType::kF64:
          for (double v : e.values) put_le<double>(os, v);
          break;
        case DType::kU8:
          os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
          break;
      }
    }
    if (!os) throw FormatError("SPKT: write failed");
  }

  static TensorArchive read(std::istream& is) {
    using detail::get_le;
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SPKT", 4) != 0) throw FormatError("SPKT: bad magic");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kVersion) throw FormatError("SPKT: unsupported version " + std::to_string(version));
    const auto count = get_le<std::uint32_t>(is);
    TensorArchive ar;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = get_le<std::uint32_t>(is);
      std::string name(len, '\0');
      if (!is.read(name.data(), len)) throw FormatError("SPKT: truncated name");
      const auto rank = get_le<std::uint32_t>(is);
      ArchiveEntry e;
      for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(is)));
      const auto tag = get_le<std::uint32_t>(is);
      const std::size_t n = shape_numel(e.shape);
      if (tag == 1) {
        e.dtype = DType::kF32;
        e.values.resize(n);
        for (auto& v : e.values) v = get_le<float>(is);
      } else if (tag == 2) {
        e.dtype = DType::kF64;
        e.values.resize(n);
        for (auto& v : e.values) v = get_le<double>(is);
      } else if (tag == 3) {
        e.dtype = DType::kU8;
        e.bytes.resize(n);
        if (!is.read(e.bytes.data(), static_cast<std::streamsize>(n))) throw FormatError("SPKT: truncated blob");
      } else {
        throw FormatError("SPKT: unknown dtype tag " + std::to_string(tag));
      }
      ar.insert(name, std::move(e));
    }
    return ar;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write(os);
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read(is);
  }

 private:
  void insert(const std::string& name, ArchiveEntry e) {
    if (!entries_.count(name)) order_.push_back(name);
    entries_[name] = std::move(e);
  }

  std::map<std::string, ArchiveEntry> entries_;
  std::vector<std::string> order_;
};

}  // namespace evsnn

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fvae/error.hpp"

namespace fvae {

// Flat binary container: magic "FVL1", u32 version, a length-prefixed UTF-8
// config document, then count-prefixed named arrays. Payloads are raw
// little-endian 8-byte words; the dtype tag distinguishes f64 from i64.
class Container {
 public:
  static constexpr char kMagic[4] = {'F', 'V', 'L', '1'};
  static constexpr uint32_t kVersion = 1;
  static constexpr uint8_t kF64 = 1;
  static constexpr uint8_t kI64 = 2;

  struct Entry {
    std::string name;
    uint8_t dtype = kF64;
    std::vector<uint64_t> dims;
    std::vector<double> f64;
    std::vector<int64_t> i64;

    size_t count() const {
      size_t n = 1;
      for (uint64_t d : dims) n *= static_cast<size_t>(d);
      return n;
    }
  };

  std::string config_json;

  void add_f64(const std::string& name, std::vector<uint64_t> dims,
               std::vector<double> data) {
    Entry e;
    e.name = name;
    e.dtype = kF64;
    e.dims = std::move(dims);
    e.f64 = std::move(data);
    check_count(e, e.f64.size());
    entries_.push_back(std::move(e));
  }

  void add_i64(const std::string& name, std::vector<uint64_t> dims,
               std::vector<int64_t> data) {
    Entry e;
    e.name = name;
    e.dtype = kI64;
    e.dims = std::move(dims);
    e.i64 = std::move(data);
    check_count(e, e.i64.size());
    entries_.push_back(std::move(e));
  }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw IoError("container: no entry named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("container: cannot open '" + path + "' for write");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, config_json.size());
    out.write(config_json.data(),
              static_cast<std::streamsize>(config_json.size()));
    put_u64(out, entries_.size());
    for (const auto& e : entries_) {
      put_u64(out, e.name.size());
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      out.put(static_cast<char>(e.dtype));
      put_u32(out, static_cast<uint32_t>(e.dims.size()));
      for (uint64_t d : e.dims) put_u64(out, d);
      if (e.dtype == kF64) {
        for (double v : e.f64) {
          uint64_t bits;
          std::memcpy(&bits, &v, 8);
          put_u64(out, bits);
        }
      } else {
        for (int64_t v : e.i64) put_u64(out, static_cast<uint64_t>(v));
      }
    }
    if (!out) throw IoError("container: short write to '" + path + "'");
  }

  static Container read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("container: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
      throw IoError("container: '" + path +
                    "' has bad magic bytes (expected FVL1, format version " +
                    std::to_string(kVersion) + ")");
    const uint32_t version = get_u32(in);
    if (version != kVersion)
      throw IoError("container: '" + path + "' has version " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kVersion));
    Container c;
    const uint64_t cfg_len = get_u64(in);
    c.config_json.resize(cfg_len);
    in.read(c.config_json.data(), static_cast<std::streamsize>(cfg_len));
    const uint64_t count = get_u64(in);
    for (uint64_t i = 0; i < count; ++i) {
      Entry e;
      const uint64_t name_len = get_u64(in);
      e.name.resize(name_len);
      in.read(e.name.data(), static_cast<std::streamsize>(name_len));
      e.dtype = static_cast<uint8_t>(in.get());
      if (e.dtype != kF64 && e.dtype != kI64)
        throw IoError("container: entry '" + e.name + "' has unknown dtype");
      const uint32_t rank = get_u32(in);
      e.dims.resize(rank);
      for (auto& d : e.dims) d = get_u64(in);
      const size_t n = e.count();
      if (e.dtype == kF64) {
        e.f64.resize(n);
        for (auto& v : e.f64) {
          const uint64_t bits = get_u64(in);
          std::memcpy(&v, &bits, 8);
        }
      } else {
        e.i64.resize(n);
        for (auto& v : e.i64) v = static_cast<int64_t>(get_u64(in));
      }
      if (!in) throw IoError("container: truncated entry '" + e.name + "'");
      c.entries_.push_back(std::move(e));
    }
    return c;
  }

 private:
  static void check_count(const Entry& e, size_t n) {
    if (e.count() != n)
      throw IoError("container: entry '" + e.name + "' dims disagree with " +
                    std::to_string(n) + " values");
  }

  static void put_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
  }

  static void put_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
  }

  static uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  static uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::vector<Entry> entries_;
};

}  // namespace fvae

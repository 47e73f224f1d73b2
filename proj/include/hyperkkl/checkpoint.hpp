#pragma once

// HKKP checkpoints: named parameter components in one file.
//
// Layout: "HKKP", u16 version, u32 entry count, then per entry
// (u16 name length, name bytes "component/slice", u32 rows, u32 cols,
// u64 offset into the data block), then u64 value count and the raw
// little-endian f64 data.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hyperkkl/binary_io.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/param_store.hpp"

namespace hyperkkl {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, ParamStore> components;

  bool has(const std::string& c) const { return components.contains(c); }
  const ParamStore& at(const std::string& c) const {
    auto it = components.find(c);
    if (it == components.end()) throw ConfigError("checkpoint has no component '" + c + "'");
    return it->second;
  }
  ParamStore& operator[](const std::string& c) { return components[c]; }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  io::put_magic(os, "HKKP");
  io::put<std::uint16_t>(os, kCheckpointVersion);
  std::uint32_t entries = 0;
  for (const auto& [_, ps] : ck.components) entries += static_cast<std::uint32_t>(ps.layout().size());
  io::put<std::uint32_t>(os, entries);
  std::uint64_t base = 0;
  for (const auto& [name, ps] : ck.components) {
    for (const auto& s : ps.layout()) {
      io::put_string16(os, name + "/" + s.name);
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.rows));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.cols));
      io::put<std::uint64_t>(os, base + s.offset);
    }
    base += ps.size();
  }
  io::put<std::uint64_t>(os, base);
  for (const auto& [_, ps] : ck.components)
    for (double v : ps.data()) io::put<double>(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "HKKP");
  const auto version = io::get<std::uint16_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  struct Entry {
    std::string component, slice;
    std::uint32_t rows, cols;
    std::uint64_t offset;
  };
  const auto n = io::get<std::uint32_t>(is);
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string full = io::get_string16(is);
    const auto slash = full.find('/');
    if (slash == std::string::npos) throw IoError("malformed checkpoint entry name '" + full + "'");
    Entry e{full.substr(0, slash), full.substr(slash + 1), 0, 0, 0};
    e.rows = io::get<std::uint32_t>(is);
    e.cols = io::get<std::uint32_t>(is);
    e.offset = io::get<std::uint64_t>(is);
    entries.push_back(std::move(e));
  }
  const auto count = io::get<std::uint64_t>(is);
  // read incrementally so a corrupt count fails on EOF instead of allocating
  std::vector<double> data;
  for (std::uint64_t i = 0; i < count; ++i) data.push_back(io::get<double>(is));
  Checkpoint ck;
  for (const auto& e : entries) {
    ParamStore& ps = ck.components[e.component];
    const Slice& s = ps.add(e.slice, e.rows, e.cols);
    if (e.offset + s.size() > data.size()) throw IoError("checkpoint entry '" + e.slice + "' out of range");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(e.offset), s.size(),
                ps.data().begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(os, ck);
  if (!os) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

/// Bitwise equality of the raw data (distinguishes -0.0 from +0.0).
inline bool bitwise_equal(const ParamStore& a, const ParamStore& b) {
  return a.same_layout(b) && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace hyperkkl

#pragma once

// Binary and CSV serialization of fields.
//
// Binary layout (all little-endian):
//   char[4] "PFLD", u32 version (=1), u32 kind, u32 n0, u32 n1, u32 channels,
//   f64 extent0, f64 extent1, then channels * n0 * n1 f64 values in row-major
//   order.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "proflow/errors.hpp"
#include "proflow/grid_field.hpp"

namespace proflow {

namespace io {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}
inline void put_f64s(std::ostream& os, const double* v, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f64(os, v[i]);
  }
}
inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void need(std::istream& is, const char* what) {
  if (!is) throw IoError(std::string("truncated stream while reading ") + what);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  need(is, "u32");
  return to_little(v);
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  need(is, "u64");
  return to_little(v);
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
inline void get_f64s(std::istream& is, double* v, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
    need(is, "f64 block");
  } else {
    for (std::size_t i = 0; i < n; ++i) v[i] = get_f64(is);
  }
}
inline std::string get_string(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 20)) throw IoError("string length implausible");
  std::string s(n, '\0');
  is.read(s.data(), n);
  need(is, "string");
  return s;
}

}  // namespace io

constexpr std::uint32_t kFieldFormatVersion = 1;

inline void write_field(std::ostream& os, const Field& u) {
  os.write("PFLD", 4);
  io::put_u32(os, kFieldFormatVersion);
  io::put_u32(os, static_cast<std::uint32_t>(u.grid.kind));
  io::put_u32(os, static_cast<std::uint32_t>(u.grid.n0));
  io::put_u32(os, static_cast<std::uint32_t>(u.grid.n1));
  io::put_u32(os, static_cast<std::uint32_t>(u.channels));
  io::put_f64(os, u.grid.extent0);
  io::put_f64(os, u.grid.extent1);
  io::put_f64s(os, u.values.data(), u.values.size());
  if (!os) throw IoError("failed writing field");
}

inline Field read_field(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  io::need(is, "field magic");
  if (std::memcmp(magic, "PFLD", 4) != 0) throw IoError("not a field blob (bad magic)");
  const auto version = io::get_u32(is);
  if (version != kFieldFormatVersion) {
    throw IoError("unsupported field format version " + std::to_string(version));
  }
  const auto kind = io::get_u32(is);
  if (kind > 1) throw IoError("unknown grid kind in field blob");
  Grid g;
  g.kind = static_cast<GridKind>(kind);
  g.n0 = static_cast<int>(io::get_u32(is));
  g.n1 = static_cast<int>(io::get_u32(is));
  const int channels = static_cast<int>(io::get_u32(is));
  g.extent0 = io::get_f64(is);
  g.extent1 = io::get_f64(is);
  try {
    g.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("corrupt field header: ") + e.what());
  }
  if (channels < 1 || channels > 64) throw IoError("corrupt field header: channel count");
  Field u(g, channels);
  io::get_f64s(is, u.values.data(), u.values.size());
  return u;
}

inline void save_field(const std::string& path, const Field& u) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_field(os, u);
}

inline Field load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_field(is);
}

/// One channel as an n0-row CSV grid (axis 1 along each row).
inline void write_field_csv(std::ostream& os, const Field& u, int channel = 0) {
  if (channel < 0 || channel >= u.channels) throw ShapeError("csv export: bad channel");
  os << std::setprecision(17);
  for (int i0 = 0; i0 < u.grid.n0; ++i0) {
    for (int i1 = 0; i1 < u.grid.n1; ++i1) {
      if (i1) os << ',';
      os << u.at(channel, i0, i1);
    }
    os << '\n';
  }
}

inline void save_field_csv(const std::string& path, const Field& u, int channel = 0) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_field_csv(os, u, channel);
}

}  // namespace proflow

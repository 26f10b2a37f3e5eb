// Copyright 2026 The DarKnight Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// DKTENSOR binary format, version 1, little endian throughout:
//
//   bytes 0..7   magic "DKTENSOR"
//   byte  8      format version (1)
//   byte  9      dtype tag: 0 = float64, 1 = float32
//   bytes 10..11 rank as u16
//   then         rank u64 dimensions
//   then         the scalars, row major
//
// Arithmetic in the library is always 64-bit; the float32 dtype exists only
// as a storage mode, so a 32-bit round trip reproduces the narrowed value.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "darknight/error.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

enum class Dtype : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

namespace detail {

constexpr char kTensorMagic[8] = {'D', 'K', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::uint8_t kTensorVersion = 1;
constexpr std::size_t kMaxRank = 32;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

inline void put_u16_le(std::ostream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline bool get_u16_le(std::istream& is, std::uint16_t& v) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
  v = std::uint16_t(b[0]) | std::uint16_t(b[1]) << 8;
  return true;
}

inline bool get_u64_le(std::istream& is, std::uint64_t& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return true;
}

inline void put_f64_le(std::ostream& os, double d) {
  put_u64_le(os, std::bit_cast<std::uint64_t>(d));
}

inline void put_f32_le(std::ostream& os, float f) {
  std::uint32_t v = std::bit_cast<std::uint32_t>(f);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline bool get_f64_le(std::istream& is, double& d) {
  std::uint64_t v;
  if (!get_u64_le(is, v)) return false;
  d = std::bit_cast<double>(v);
  return true;
}

inline bool get_f32_le(std::istream& is, float& f) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  f = std::bit_cast<float>(v);
  return true;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t,
                         Dtype dtype = Dtype::kFloat64) {
  os.write(detail::kTensorMagic, 8);
  os.put(char(detail::kTensorVersion));
  os.put(char(static_cast<std::uint8_t>(dtype)));
  if (t.rank() > detail::kMaxRank) throw IoError("tensor rank too large");
  detail::put_u16_le(os, std::uint16_t(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u64_le(os, d);
  for (double v : t.data()) {
    if (dtype == Dtype::kFloat64) {
      detail::put_f64_le(os, v);
    } else {
      detail::put_f32_le(os, float(v));
    }
  }
  if (!os) throw IoError("tensor write failed");
}

inline Tensor read_tensor(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kTensorMagic, 8) != 0) {
    throw IoError("not a DKTENSOR stream (bad magic)");
  }
  int version = is.get();
  int dtype_tag = is.get();
  if (version != detail::kTensorVersion) {
    throw IoError("unsupported DKTENSOR version " + std::to_string(version));
  }
  if (dtype_tag != 0 && dtype_tag != 1) {
    throw IoError("unknown DKTENSOR dtype tag " + std::to_string(dtype_tag));
  }
  std::uint16_t rank;
  if (!detail::get_u16_le(is, rank)) throw IoError("truncated DKTENSOR header");
  if (rank > detail::kMaxRank) throw IoError("DKTENSOR rank too large");

  std::vector<std::size_t> shape(rank);
  std::uint64_t total = 1;
  for (std::uint16_t i = 0; i < rank; ++i) {
    std::uint64_t d;
    if (!detail::get_u64_le(is, d)) throw IoError("truncated DKTENSOR dims");
    if (d == 0) throw IoError("DKTENSOR dimension must be positive");
    if (d > detail::kMaxElements / total) {
      throw IoError("DKTENSOR size too large");
    }
    total *= d;
    shape[i] = std::size_t(d);
  }

  std::vector<double> data(static_cast<std::size_t>(total));
  for (std::uint64_t i = 0; i < total; ++i) {
    if (dtype_tag == 0) {
      if (!detail::get_f64_le(is, data[std::size_t(i)])) {
        throw IoError("truncated DKTENSOR payload");
      }
    } else {
      float f;
      if (!detail::get_f32_le(is, f)) {
        throw IoError("truncated DKTENSOR payload");
      }
      data[std::size_t(i)] = double(f);
    }
  }
  Tensor t(std::move(shape), std::move(data));
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw IoError("DKTENSOR payload contains non-finite value");
  }
  return t;
}

// Throws unless the stream is exactly one tensor record.
inline Tensor read_tensor_exact(std::istream& is) {
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError("trailing bytes after DKTENSOR payload");
  }
  return t;
}

inline void save_tensor(const std::string& path, const Tensor& t,
                        Dtype dtype = Dtype::kFloat64) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_tensor(f, t, dtype);
  if (!f) throw IoError("write to " + path + " failed");
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return read_tensor_exact(f);
}

inline std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t,
                                                 Dtype dtype = Dtype::kFloat64) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t, dtype);
  const std::string s = os.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

inline Tensor tensor_from_bytes(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()),
                        std::ios::binary);
  return read_tensor_exact(is);
}

}  // namespace darknight

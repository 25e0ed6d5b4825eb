// tdkd/binary-io.h

// Copyright 2026  The tdkd Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Little-endian primitives shared by the lattice, feature and checkpoint
// formats. Byte order is fixed regardless of host.

#ifndef TDKD_BINARY_IO_H_
#define TDKD_BINARY_IO_H_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "tdkd/errors.h"

namespace tdkd {

inline void WriteU32(std::ostream &os, uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 4);
}

inline void WriteU64(std::ostream &os, uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

inline void WriteF64(std::ostream &os, double v) {
  WriteU64(os, std::bit_cast<uint64_t>(v));
}

inline void WriteF64Array(std::ostream &os, std::span<const double> vs) {
  for (double v : vs) WriteF64(os, v);
}

inline void WriteMagic(std::ostream &os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline uint32_t ReadU32(std::istream &is) {
  std::array<unsigned char, 4> b;
  if (!is.read(reinterpret_cast<char *>(b.data()), 4))
    throw FormatError("unexpected end of file reading u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t ReadU64(std::istream &is) {
  std::array<unsigned char, 8> b;
  if (!is.read(reinterpret_cast<char *>(b.data()), 8))
    throw FormatError("unexpected end of file reading u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double ReadF64(std::istream &is) {
  return std::bit_cast<double>(ReadU64(is));
}

inline void ReadF64Array(std::istream &is, std::span<double> out) {
  for (double &v : out) v = ReadF64(is);
}

inline void ExpectMagic(std::istream &is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) ||
      got != magic) {
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
  }
}

}  // namespace tdkd

#endif  // TDKD_BINARY_IO_H_

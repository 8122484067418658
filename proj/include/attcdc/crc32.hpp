// Copyright 2026 The AttCDC Authors. All Rights Reserved.
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

#ifndef ATTCDC_CRC32_HPP_
#define ATTCDC_CRC32_HPP_

#include <array>
#include <cstddef>
#include <cstdint>

namespace attcdc {

namespace detail {
inline const std::array<uint32_t, 256>& crc32_table() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[n] = c;
    }
    return t;
  }();
  return table;
}
}  // namespace detail

/// Running CRC-32 (IEEE, as used by PNG). Feed 0xffffffff-initialised state
/// through update() and finish with ^ 0xffffffff, or use crc32() directly.
inline uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t len) {
  const auto& t = detail::crc32_table();
  for (size_t i = 0; i < len; ++i) crc = t[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

inline uint32_t crc32(const uint8_t* data, size_t len) {
  return crc32_update(0xffffffffu, data, len) ^ 0xffffffffu;
}

}  // namespace attcdc

#endif  // ATTCDC_CRC32_HPP_

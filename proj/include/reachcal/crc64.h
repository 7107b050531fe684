#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include <boost/crc.hpp>

namespace reachcal {

// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL,
                                 0xFFFFFFFFFFFFFFFFULL, 0xFFFFFFFFFFFFFFFFULL,
                                 true, true>;

inline std::uint64_t crc64(std::span<const std::byte> bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

inline std::uint64_t crc64(std::string_view text) {
  Crc64 crc;
  crc.process_bytes(text.data(), text.size());
  return crc.checksum();
}

}  // namespace reachcal

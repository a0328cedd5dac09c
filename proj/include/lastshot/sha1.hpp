#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>

namespace lastshot {

/// SHA-1 over a byte string, hex digest. Used as the manifest content hash;
/// not for security.
inline std::string sha1_hex(const std::string& data) {
  std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                        0xC3D2E1F0u};
  std::uint64_t ml = static_cast<std::uint64_t>(data.size()) * 8;

  std::string msg = data;
  msg.push_back(static_cast<char>(0x80));
  while (msg.size() % 64 != 56) msg.push_back('\0');
  for (int i = 7; i >= 0; --i)
    msg.push_back(static_cast<char>((ml >> (8 * i)) & 0xFF));

  auto rotl = [](std::uint32_t x, int n) {
    return (x << n) | (x >> (32 - n));
  };

  for (std::size_t chunk = 0; chunk < msg.size(); chunk += 64) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint8_t>(msg[chunk + 4 * i]) << 24) |
             (static_cast<std::uint8_t>(msg[chunk + 4 * i + 1]) << 16) |
             (static_cast<std::uint8_t>(msg[chunk + 4 * i + 2]) << 8) |
             static_cast<std::uint8_t>(msg[chunk + 4 * i + 3]);
    }
    for (int i = 16; i < 80; ++i)
      w[i] = rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      std::uint32_t tmp = rotl(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rotl(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  static const char* hexd = "0123456789abcdef";
  std::string out;
  out.reserve(40);
  for (std::uint32_t v : h)
    for (int i = 7; i >= 0; --i) out.push_back(hexd[(v >> (4 * i)) & 0xF]);
  return out;
}

}  // namespace lastshot

#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

namespace netsurgeon {

/// Incremental FNV-1a (64-bit). Used for content keys, not security.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void text(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    for (float f : v) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      u64(bits);
    }
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace netsurgeon

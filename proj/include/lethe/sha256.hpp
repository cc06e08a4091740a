#pragma once

// Minimal SHA-256 for artifact digests (FIPS 180-4). Digests gate two
// invariants: the frozen backbone must hash identically before and after an
// unlearning run, and a repeated run must reproduce every artifact digest.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace lethe {

class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::array<std::uint8_t, 32> finish();
  std::string hex();  // finishes and formats

 private:
  void compress(const std::uint8_t* block);
  std::array<std::uint32_t, 8> state_;
  std::array<std::uint8_t, 64> buf_;
  std::size_t buf_len_ = 0;
  std::uint64_t total_ = 0;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace lethe

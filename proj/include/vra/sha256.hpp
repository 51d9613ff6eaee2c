#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace vra {

// Minimal SHA-256, used for content hashes in run manifests.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  // Finalizes and returns the lowercase hex digest. The object must not be
  // reused afterwards.
  std::string hex_digest();

  static std::string of_bytes(const void* data, size_t len);
  static std::string of_file(const std::string& path);

 private:
  void process_block(const uint8_t* block);
  uint32_t state_[8];
  uint64_t total_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

}  // namespace vra

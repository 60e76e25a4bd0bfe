#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

namespace spjscc::numcore {

// Incremental SHA-256 producing lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t bytes);
  Sha256& update(std::string_view text) { return update(text.data(), text.size()); }
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline std::string sha256_hex(std::string_view bytes) { return Sha256().update(bytes).hex(); }

}  // namespace spjscc::numcore

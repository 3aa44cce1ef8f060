#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace quire {

std::string sha256_hex(std::string_view data);

/// Incremental SHA-256. hex() can be called repeatedly while data keeps
/// being appended.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256& other);
  Sha256& operator=(const Sha256& other);
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;

  void update(std::string_view data);
  std::string hex() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace quire

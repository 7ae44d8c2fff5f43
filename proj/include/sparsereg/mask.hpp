#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sparsereg {

/// Binary keep/drop pattern congruent to one parameter tensor. `count()` is the number of ones.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::vector<std::uint8_t> bits);
  static Mask ones(std::size_t size);
  static Mask zeros(std::size_t size);

  std::size_t size() const { return bits_.size(); }
  std::size_t count() const { return count_; }
  bool keep(std::size_t i) const { return bits_[i] != 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

}  // namespace sparsereg

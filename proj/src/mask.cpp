#include "sparsereg/mask.hpp"

#include "sparsereg/errors.hpp"

namespace sparsereg {

Mask::Mask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw UsageError("mask bits must be 0 or 1");
    count_ += b;
  }
}

Mask Mask::ones(std::size_t size) { return Mask(std::vector<std::uint8_t>(size, 1)); }

Mask Mask::zeros(std::size_t size) { return Mask(std::vector<std::uint8_t>(size, 0)); }

}  // namespace sparsereg

#pragma once

#include "swamp/tensor.hpp"

#include <cstdint>
#include <vector>

namespace swamp {

/// Which coordinates of the flat parameter vector may be pruned.
class PrunableSet {
 public:
  PrunableSet() = default;
  PrunableSet(Index dim, std::vector<Index> coordinates);

  Index dim() const { return dim_; }
  Index count() const { return static_cast<Index>(coords_.size()); }
  bool contains(Index coord) const { return member_[static_cast<std::size_t>(coord)] != 0; }

  /// Sorted flat coordinates, one per prunable slot.
  const std::vector<Index>& coordinates() const { return coords_; }

  friend bool operator==(const PrunableSet&, const PrunableSet&) = default;

 private:
  Index dim_ = 0;
  std::vector<Index> coords_;
  std::vector<std::uint8_t> member_;
};

/// Binary keep/drop flag per prunable slot.
class Mask {
 public:
  Mask() = default;

  static Mask ones(Index prunable_count);
  static Mask from_bits(std::vector<std::uint8_t> bits);

  Index prunable_count() const { return static_cast<Index>(bits_.size()); }
  Index support() const { return support_; }
  bool kept(Index slot) const { return bits_[static_cast<std::size_t>(slot)] != 0; }
  void set(Index slot, bool keep);

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  /// Length-D multiplier: mask bits on prunable coordinates, 1 elsewhere.
  Eigen::VectorXf expand(const PrunableSet& prunable) const;

  /// True when every kept slot here is also kept in `other`.
  bool subset_of(const Mask& other) const;

  friend bool operator==(const Mask& a, const Mask& b) { return a.bits_ == b.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
  Index support_ = 0;
};

}  // namespace swamp

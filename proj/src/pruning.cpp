#include "swamp/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace swamp {

PrunableSet::PrunableSet(Index dim, std::vector<Index> coordinates)
    : dim_(dim), coords_(std::move(coordinates)), member_(static_cast<std::size_t>(dim), 0) {
  std::sort(coords_.begin(), coords_.end());
  for (Index c : coords_) {
    if (c < 0 || c >= dim_) throw std::out_of_range("prunable set: coordinate " + std::to_string(c) + " out of range");
    if (member_[static_cast<std::size_t>(c)]) {
      throw std::invalid_argument("prunable set: duplicate coordinate " + std::to_string(c));
    }
    member_[static_cast<std::size_t>(c)] = 1;
  }
}

Mask Mask::ones(Index prunable_count) {
  Mask m;
  m.bits_.assign(static_cast<std::size_t>(prunable_count), 1);
  m.support_ = prunable_count;
  return m;
}

Mask Mask::from_bits(std::vector<std::uint8_t> bits) {
  Mask m;
  for (auto& b : bits) b = b ? 1 : 0;
  m.support_ = std::count(bits.begin(), bits.end(), std::uint8_t{1});
  m.bits_ = std::move(bits);
  return m;
}

void Mask::set(Index slot, bool keep) {
  auto& b = bits_.at(static_cast<std::size_t>(slot));
  support_ += static_cast<Index>(keep) - static_cast<Index>(b);
  b = keep ? 1 : 0;
}

Eigen::VectorXf Mask::expand(const PrunableSet& prunable) const {
  if (prunable.count() != prunable_count()) {
    throw ShapeError("mask: " + std::to_string(prunable_count()) + " bits for " + std::to_string(prunable.count()) +
                     " prunable coordinates");
  }
  Eigen::VectorXf full = Eigen::VectorXf::Ones(prunable.dim());
  const auto& coords = prunable.coordinates();
  for (std::size_t j = 0; j < coords.size(); ++j) full[coords[j]] = bits_[j] ? 1.0f : 0.0f;
  return full;
}

bool Mask::subset_of(const Mask& other) const {
  if (other.prunable_count() != prunable_count()) return false;
  for (std::size_t j = 0; j < bits_.size(); ++j) {
    if (bits_[j] && !other.bits_[j]) return false;
  }
  return true;
}

Index kept_count(double keep_ratio, Index surviving) {
  const long double product = static_cast<long double>(keep_ratio) * static_cast<long double>(surviving);
  const long double slack = 1e-9L * std::max<long double>(1.0L, static_cast<long double>(surviving));
  return static_cast<Index>(std::ceil(product - slack));
}

std::pair<Mask, PruneEvent> global_magnitude_prune(const Eigen::VectorXf& params, const PrunableSet& prunable,
                                                   const Mask& mask, double keep_ratio, Index cycle) {
  if (!(keep_ratio > 0.0 && keep_ratio < 1.0)) {
    throw std::invalid_argument("prune: keep ratio must lie in (0, 1), got " + std::to_string(keep_ratio));
  }
  if (params.size() != prunable.dim() || mask.prunable_count() != prunable.count()) {
    throw ShapeError("prune: parameter/mask sizes do not match the prunable set");
  }
  const auto& coords = prunable.coordinates();
  std::vector<Index> alive;
  alive.reserve(static_cast<std::size_t>(mask.support()));
  for (Index j = 0; j < mask.prunable_count(); ++j) {
    if (mask.kept(j)) alive.push_back(j);
  }
  if (alive.empty()) throw std::invalid_argument("prune: no surviving prunable coordinates");

  const Index keep = std::min<Index>(kept_count(keep_ratio, static_cast<Index>(alive.size())),
                                     static_cast<Index>(alive.size()));
  auto magnitude = [&](Index slot) { return std::abs(params[coords[static_cast<std::size_t>(slot)]]); };
  // larger magnitude first; equal magnitudes ordered by coordinate
  auto before = [&](Index a, Index b) {
    const float ma = magnitude(a);
    const float mb = magnitude(b);
    return ma != mb ? ma > mb : a < b;
  };
  std::nth_element(alive.begin(), alive.begin() + (keep - 1), alive.end(), before);

  Mask next = Mask::ones(mask.prunable_count());
  for (Index j = 0; j < mask.prunable_count(); ++j) {
    if (!mask.kept(j)) next.set(j, false);
  }
  for (auto it = alive.begin() + keep; it != alive.end(); ++it) next.set(*it, false);

  PruneEvent ev;
  ev.cycle = cycle;
  ev.threshold = magnitude(alive[static_cast<std::size_t>(keep - 1)]);
  ev.previous_kept = static_cast<Index>(alive.size());
  ev.kept = next.support();
  ev.sparsity = sparsity_of(next);
  return {std::move(next), ev};
}

double sparsity_of(const Mask& mask) {
  if (mask.prunable_count() == 0) return 0.0;
  return 1.0 - static_cast<double>(mask.support()) / static_cast<double>(mask.prunable_count());
}

double sparsity_after_cycles(double keep_ratio, Index cycles) {
  if (cycles < 0) throw std::invalid_argument("sparsity_after_cycles: negative cycle count");
  return 1.0 - std::pow(keep_ratio, static_cast<double>(cycles));
}

Mask transplant_mask(const Mask& mask, std::uint64_t source_spec_digest, const ModelSpec& target) {
  if (source_spec_digest != target.digest()) {
    throw std::invalid_argument("transplant_mask: source mask belongs to a different model spec");
  }
  return mask;
}

}  // namespace swamp

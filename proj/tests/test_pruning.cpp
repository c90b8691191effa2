#include "swamp/pruning.hpp"
#include "swamp/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace swamp;

namespace {

// Independent oracle: sort all surviving slots by (|w| desc, index asc) and keep a prefix.
Mask oracle_prune(const Eigen::VectorXf& w, const PrunableSet& set, const Mask& mask, Index keep) {
  std::vector<Index> alive;
  const auto& coords = set.coordinates();
  for (Index s = 0; s < mask.prunable_count(); ++s) {
    if (mask.kept(s)) alive.push_back(s);
  }
  std::stable_sort(alive.begin(), alive.end(), [&](Index a, Index b) {
    return std::abs(w[coords[static_cast<std::size_t>(a)]]) > std::abs(w[coords[static_cast<std::size_t>(b)]]);
  });
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(mask.prunable_count()), 0);
  for (Index i = 0; i < keep; ++i) bits[static_cast<std::size_t>(alive[static_cast<std::size_t>(i)])] = 1;
  return Mask::from_bits(bits);
}

}  // namespace

TEST_CASE("kept count is ceil(alpha k) without spurious round-up") {
  CHECK(kept_count(0.8, 10) == 8);
  CHECK(kept_count(0.8, 7) == 6);
  CHECK(kept_count(0.8, 5) == 4);
  CHECK(kept_count(0.8, 1) == 1);
  CHECK(kept_count(0.5, 3) == 2);
  CHECK(kept_count(0.8, 10000) == 8000);
  CHECK(kept_count(0.8, 8000) == 6400);
  CHECK(kept_count(0.8, 6400) == 5120);
  CHECK(kept_count(0.8, 5120) == 4096);
}

TEST_CASE("pruning keeps the largest magnitudes globally") {
  // two "layers" of different scale; global ranking ignores layer boundaries
  Eigen::VectorXf w(8);
  w << 0.1f, -5.0f, 0.2f, 0.3f, 10.0f, -0.05f, 7.0f, 0.01f;
  const PrunableSet set(8, {0, 1, 2, 3, 4, 5, 6, 7});
  const auto [m, ev] = global_magnitude_prune(w, set, Mask::ones(8), 0.5, 0);
  CHECK(ev.kept == 4);
  CHECK(ev.previous_kept == 8);
  CHECK(m.kept(1));
  CHECK(m.kept(4));
  CHECK(m.kept(6));
  CHECK(m.kept(3));
  CHECK_FALSE(m.kept(2));
  CHECK(ev.threshold == doctest::Approx(0.3));
  CHECK(ev.sparsity == doctest::Approx(0.5));
}

TEST_CASE("ties keep the lower coordinate") {
  Eigen::VectorXf w = Eigen::VectorXf::Constant(5, 1.0f);
  const PrunableSet set(5, {0, 1, 2, 3, 4});
  const auto [m, ev] = global_magnitude_prune(w, set, Mask::ones(5), 0.6, 0);
  CHECK(ev.kept == 3);
  CHECK(m.kept(0));
  CHECK(m.kept(1));
  CHECK(m.kept(2));
  CHECK_FALSE(m.kept(3));
}

TEST_CASE("non-prunable coordinates are never masked") {
  Eigen::VectorXf w(4);
  w << 0.0f, 9.0f, 0.0f, 1.0f;
  const PrunableSet set(4, {1, 3});
  const auto [m, ev] = global_magnitude_prune(w, set, Mask::ones(2), 0.5, 0);
  const Eigen::VectorXf e = m.expand(set);
  CHECK(e[0] == 1.0f);
  CHECK(e[2] == 1.0f);
  CHECK(e[1] == 1.0f);
  CHECK(e[3] == 0.0f);
}

TEST_CASE("property: random weights, many cycles, against the sorting oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream r(seed, 99);
    const Index d = 500 + static_cast<Index>(r.below(500));
    Eigen::VectorXf w(d);
    for (Index i = 0; i < d; ++i) w[i] = static_cast<float>(r.normal());
    for (Index i = 0; i < d; i += 7) w[i] = 0.25f;  // force ties
    std::vector<Index> coords;
    for (Index i = 0; i < d; ++i) {
      if (i % 5 != 4) coords.push_back(i);
    }
    const PrunableSet set(d, coords);
    Mask mask = Mask::ones(set.count());
    for (Index c = 0; c < 12; ++c) {
      const Index k = mask.support();
      const auto [next, ev] = global_magnitude_prune(w, set, mask, 0.8, c);
      CHECK(next.support() == static_cast<Index>(std::ceil(0.8 * static_cast<double>(k) - 1e-9)));
      CHECK(next.subset_of(mask));
      CHECK(next == oracle_prune(w, set, mask, ev.kept));
      CHECK(ev.sparsity == doctest::Approx(sparsity_of(next)));
      mask = next;
    }
  }
}

TEST_CASE("pruning argument checks") {
  Eigen::VectorXf w = Eigen::VectorXf::Ones(3);
  const PrunableSet set(3, {0, 1, 2});
  CHECK_THROWS(global_magnitude_prune(w, set, Mask::ones(3), 0.0, 0));
  CHECK_THROWS(global_magnitude_prune(w, set, Mask::ones(3), 1.0, 0));
  CHECK_THROWS(global_magnitude_prune(w, set, Mask::from_bits({0, 0, 0}), 0.8, 0));
  CHECK_THROWS(global_magnitude_prune(w, set, Mask::ones(2), 0.8, 0));
}

TEST_CASE("sparsity accounting") {
  CHECK(sparsity_of(Mask::from_bits({1, 0, 0, 1})) == 0.5);
  CHECK(sparsity_of(Mask::ones(0)) == 0.0);
  CHECK(sparsity_after_cycles(0.8, 0) == 0.0);
  CHECK(sparsity_after_cycles(0.8, 3) == doctest::Approx(0.488));
  CHECK(sparsity_after_cycles(0.8, 13) == doctest::Approx(1.0 - std::pow(0.8, 13)));
  CHECK_THROWS(sparsity_after_cycles(0.8, -1));
}

TEST_CASE("mask transplantation checks the model digest") {
  const ModelSpec a{{2}, {LayerSpec::dense(2, 4), LayerSpec::relu(), LayerSpec::dense(4, 2)}, 2};
  ModelSpec b = a;
  b.layers[0] = LayerSpec::dense(2, 5);
  b.layers[2] = LayerSpec::dense(5, 2);
  const Mask m = Mask::from_bits(std::vector<std::uint8_t>(16, 1));
  CHECK(transplant_mask(m, a.digest(), a) == m);
  CHECK_THROWS(transplant_mask(m, a.digest(), b));
}

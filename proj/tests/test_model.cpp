#include "swamp/model.hpp"
#include "swamp/rng.hpp"

#include <doctest.h>

#include <numeric>

using namespace swamp;

namespace {

ModelSpec mlp(Index in = 2, Index h = 8, Index k = 3) {
  return {{in}, {LayerSpec::dense(in, h), LayerSpec::relu(), LayerSpec::dense(h, h), LayerSpec::relu(),
                 LayerSpec::dense(h, k)},
          k};
}

ModelSpec cnn() {
  return {{1, 6, 6},
          {LayerSpec::conv2d(1, 4, 3), LayerSpec::relu(), LayerSpec::conv2d(4, 2, 3, Padding::Valid),
           LayerSpec::flatten(), LayerSpec::dense(32, 5)},
          5};
}

Tensorf random_batch(Shape shape, std::uint64_t seed) {
  Tensorf t(std::move(shape));
  RngStream r(seed, 0);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(r.normal());
  return t;
}

}  // namespace

TEST_CASE("canonical form and digest") {
  CHECK(mlp().canonical() == "in=2;dense:2:8,relu,dense:8:8,relu,dense:8:3;k=3");
  CHECK(cnn().canonical() == "in=1x6x6;conv:1:4:3:same,relu,conv:4:2:3:valid,flatten,dense:32:5;k=5");
  CHECK(mlp().digest() == mlp().digest());
  CHECK(mlp().digest() != mlp(2, 9).digest());
}

TEST_CASE("validate names the two layers that do not compose") {
  ModelSpec bad = mlp();
  bad.layers[2] = LayerSpec::dense(7, 8);
  CHECK_THROWS_WITH_AS(validate(bad), doctest::Contains("layer 1 (relu) -> layer 2 (dense:7:8)"), ShapeError);
  ModelSpec wrong_k = mlp();
  wrong_k.classes = 4;
  CHECK_THROWS_AS(validate(wrong_k), ShapeError);
  const auto shapes = validate(cnn());
  CHECK(shapes[0] == Shape{4, 6, 6});
  CHECK(shapes[2] == Shape{2, 4, 4});
}

TEST_CASE("layout is contiguous and sized by the architecture") {
  const auto layout = param_layout(mlp());
  Index expected = 0;
  for (const auto& s : layout) {
    CHECK(s.offset == expected);
    expected += s.size();
  }
  CHECK(expected == 2 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
  CHECK(layout[0].name == "layer0.weight");
  CHECK(layout[0].shape == Shape{2, 8});
  const auto conv = param_layout(cnn());
  CHECK(conv[0].shape == Shape{4, 1, 3, 3});
}

TEST_CASE("flatten inverts unflatten") {
  const Model m = build_model(cnn(), 3);
  const auto tensors = unflatten(m.params);
  CHECK(flatten(m.params.segments, tensors) == m.params.values);
  auto broken = tensors;
  broken[0] = Tensorf({3, 1, 3, 3});
  CHECK_THROWS_AS(flatten(m.params.segments, broken), ShapeError);
}

TEST_CASE("prunable scope") {
  const auto layout = param_layout(cnn());
  const PrunableSet autos = make_prunable_set(layout);
  CHECK(autos.count() == 4 * 9 + 2 * 4 * 9);  // conv weights only
  CHECK(make_prunable_set(layout, PrunableKinds::DenseAndConv).count() == autos.count() + 32 * 5);
  const auto dense = param_layout(mlp());
  CHECK(make_prunable_set(dense).count() == 16 + 64 + 24);
  const Eigen::VectorXf decay = weight_decay_scope(dense);
  CHECK(decay.sum() == doctest::Approx(16 + 64 + 24));
  CHECK(decay[dense[1].offset] == 0.0f);  // bias
}

TEST_CASE("initialization is seeded, bounded and leaves biases at zero") {
  const Model a = build_model(mlp(), 11);
  const Model b = build_model(mlp(), 11);
  const Model c = build_model(mlp(), 12);
  CHECK(a.params.values == b.params.values);
  CHECK(a.params.values != c.params.values);
  for (const auto& s : a.params.segments) {
    const auto v = a.params.values.segment(s.offset, s.size());
    if (s.role == SegmentRole::Bias) {
      CHECK(v.isZero());
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(s.shape[0]));
      CHECK(v.cwiseAbs().maxCoeff() <= bound);
    }
  }
}

TEST_CASE("masked forward equals the forward of explicitly zeroed weights") {
  const Model m = build_model(cnn(), 5, PrunableKinds::DenseAndConv);
  Eigen::VectorXf mask = Eigen::VectorXf::Ones(m.params.dim());
  for (Index i = 0; i < mask.size(); i += 3) mask[i] = 0.0f;
  ParamVector zeroed = m.params;
  zeroed.values = zeroed.values.cwiseProduct(mask);
  const Tensorf x = random_batch({4, 1, 6, 6}, 1);
  const Tensorf a = forward_logits(cnn(), m.params, &mask, x);
  const Tensorf b = forward_logits(cnn(), zeroed, nullptr, x);
  CHECK(a.shape() == Shape{4, 5});
  CHECK(a.data() == b.data());
}

TEST_CASE("loss gradient matches finite differences and is zero on masked coordinates") {
  const ModelSpec spec = mlp(3, 5, 3);
  Model m = build_model(spec, 9);
  // zero biases put samples with a dead first layer exactly on the ReLU kink
  m.params.values += 0.1f * random_batch({m.params.dim()}, 4).data();
  const Tensorf x = random_batch({6, 3}, 2);
  const std::vector<int> y = {0, 1, 2, 0, 1, 2};
  Eigen::VectorXf mask = Eigen::VectorXf::Ones(m.params.dim());
  mask[0] = mask[4] = 0.0f;
  Eigen::VectorXf g;
  loss_and_grad(spec, m.params, &mask, x, y, &g);
  CHECK(g[0] == 0.0f);
  CHECK(g[4] == 0.0f);
  auto loss = [&](const Eigen::VectorXf& w) {
    ParamVector p{m.params.segments, w};
    return loss_and_grad(spec, p, &mask, x, y, nullptr);
  };
  const Eigen::VectorXf fd = finite_diff_grad<float>(loss, m.params.values, 1e-2f);
  for (Index i = 0; i < g.size(); ++i) {
    if (mask[i] == 0.0f) continue;
    CHECK(std::abs(g[i] - fd[i]) <= 2e-3f * std::max(1.0f, std::abs(fd[i])));
  }
}

TEST_CASE("cross-entropy of uniform logits is ln K; labels are range checked") {
  const Tensorf z({2, 4});
  CHECK(loss_cross_entropy(z, std::vector<int>{0, 3}) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_WITH_AS(loss_cross_entropy(z, std::vector<int>{0, 4}), doctest::Contains("index 1"), std::out_of_range);
  CHECK_THROWS_AS(loss_cross_entropy(z, std::vector<int>{0}), ShapeError);
}

TEST_CASE("batch with the wrong feature shape is refused") {
  const Model m = build_model(mlp(), 1);
  CHECK_THROWS_AS(forward_logits(mlp(), m.params, nullptr, Tensorf({2, 3})), ShapeError);
}

#include "graph_gen.hpp"

#include <doctest.h>

using namespace swamp;

TEST_CASE("matmul by identity returns the left operand") {
  Tape<float> t;
  auto a = t.constant(Tensorf({2, 2}, {1, 2, 3, 4}));
  auto i = t.constant(Tensorf({2, 2}, {1, 0, 0, 1}));
  const auto& out = t.value(t.matmul(a, i));
  CHECK(out.shape() == Shape{2, 2});
  CHECK(out.data()[0] == 1);
  CHECK(out.data()[1] == 2);
  CHECK(out.data()[2] == 3);
  CHECK(out.data()[3] == 4);
}

TEST_CASE("relu and reduce_mean") {
  Tape<float> t;
  auto r = t.relu(t.constant(Tensorf({3}, {-1, 0, 2})));
  CHECK(t.value(r).data()[0] == 0);
  CHECK(t.value(r).data()[1] == 0);
  CHECK(t.value(r).data()[2] == 2);
  auto m = t.reduce_mean(t.constant(Tensorf({3}, {2, 4, 6})));
  CHECK(t.value(m).item() == 4);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tape<float> t;
  auto a = t.constant(Tensorf({2, 3}));
  auto b = t.constant(Tensorf({2, 3}));
  try {
    t.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(a, t.constant(Tensorf({3, 2}))), ShapeError);
}

TEST_CASE("backward on a non-scalar output is refused") {
  Tape<float> t;
  auto a = t.leaf(Tensorf({2}, {1, 2}));
  CHECK_THROWS_AS(t.backward(t.relu(a)), ShapeError);
}

TEST_CASE("gradient of a shared node accumulates over both uses") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({1}, {3.0}));
  auto y = t.reduce_sum(t.mul(x, x));  // x^2
  t.backward(y);
  CHECK(t.grad(x).data()[0] == doctest::Approx(6.0));
}

TEST_CASE("constants receive zero gradient") {
  Tape<double> t;
  auto c = t.constant(Tensor<double>({2}, {1.0, 2.0}));
  auto w = t.leaf(Tensor<double>({2}, {3.0, 4.0}));
  t.backward(t.reduce_sum(t.mul(c, w)));
  CHECK(t.grad(c).data().isZero());
  CHECK(t.grad(w).data()[1] == doctest::Approx(2.0));
}

TEST_CASE("log_softmax rows exponentiate to one") {
  Tape<double> t;
  auto z = t.log_softmax(t.constant(Tensor<double>({2, 3}, {1, 2, 3, -5, 0, 5})));
  const auto m = t.value(z).matrix();
  for (Index r = 0; r < 2; ++r) CHECK(m.row(r).array().exp().sum() == doctest::Approx(1.0));
}

TEST_CASE("conv2d same padding with a centred delta kernel is the identity") {
  Tape<float> t;
  Tensorf x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensorf k({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  const auto& y = t.value(t.conv2d(t.constant(x), t.constant(k), Padding::Same));
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK((y.data() - x.data()).isZero());
  Tape<float> v;
  const auto& z = v.value(v.conv2d(v.constant(x), v.constant(k), Padding::Valid));
  CHECK(z.shape() == Shape{1, 1, 1, 1});
  CHECK(z.data()[0] == 5);
}

TEST_CASE("double-precision reverse mode matches central differences tightly") {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto d = testing::random_graph(s);
    const Eigen::VectorXd w = testing::flat_leaves(d).cast<double>();
    if (testing::kink_margin(d, w) < 1e-4) continue;
    const Eigen::VectorXd g = testing::graph_grad<double>(d, w);
    const Eigen::VectorXd fd = finite_diff_grad<double>(
        [&](const Eigen::VectorXd& v) { return testing::graph_loss<double>(d, v); }, w, 1e-6, true);
    CHECK((g - fd).cwiseAbs().maxCoeff() <= 1e-7 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("float reverse mode against the double oracle") {
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(testing::check_random_graph(s).max_rel_error <= 1e-4);
}

TEST_CASE("finite differences refuse non-finite probes") {
  Eigen::VectorXd w(2);
  w << 1.0, 1e-4;
  auto f = [](const Eigen::VectorXd& v) { return std::log(v[1]); };
  CHECK_THROWS_WITH_AS(finite_diff_grad<double>(f, w, 1e-3), doctest::Contains("coordinate 1"), NonFiniteError);
  CHECK_THROWS(finite_diff_grad<double>(f, w, 0.0));
}

TEST_CASE("tensor construction checks sizes") {
  CHECK_THROWS_AS(Tensorf({2, 2}, {1, 2, 3}), ShapeError);
  Tensorf a({2, 3});
  CHECK(a.size() == 6);
  CHECK(a.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS(a.reshaped({4, 2}));
}

#include <cmath>

#include <doctest.h>

#include "oracles.hpp"
#include "tern/adam.hpp"
#include "tern/autodiff.hpp"
#include "tern/error.hpp"
#include "tern/gradcheck.hpp"
#include "tern/tensor.hpp"

using namespace tern;

TEST_CASE("softmax basics") {
  SUBCASE("uniform input") {
    const Tensor out = softmax(Tensor::row({0.0, 0.0, 0.0}), 1);
    for (double v : out.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("analytic exponent ratio") {
    const Tensor out = softmax(Tensor::row({0.0, std::log(2.0)}), 1);
    CHECK(out.data[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(out.data[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("matches direct exp/normalize oracle") {
    Rng rng(41);
    const std::vector<double> x = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
                                   rng.uniform(-2, 2)};
    const Tensor out = softmax(Tensor::row(x), 1);
    const std::vector<double> expect = oracle::softmax_direct(x);
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(out.data[i] - expect[i]) < 1e-12);
    }
  }
  SUBCASE("rows sum to 1 for magnitudes up to 1e4") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = oracle::random_tensor({3, 5}, rng, 1e4);
      const Tensor out = softmax(x, 1);
      for (int r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 5; ++c) sum += out.at(r, c);
        CHECK(std::abs(sum - 1.0) < 1e-6);
        for (int c = 0; c < 5; ++c) CHECK(out.at(r, c) >= 0.0);
      }
    }
  }
  SUBCASE("softmax over axis 0") {
    const Tensor x = Tensor::matrix(2, 2, {0.0, 5.0, std::log(2.0), 5.0});
    const Tensor out = softmax(x, 0);
    CHECK(out.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(out.at(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("invalid axis") {
    CHECK_THROWS_AS(softmax(Tensor::row({1.0}), 2), ArgumentError);
    CHECK_THROWS_AS(softmax(Tensor::row({1.0}), -1), ArgumentError);
  }
}

TEST_CASE("layer_norm basics") {
  const Tensor gain = Tensor::row({1.0, 1.0, 1.0});
  const Tensor bias = Tensor::row({0.0, 0.0, 0.0});
  SUBCASE("constant vector becomes zero") {
    const Tensor out = layer_norm(Tensor::row({4.0, 4.0, 4.0}), gain, bias, 1e-5);
    for (double v : out.data) CHECK(std::abs(v) < 1e-9);
  }
  SUBCASE("mean 0 and variance 1") {
    const Tensor out = layer_norm(Tensor::row({1.0, 2.0, 3.0}), gain, bias, 1e-8);
    double mean = 0.0;
    for (double v : out.data) mean += v;
    mean /= 3.0;
    double var = 0.0;
    for (double v : out.data) var += (v - mean) * (v - mean);
    var /= 3.0;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
  SUBCASE("matches direct mean/var oracle") {
    Rng rng(11);
    std::vector<double> x(8);
    for (double& v : x) v = rng.uniform(-3, 3);
    const Tensor g8 = Tensor::full({1, 8}, 1.0);
    const Tensor b8 = Tensor::zeros({1, 8});
    const Tensor out = layer_norm(Tensor::row(x), g8, b8, 1e-9);
    const std::vector<double> expect = oracle::layer_norm_direct(x, 1e-9);
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::abs(out.data[i] - expect[i]) < 1e-10);
  }
  SUBCASE("gain and bias applied") {
    const Tensor out = layer_norm(Tensor::row({1.0, 2.0, 3.0}), Tensor::row({2.0, 2.0, 2.0}),
                                  Tensor::row({1.0, 1.0, 1.0}), 1e-8);
    const std::vector<double> base = oracle::layer_norm_direct({1.0, 2.0, 3.0}, 1e-8);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(out.data[i] == doctest::Approx(2.0 * base[i] + 1.0).epsilon(1e-9));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(layer_norm(Tensor::row({1.0, 2.0}), gain, bias, 1e-5), ArgumentError);
  }
}

TEST_CASE("forward ops are pure") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({4, 6}, rng);
  const Tensor a = softmax(x, 1);
  const Tensor b = softmax(x, 1);
  CHECK(a.data == b.data);

  Graph g1(Precision::f32), g2(Precision::f32);
  const auto n1 = g1.l2_normalize_rows(g1.relu(g1.constant(x)));
  const auto n2 = g2.l2_normalize_rows(g2.relu(g2.constant(x)));
  CHECK(g1.value(n1).data == g2.value(n2).data);
}

TEST_CASE("autodiff sum rule: grad of summed losses equals sum of grads") {
  Rng rng(17);
  ParamStore store;
  Parameter& p = store.create("p", oracle::random_tensor({2, 3}, rng));
  const Tensor c1 = oracle::random_tensor({2, 3}, rng);
  const Tensor c2 = oracle::random_tensor({2, 3}, rng);

  // Combined: d(l1 + l2)/dp in one graph.
  {
    Graph g;
    const auto l1 = g.sum_all(g.mul(g.param(p), g.constant(c1)));
    const auto l2 = g.sum_all(g.mul(g.param(p), g.constant(c2)));
    g.backward(g.add(l1, l2));
  }
  const std::vector<double> combined = p.grad.data;
  store.zero_grads();

  // Separate graphs, caller sums the gradients.
  {
    Graph g;
    g.backward(g.sum_all(g.mul(g.param(p), g.constant(c1))));
  }
  {
    Graph g;
    g.backward(g.sum_all(g.mul(g.param(p), g.constant(c2))));
  }
  CHECK(p.grad.data == combined);  // exact in 64-bit
}

TEST_CASE("check_gradients on elementary functions") {
  Rng rng(23);
  SUBCASE("linear function has all-ones gradient") {
    ParamStore store;
    Parameter& x = store.create("x", oracle::random_tensor({1, 5}, rng));
    std::vector<Parameter*> params = {&x};
    const auto report = check_gradients(
        [&](Graph& g) { return g.sum_all(g.param(x)); }, params, 1e-5, 0, rng);
    CHECK(report.coords_checked == 5);
    CHECK(report.max_rel_err < 1e-9);
    for (double v : x.grad.data) CHECK(v == doctest::Approx(1.0));
  }
  SUBCASE("composite ops: matmul, relu, layer norm, softmax, l2 norm") {
    ParamStore store;
    Parameter& w = store.create("w", oracle::random_tensor({4, 4}, rng));
    Parameter& gain = store.create("gain", Tensor::full({1, 4}, 1.0));
    Parameter& bias = store.create("bias", Tensor::zeros({1, 4}));
    const Tensor x = oracle::random_tensor({3, 4}, rng);
    std::vector<Parameter*> params = {&w, &gain, &bias};
    const auto report = check_gradients(
        [&](Graph& g) {
          auto h = g.matmul(g.constant(x), g.param(w));
          h = g.relu(h);
          h = g.layer_norm_rows(h, g.param(gain), g.param(bias), 1e-5);
          h = g.softmax_rows(h);
          h = g.l2_normalize_rows(h);
          return g.sum_all(g.mul(h, h));
        },
        params, 1e-5, 0, rng);
    CHECK(report.max_rel_err < 1e-4);
  }
  SUBCASE("cosine similarity composite") {
    ParamStore store;
    Parameter& a = store.create("a", oracle::random_tensor({1, 6}, rng));
    Parameter& b = store.create("b", oracle::random_tensor({1, 6}, rng));
    std::vector<Parameter*> params = {&a, &b};
    const auto report = check_gradients(
        [&](Graph& g) {
          const auto an = g.l2_normalize_rows(g.param(a));
          const auto bn = g.l2_normalize_rows(g.param(b));
          return g.sum_all(g.mul(an, bn));
        },
        params, 1e-5, 0, rng);
    CHECK(report.max_rel_err < 1e-4);
  }
  SUBCASE("eps outside [1e-7, 1e-4] rejected") {
    ParamStore store;
    Parameter& x = store.create("x", Tensor::row({1.0}));
    std::vector<Parameter*> params = {&x};
    CHECK_THROWS_AS(check_gradients([&](Graph& g) { return g.sum_all(g.param(x)); }, params,
                                    1e-2, 0, rng),
                    ArgumentError);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameter unchanged") {
    ParamStore store;
    Parameter& x = store.create("x", Tensor::row({0.7, -0.3}));
    const std::vector<double> before = x.value.data;
    AdamState adam;
    adam.lr = 0.1;
    adam_step(adam, store);
    CHECK(x.value.data == before);
    CHECK(adam.step == 1);
  }
  SUBCASE("single step moves by about lr") {
    // Hand evaluation: m-hat = v-hat = 1 on the first unit-gradient step, so
    // the update is lr / (1 + eps).
    ParamStore store;
    Parameter& x = store.create("x", Tensor::row({0.5}));
    x.grad.data[0] = 1.0;
    AdamState adam;
    adam.lr = 1e-3;
    adam_step(adam, store);
    CHECK(std::abs((0.5 - x.value.data[0]) - adam.lr) < 1e-8);
    CHECK(x.grad.data[0] == 1.0);  // gradients untouched
  }
  SUBCASE("descends x^2 from 1 to below 0.5 in 100 steps") {
    ParamStore store;
    Parameter& x = store.create("x", Tensor::row({1.0}));
    AdamState adam;
    adam.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
      x.grad.data[0] = 2.0 * x.value.data[0];
      adam_step(adam, store);
      x.grad.data[0] = 0.0;
    }
    CHECK(std::abs(x.value.data[0]) < 0.5);
    CHECK(adam.step == 100);
  }
  SUBCASE("non-finite gradient names the parameter") {
    ParamStore store;
    Parameter& x = store.create("bad.param", Tensor::row({1.0}));
    x.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState adam;
    CHECK_THROWS_WITH_AS(adam_step(adam, store),
                         doctest::Contains("bad.param"), NumericError);
  }
}

TEST_CASE("f32 mode quantizes values") {
  Graph g(Precision::f32);
  const auto n = g.scale(g.constant(Tensor::row({0.1})), 3.0);
  const double v = g.value(n).data[0];
  CHECK(v == static_cast<double>(static_cast<float>(v)));
  CHECK(v == static_cast<double>(0.1f * 3.0f));
}

TEST_CASE("graph op error paths") {
  Graph g;
  const auto a = g.constant(Tensor::row({1.0, 2.0}));
  const auto b = g.constant(Tensor::row({1.0, 2.0, 3.0}));
  CHECK_THROWS_AS(g.add(a, b), ArgumentError);
  CHECK_THROWS_AS(g.matmul(a, b), ArgumentError);
  CHECK_THROWS_AS(g.l2_normalize_rows(g.constant(Tensor::row({0.0, 0.0}))), ArgumentError);
  const std::vector<uint8_t> none = {0, 0};
  CHECK_THROWS_AS(g.softmax_rows(a, &none), ArgumentError);
  CHECK_THROWS_AS(g.backward(a), ArgumentError);  // non-scalar loss
}

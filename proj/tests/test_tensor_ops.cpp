#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "oscdet/error.hpp"
#include "oscdet/nn/ops.hpp"
#include "oscdet/rng.hpp"

using namespace oscdet;
using namespace oscdet::nn;

namespace {

Tensor from(Shape s, const std::vector<double>& v) {
  return Tensor(std::move(s), Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size())));
}

std::vector<double> values(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4}), ShapeError);
  CHECK_THROWS_AS(Tensor({3, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, Eigen::VectorXd::Zero(3)), ShapeError);

  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);  // row-major
  CHECK(t.matrix().rows() == 2);
  CHECK(t.matrix().cols() == 12);
  CHECK(t.reshaped({24}).dim(0) == 24);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
}

TEST_CASE("conv1d examples") {
  const Tensor x = from({4, 1}, {1, 2, 3, 4});
  const Tensor k = from({3, 1, 1}, {1, 0, -1});
  CHECK(values(conv1d(x, k, Tensor({1}))) == std::vector<double>{-2, -2});

  const Tensor bias = from({2}, {0.25, -3});
  const Tensor y = conv1d(x, Tensor({3, 1, 2}), bias);
  for (Index i = 0; i < y.dim(0); ++i) {
    CHECK(y(i, 0) == 0.25);
    CHECK(y(i, 1) == -3);
  }

  const Tensor id = conv1d(x, from({1, 1, 1}, {1}), Tensor({1}));
  CHECK(values(id) == values(x));
}

TEST_CASE("conv1d rejects an input shorter than the kernel") {
  try {
    (void)conv1d(Tensor({2, 1}), Tensor({3, 1, 1}), Tensor({1}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('2') != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
  CHECK_THROWS_AS(conv1d(Tensor({5, 2}), Tensor({3, 1, 1}), Tensor({1})), ShapeError);
}

TEST_CASE("maxpool1d examples") {
  CHECK(values(maxpool1d(from({4, 1}, {1, 3, 2, 5}), 2)) == std::vector<double>{3, 5});
  CHECK(values(maxpool1d(from({3, 1}, {7, 1, 2}), 2)) == std::vector<double>{7});
  const Tensor c = maxpool1d(Tensor::constant({9, 2}, 4.5), 3);
  CHECK(c.dim(0) == 3);
  CHECK((c.vec().array() == 4.5).all());
}

TEST_CASE("dense examples") {
  Rng rng = make_rng(3);
  std::normal_distribution<double> d;
  Tensor x({3});
  for (Index i = 0; i < 3; ++i) x[i] = d(rng);

  Tensor eye({3, 3});
  for (Index i = 0; i < 3; ++i) eye(i, i) = 1.0;
  CHECK(values(dense(x, eye, Tensor({3}))) == values(x));

  const Tensor b = from({2}, {1.5, -2});
  CHECK(values(dense(x, Tensor({3, 2}), b)) == values(b));

  const Tensor w = from({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor v = from({3}, {1, -1, 2});
  // hand-expanded: o0 = 1*1 + 3*-1 + 5*2, o1 = 2*1 + 4*-1 + 6*2
  CHECK(values(dense(v, w, b)) == std::vector<double>{8 + 1.5, 10 - 2});

  CHECK_THROWS_AS(dense(Tensor({4}), w, b), ShapeError);
}

TEST_CASE("relu, flatten and dropout") {
  CHECK(values(relu(from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  const Tensor m = from({2, 2}, {1, 2, 3, 4});
  const Tensor f = flatten(m);
  CHECK(f.rank() == 1);
  CHECK(values(f) == values(m));

  Rng rng = make_rng(9);
  Tensor mask;
  const Tensor x = from({4}, {1, -2, 3, -4});
  CHECK(values(dropout(x, 0.0, Mode::train, rng, mask)) == values(x));
  CHECK(values(dropout(x, 0.5, Mode::infer, rng, mask)) == values(x));

  Tensor big = Tensor::constant({200000}, 1.0);
  const Tensor y = dropout(big, 0.5, Mode::train, rng, mask);
  CHECK(std::abs(y.vec().mean() - 1.0) < 0.05);
  CHECK((y.vec().array() == 0.0 || y.vec().array() == 2.0).all());
  CHECK(values(apply_mask(big, mask)) == values(y));
}

TEST_CASE("softmax examples") {
  CHECK(values(softmax(from({2}, {0, 0}))) == std::vector<double>{0.5, 0.5});
  const Tensor p = softmax(from({2}, {std::log(2.0), 0}));
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor q = softmax(from({2}, {1000, 0}));
  CHECK(q.all_finite());
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] >= 0.0);
  CHECK(q[1] < 1e-300);
}

TEST_CASE("softmax sums to one and stays positive") {
  Rng rng = make_rng(11);
  for (int i = 0; i < 500; ++i) {
    std::normal_distribution<double> d(0.0, i % 3 == 0 ? 50.0 : 2.0);
    Tensor x({2 + i % 15});
    for (Index j = 0; j < x.size(); ++j) x[j] = d(rng);
    const Tensor p = softmax(x);
    CHECK(std::abs(p.vec().sum() - 1.0) <= 1e-12);
    CHECK((p.vec().array() >= 0.0).all());
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(from({2}, {1, 0}), 0) == 0.0);
  CHECK(cross_entropy(from({2}, {0.5, 0.5}), 1) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(cross_entropy(from({2}, {0, 1}), 0) == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy(from({2}, {0, 1}), 0) == doctest::Approx(27.631021).epsilon(1e-7));
  CHECK_THROWS_AS(cross_entropy(from({2}, {0.5, 0.5}), 2), ConfigError);
  CHECK_THROWS_AS(cross_entropy(from({2}, {0.5, 0.5}), -1), ConfigError);
  CHECK_THROWS_AS(cross_entropy(from({2}, {0.5, 0.6}), 0), NumericError);
}

TEST_CASE("kernels match naive references") {
  Rng rng = make_rng(17);
  std::mt19937_64 orng(18);
  std::uniform_int_distribution<Index> small(1, 6), len_d(1, 25);
  for (int i = 0; i < 300; ++i) {
    const Index k = small(rng), ch = small(rng), out = small(rng), len = k + len_d(rng) - 1;
    const auto x = oracle::randn(static_cast<std::size_t>(len * ch), orng);
    const auto w = oracle::randn(static_cast<std::size_t>(k * ch * out), orng);
    const auto b = oracle::randn(static_cast<std::size_t>(out), orng);
    const auto got = values(conv1d(from({len, ch}, x), from({k, ch, out}, w), from({out}, b)));
    const auto want = oracle::conv1d(x, len, ch, w, k, out, b);
    REQUIRE(got.size() == want.size());
    for (std::size_t j = 0; j < got.size(); ++j) CHECK(std::abs(got[j] - want[j]) <= 1e-12);

    const Index n = len_d(rng), m = small(rng);
    const auto dx = oracle::randn(static_cast<std::size_t>(n), orng);
    const auto dw = oracle::randn(static_cast<std::size_t>(n * m), orng);
    const auto db = oracle::randn(static_cast<std::size_t>(m), orng);
    const auto dgot = values(dense(from({n}, dx), from({n, m}, dw), from({m}, db)));
    const auto dwant = oracle::dense(dx, dw, static_cast<std::size_t>(m), db);
    for (std::size_t j = 0; j < dgot.size(); ++j) CHECK(std::abs(dgot[j] - dwant[j]) <= 1e-12);

    const Index pw = small(rng), plen = pw + len_d(rng) - 1;
    const auto px = oracle::randn(static_cast<std::size_t>(plen * ch), orng);
    CHECK(values(maxpool1d(from({plen, ch}, px), pw)) ==
          oracle::maxpool1d(px, static_cast<std::size_t>(plen), static_cast<std::size_t>(ch),
                            static_cast<std::size_t>(pw)));
  }
}

TEST_CASE("backward rules match naive transposes") {
  // conv1d is linear in x, so d<conv(x), g>/dx_j is <conv(e_j) without bias, g>.
  std::mt19937_64 orng(24);
  for (int i = 0; i < 50; ++i) {
    const Index len = 8, ch = 2, k = 3, out = 3;
    const auto x = oracle::randn(len * ch, orng), w = oracle::randn(k * ch * out, orng);
    const auto g = oracle::randn((len - k + 1) * out, orng);
    Tensor gk({k, ch, out}), gb({out});
    const Tensor gx = conv1d_backward(from({len, ch}, x), from({k, ch, out}, w), from({len - k + 1, out}, g), gk, gb);
    for (Index j = 0; j < len * ch; ++j) {
      std::vector<double> e(static_cast<std::size_t>(len * ch), 0.0);
      e[static_cast<std::size_t>(j)] = 1.0;
      const auto y = oracle::conv1d(e, len, ch, w, k, out, std::vector<double>(out, 0.0));
      double dot = 0;
      for (std::size_t t = 0; t < y.size(); ++t) dot += y[t] * g[t];
      CHECK(gx[j] == doctest::Approx(dot).epsilon(1e-12));
    }
    double gsum = 0;
    for (Index t = 0; t < len - k + 1; ++t) gsum += g[static_cast<std::size_t>(t * out)];
    CHECK(gb[0] == doctest::Approx(gsum));
  }
}

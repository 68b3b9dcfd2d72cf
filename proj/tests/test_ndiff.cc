#include <cmath>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "dopt/common.h"
#include "dopt/ndiff.h"

using namespace dopt;
using namespace dopt::nd;

namespace {

Tensor RandomParam(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(NumElements(shape));
  for (auto& x : v) x = lo + (hi - lo) * UniformUnit(rng);
  return Tensor::Parameter(std::move(shape), std::move(v));
}

// Reduces any tensor to a scalar with fixed random weights so every output
// element matters to the gradient check.
Tensor Probe(Tape& tape, const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.size());
  for (auto& x : w) x = UniformUnit(rng) - 0.5;
  return Sum(tape, Mul(tape, t, Tensor::Constant(t.shape(), std::move(w))));
}

double Check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params) {
  return FiniteDiffCheck(f, std::move(params), 1e-5);
}

// Relative error allowed per op at eps = 1e-5.
constexpr double kOpTolerance = 1e-4;

std::size_t Dim(Rng& rng) { return 1 + UniformIndex(rng, 4); }

}  // namespace

TEST_CASE("cosine of orthogonal vectors is zero") {
  Tape tape;
  const auto c = CosineSimilarity(tape, Tensor::Constant({2}, {1, 0}),
                                  Tensor::Constant({2}, {0, 1}));
  CHECK(c.item() == 0.0);
}

TEST_CASE("cross entropy of equal scores is ln n") {
  Tape tape;
  const auto s = Tensor::Constant({3}, {0.7, 0.7, 0.7});
  const auto p = Softmax(tape, s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.at(i) == doctest::Approx(1.0 / 3));
  for (std::size_t label = 0; label < 3; ++label) {
    CHECK(std::abs(CrossEntropy(tape, s, label).item() - std::log(3.0)) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one and lie in (0,1)") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const auto x = RandomParam({3, 7}, rng, -20, 20);
    const auto p = Softmax(tape, x);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) > 0.0);
        CHECK(p.at(r, c) < 1.0);
        sum += p.at(r, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cosine is bounded and symmetric") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const auto a = RandomParam({5}, rng, -3, 3);
    const auto b = RandomParam({5}, rng, -3, 3);
    const double ab = CosineSimilarity(tape, a, b).item();
    const double ba = CosineSimilarity(tape, b, a).item();
    CHECK(ab == ba);
    CHECK(ab <= 1.0 + 1e-9);
    CHECK(ab >= -1.0 - 1e-9);
  }
  Tape tape;
  const auto z = Tensor::Constant({3}, {0, 0, 0});
  CHECK(CosineSimilarity(tape, z, z).item() == 0.0);
}

TEST_CASE("sum has an all-ones gradient") {
  Tape tape;
  auto x = Tensor::Parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  tape.Backward(Sum(tape, x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  auto x = Tensor::Parameter({2}, {1, 2});
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.Backward(Sum(tape, Mul(tape, x, x)));
  }
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("unreachable parameter keeps a zero gradient") {
  Tape tape;
  auto x = Tensor::Parameter({2}, {1, 2});
  auto y = Tensor::Parameter({2}, {3, 4});
  tape.Backward(Sum(tape, x));
  for (double g : y.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects a non-scalar root") {
  Tape tape;
  auto x = Tensor::Parameter({2}, {1, 2});
  CHECK_THROWS_AS(tape.Backward(Tanh(tape, x)), std::invalid_argument);
}

TEST_CASE("shape mismatches name the op and shapes") {
  Tape tape;
  const auto a = Tensor::Zeros({2, 3});
  const auto b = Tensor::Zeros({2, 3});
  try {
    MatMul(tape, a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("MatMul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(Add(tape, a, Tensor::Zeros({2})), ShapeError);
  CHECK_THROWS_AS(Mul(tape, a, Tensor::Zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(ConcatRows(tape, {a, Tensor::Zeros({2, 4})}), ShapeError);
  CHECK_THROWS_AS(Reshape(tape, a, {5}), ShapeError);
  CHECK_THROWS_AS(CosineSimilarity(tape, a, Tensor::Zeros({5})), ShapeError);
  CHECK_THROWS(CrossEntropy(tape, Tensor::Zeros({3}), 3));
  const std::int32_t bad[] = {7};
  CHECK_THROWS_AS(EmbeddingLookup(tape, Tensor::Zeros({4, 2}), bad),
                  std::out_of_range);
}

TEST_CASE("quadratic gradient matches central differences") {
  auto x = Tensor::Parameter({}, {1.0});
  Tape tape;
  tape.Backward(Mul(tape, x, x));
  CHECK(std::abs(x.grad()[0] - 2.0) < 1e-8);
  x.zero_grad();
  const auto report = FiniteDiffCheck(
      [&](Tape& t) { return Mul(t, x, x); }, {x}, {"x"}, 1e-5);
  CHECK(report.max_rel_error < 1e-8);
  REQUIRE(report.entries.size() == 1);
  CHECK(report.entries[0].name == "x");
  CHECK(x.values()[0] == 1.0);  // restored
}

TEST_CASE("every op passes the finite-difference check on random shapes") {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = Dim(rng), k = Dim(rng), n = Dim(rng);
    const std::uint64_t probe = rng();
    auto a = RandomParam({m, k}, rng);
    auto b = RandomParam({k, n}, rng);
    auto bt = RandomParam({n, k}, rng);
    auto c = RandomParam({m, k}, rng);
    auto row = RandomParam({k}, rng);
    auto pos = RandomParam({m, k}, rng, 0.5, 2.0);
    auto gain = RandomParam({k}, rng, 0.5, 1.5);
    auto bias = RandomParam({k}, rng);
    auto table = RandomParam({6, k}, rng);
    auto vec = RandomParam({n + 1}, rng, -2, 2);
    auto s1 = RandomParam({}, rng);
    auto s2 = RandomParam({}, rng);

    auto P = [&](Tape& t, const Tensor& x) { return Probe(t, x, probe); };
    CAPTURE(trial);
    CHECK(Check([&](Tape& t) { return P(t, MatMul(t, a, b)); }, {a, b}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, MatMulTransposed(t, a, bt)); }, {a, bt}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Add(t, a, c)); }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Add(t, a, row)); }, {a, row}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Sub(t, a, c)); }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Mul(t, a, c)); }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Affine(t, a, -1.5, 0.3)); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Reshape(t, a, {m * k})); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, ConcatRows(t, {a, c})); }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, ConcatCols(t, {a, c})); }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Stack(t, {s1, s2, s1})); }, {s1, s2}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, SliceRows(t, a, m - 1, 1)); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, SliceCols(t, a, 0, k)); }, {a}) < kOpTolerance);
    const std::size_t rows[] = {m - 1, 0, m - 1};
    CHECK(Check([&](Tape& t) { return P(t, GatherRows(t, a, rows)); }, {a}) < kOpTolerance);
    const std::int32_t ids[] = {3, 0, 3, 5};
    CHECK(Check([&](Tape& t) { return P(t, EmbeddingLookup(t, table, ids)); }, {table}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Tanh(t, a)); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Sigmoid(t, a)); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Gelu(t, a)); }, {a}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Log(t, pos)); }, {pos}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return P(t, Softmax(t, a)); }, {a}) < kOpTolerance);
    if (k > 1) {
      CHECK(Check([&](Tape& t) { return P(t, LayerNorm(t, a, gain, bias)); },
                  {a, gain, bias}) < kOpTolerance);
    }
    CHECK(Check([&](Tape& t) {
            return CosineSimilarity(t, SliceRows(t, a, 0, 1), SliceRows(t, c, 0, 1));
          }, {a, c}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return CrossEntropy(t, vec, n); }, {vec}) < kOpTolerance);
    CHECK(Check([&](Tape& t) { return Mean(t, a); }, {a}) < kOpTolerance);
  }
}

TEST_CASE("chained matmul and tanh matches finite differences") {
  Rng rng(77);
  auto x = RandomParam({3, 4}, rng);
  auto w1 = RandomParam({4, 5}, rng);
  auto w2 = RandomParam({5, 2}, rng);
  const double err = Check(
      [&](Tape& t) {
        return Probe(t, MatMul(t, Tanh(t, MatMul(t, x, w1)), w2), 3);
      },
      {x, w1, w2});
  CHECK(err < 1e-6);
}

TEST_CASE("finite-difference error plateaus over an eps sweep") {
  Rng rng(31);
  auto x = RandomParam({2, 3}, rng);
  auto w = RandomParam({3, 3}, rng);
  auto f = [&](Tape& t) {
    return Probe(t, Softmax(t, Tanh(t, MatMul(t, x, w))), 8);
  };
  std::vector<double> errors;
  for (double eps : {1e-4, 1e-5, 1e-6}) {
    errors.push_back(FiniteDiffCheck(f, {x, w}, eps));
    MESSAGE("eps=" << eps << " max_rel_error=" << errors.back());
  }
  for (double e : errors) CHECK(e < 1e-4);
}

TEST_CASE("dropout with rate zero is the identity") {
  Rng rng(1);
  Tape tape;
  auto x = Tensor::Parameter({3}, {1, 2, 3});
  const auto y = Dropout(tape, x, 0.0, rng);
  CHECK(y.node() == x.node());
}

TEST_CASE("dropout keeps the expectation") {
  Rng rng(4);
  Tape tape;
  const auto x = Tensor::Constant({10000}, std::vector<double>(10000, 1.0));
  const auto y = Dropout(tape, x, 0.25, rng);
  double sum = 0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    sum += v;
    if (v == 0.0) ++zeros;
  }
  CHECK(sum / 10000 == doctest::Approx(1.0).epsilon(0.03));
  CHECK(zeros > 2200);
  CHECK(zeros < 2800);
}

TEST_CASE("forward values are bit-identical across runs") {
  Rng r1(5), r2(5);
  auto a1 = RandomParam({4, 4}, r1);
  auto a2 = RandomParam({4, 4}, r2);
  Tape t1, t2;
  const auto y1 = Softmax(t1, MatMul(t1, a1, a1));
  const auto y2 = Softmax(t2, MatMul(t2, a2, a2));
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == y2.at(i));
}

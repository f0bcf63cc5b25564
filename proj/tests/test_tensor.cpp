#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "tslab/ops.hpp"
#include "tslab/rng.hpp"
#include "tslab/tape.hpp"
#include "tslab/tensor.hpp"

using namespace tslab;

TEST_CASE("shape invariants") {
  Tensor t(Shape{2, 3});
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 0.0);
  CHECK_THROWS(Tensor(Shape{2, 0}));
  CHECK_THROWS(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}));
}

TEST_CASE("rng determinism and stream independence") {
  RngState a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngState c(42);
  c.next_u64();
  RngState d1 = c.derive("child");
  RngState d2 = RngState(42).derive("child");
  CHECK(d1.next_u64() == d2.next_u64());  // derivation ignores consumption

  RngState e(0), f(1);
  CHECK(e.next_u64() != f.next_u64());
}

TEST_CASE("rng uniform and gaussian ranges") {
  RngState r(7);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += u;
  }
  CHECK(mean / 10000.0 == doctest::Approx(0.5).epsilon(0.03));

  double gsum = 0.0, gsq = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double g = r.next_gaussian();
    gsum += g;
    gsq += g * g;
  }
  CHECK(gsum / 10000.0 == doctest::Approx(0.0).epsilon(0.05));
  CHECK(gsq / 10000.0 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("rng bounded index covers the range") {
  RngState r(3);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t v = r.next_index(7);
    CHECK(v >= 0);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("backward of x^2 at x=3 is 6") {
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(3.0));
  Tensor y = mul(x, x);
  tape.backward(y);
  CHECK(tape.grad(x).value() == doctest::Approx(6.0));
}

TEST_CASE("chain through two linears matches hand derivation") {
  // y = w2 * (w1 * x); dy/dw1 = w2*x, dy/dw2 = w1*x, dy/dx = w1*w2
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(2.0));
  Tensor w1 = tape.watch(Tensor::of(Shape{1, 1}, {3.0}));
  Tensor w2 = tape.watch(Tensor::of(Shape{1, 1}, {5.0}));
  Tensor h = linear(x, w1);
  Tensor y = linear(h, w2);
  tape.backward(sum_all(y));
  CHECK(tape.grad(w1).value() == doctest::Approx(10.0));
  CHECK(tape.grad(w2).value() == doctest::Approx(6.0));
  CHECK(tape.grad(x).value() == doctest::Approx(15.0));
}

TEST_CASE("backward rejects non-scalar loss and double use") {
  Tape tape;
  Tensor x = tape.watch(Tensor::of({1.0, 2.0}));
  Tensor y = add(x, x);
  CHECK_THROWS(tape.backward(y));

  Tape tape2;
  Tensor x2 = tape2.watch(Tensor::scalar(1.0));
  Tensor y2 = sum_all(x2);
  tape2.backward(y2);
  CHECK_THROWS(tape2.backward(y2));
}

TEST_CASE("unreached leaves get zero gradients") {
  Tape tape;
  Tensor used = tape.watch(Tensor::scalar(2.0));
  Tensor unused = tape.watch(Tensor::of({1.0, 1.0, 1.0}));
  tape.backward(mul(used, used));
  Tensor g = tape.grad(unused);
  CHECK(g.shape() == Shape{3});
  for (int i = 0; i < 3; ++i) CHECK(g.data()[i] == 0.0);
}

TEST_CASE("structural ops round-trip gradients") {
  Tape tape;
  Tensor x = tape.watch(Tensor::of(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  Tensor y = permute(reshape(x, Shape{3, 2}), {1, 0});
  Tensor z = slice(y, 1, 1, 2);
  tape.backward(sum_all(z));
  Tensor g = tape.grad(x);
  // kept entries get gradient 1, dropped entries 0
  int ones = 0;
  for (int i = 0; i < 6; ++i) ones += g.data()[i] == 1.0;
  CHECK(ones == 4);
}

TEST_CASE("concat routes gradients to each part") {
  Tape tape;
  Tensor a = tape.watch(Tensor::of(Shape{1, 2}, {1, 2}));
  Tensor b = tape.watch(Tensor::of(Shape{1, 3}, {3, 4, 5}));
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{1, 5});
  tape.backward(sum_all(scale(c, 2.0)));
  CHECK(tape.grad(a).data()[0] == doctest::Approx(2.0));
  CHECK(tape.grad(b).data()[2] == doctest::Approx(2.0));
}

TEST_CASE("repeat_rows sums gradients over copies") {
  Tape tape;
  Tensor a = tape.watch(Tensor::of(Shape{1, 2}, {1.0, -1.0}));
  Tensor r = repeat_rows(a, 5);
  CHECK(r.shape() == Shape{5, 2});
  tape.backward(sum_all(r));
  CHECK(tape.grad(a).data()[0] == doctest::Approx(5.0));
  CHECK(tape.grad(a).data()[1] == doctest::Approx(5.0));
}

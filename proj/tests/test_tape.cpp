#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "latentplan/tape.hpp"
#include "oracles.hpp"

using latentplan::nnet::Mat;
using latentplan::nnet::ShapeError;
using latentplan::nnet::Tape;
using latentplan::nnet::UsageError;

namespace {

// Builds the same graph twice: once to read analytic input gradients,
// then repeatedly with perturbed inputs for central differences.
// `build` returns the scalar root and the input nodes it created.
template <typename Build>
void fd_check(const std::vector<double>& x0, Build build, double h = 1e-6) {
  Tape t;
  auto [scalar, inputs] = build(t, x0);
  t.backward(scalar);
  std::vector<double> analytic;
  for (const Tape::Id id : inputs) {
    const Mat& g = t.grad(id);
    analytic.insert(analytic.end(), g.data.begin(), g.data.end());
  }
  REQUIRE(analytic.size() == x0.size());

  auto f = [&](const std::vector<double>& x) {
    Tape t2;
    auto [s2, in2] = build(t2, x);
    (void)in2;
    return t2.val(s2).data[0];
  };
  std::vector<double> x = x0;
  for (size_t k = 0; k < x.size(); ++k) {
    const double fd = oracles::central_diff(f, x, k, h);
    CHECK_MESSAGE(oracles::grad_close(analytic[k], fd, 1e-5, 1e-8),
                  "coord " << k << " analytic " << analytic[k] << " fd " << fd);
  }
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("arithmetic ops differentiate correctly") {
  fd_check({0.3, -1.2, 0.7, 2.1}, [](Tape& t, const std::vector<double>& x) {
    const Tape::Id a = t.input(Mat(1, 2, {x[0], x[1]}));
    const Tape::Id b = t.input(Mat(1, 2, {x[2], x[3]}));
    Tape::Id y = t.add(t.mul(a, b), t.sub(a, b));
    y = t.add_scaled(y, t.div(a, t.add_scalar(b, 5.0)), 0.7);
    y = t.scale(y, 1.3);
    return std::pair{t.sum(y), std::vector<Tape::Id>{a, b}};
  });
}

TEST_CASE("elementwise nonlinearities differentiate correctly") {
  fd_check({0.4, -0.8, 1.5}, [](Tape& t, const std::vector<double>& x) {
    const Tape::Id a = t.input(Mat(1, 3, {x[0], x[1], x[2]}));
    const Tape::Id parts[] = {
        t.tanh_(a),
        t.softplus(a),
        t.exp_(t.scale(a, 0.5)),
        t.log_(t.add_scalar(t.square(a), 1.0)),
        t.sqrt_(t.add_scalar(t.square(a), 0.5)),
        t.abs_(t.add_scalar(a, 0.1)),
        t.relu(t.add_scalar(a, 0.05)),
    };
    return std::pair{t.sum(t.concat_cols(parts)), std::vector<Tape::Id>{a}};
  });
}

TEST_CASE("min max clamp differentiate away from ties") {
  fd_check({0.3, 1.4, -0.6, 0.9}, [](Tape& t, const std::vector<double>& x) {
    const Tape::Id a = t.input(Mat(1, 2, {x[0], x[1]}));
    const Tape::Id b = t.input(Mat(1, 2, {x[2], x[3]}));
    const Tape::Id parts[] = {
        t.min_(a, b), t.max_(a, b), t.clamp_(a, -0.5, 1.0)};
    return std::pair{t.sum(t.concat_cols(parts)),
                     std::vector<Tape::Id>{a, b}};
  });
}

TEST_CASE("min ties route gradient to the first argument") {
  Tape t;
  const Tape::Id a = t.input(Mat::scalar(0.7));
  const Tape::Id b = t.input(Mat::scalar(0.7));
  t.backward(t.min_(a, b));
  CHECK(t.grad(a).data[0] == 1.0);
  CHECK(t.grad(b).data[0] == 0.0);
}

TEST_CASE("clamped values pass no gradient") {
  Tape t;
  const Tape::Id a = t.input(Mat(1, 3, {-2.0, 0.3, 5.0}));
  t.backward(t.sum(t.clamp_(a, -1.0, 1.0)));
  const Mat& g = t.grad(a);
  CHECK(g.data[0] == 0.0);
  CHECK(g.data[1] == 1.0);
  CHECK(g.data[2] == 0.0);
}

TEST_CASE("shape ops differentiate correctly") {
  fd_check({0.1, -0.4, 0.9, 1.2, -0.2, 0.6},
           [](Tape& t, const std::vector<double>& x) {
             const Tape::Id a = t.input(Mat(2, 2, {x[0], x[1], x[2], x[3]}));
             const Tape::Id b = t.input(Mat(2, 1, {x[4], x[5]}));
             const Tape::Id cat = t.concat_cols(std::vector{a, b});
             const Tape::Id stacked =
                 t.concat_rows(std::vector{cat, t.scale(cat, -0.5)});
             const Tape::Id sl = t.slice_rows(t.slice_cols(stacked, 1, 2), 0, 3);
             const Tape::Id re = t.reshape(sl, 2, 3);
             return std::pair{t.sum(t.square(re)),
                              std::vector<Tape::Id>{a, b}};
           });
}

TEST_CASE("reductions differentiate correctly") {
  fd_check({0.5, -1.0, 2.0, 0.25, -0.75, 1.5},
           [](Tape& t, const std::vector<double>& x) {
             const Tape::Id a = t.input(Mat(3, 2, std::vector<double>(x)));
             const Tape::Id parts[] = {
                 t.sum(t.square(t.row_sums(a))),
                 t.sum(t.square(t.col_sums(a))),
                 t.mean(t.square(a)),
                 t.sum(t.square(t.cumsum_rows(a))),
             };
             return std::pair{t.sum(t.concat_cols(parts)),
                              std::vector<Tape::Id>{a}};
           });
}

TEST_CASE("cumsum runs down rows per column") {
  Tape t;
  const Tape::Id a = t.constant(Mat(3, 2, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0}));
  const Mat& y = t.val(t.cumsum_rows(a));
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(1, 0) == 3.0);
  CHECK(y.at(2, 0) == 6.0);
  CHECK(y.at(2, 1) == 60.0);
}

TEST_CASE("matrix products differentiate correctly") {
  fd_check({0.3, -0.7, 1.1, 0.2, 0.8, -0.4, 0.5, 0.9, -1.2, 0.6},
           [](Tape& t, const std::vector<double>& x) {
             const Tape::Id a = t.input(Mat(2, 3, {x.begin(), x.begin() + 6}));
             const Tape::Id b =
                 t.input(Mat(2, 2, {x.begin() + 6, x.begin() + 10}));
             const Tape::Id m1 = t.matmul(b, t.slice_cols(a, 0, 2));
             const Tape::Id m2 = t.matmul_nt(a, a);  // 2x2 gram
             return std::pair{
                 t.sum(t.concat_cols(std::vector{t.square(m1), m2})),
                 std::vector<Tape::Id>{a, b}};
           });
}

TEST_CASE("linear layer differentiates and broadcasts bias") {
  fd_check({0.2, -0.5, 0.7,  0.1, 0.4, -0.3, 0.9, -0.8, 0.6,  0.25, -0.15},
           [](Tape& t, const std::vector<double>& x) {
             const Tape::Id in = t.input(Mat(1, 3, {x.begin(), x.begin() + 3}));
             const Tape::Id w = t.input(Mat(2, 3, {x.begin() + 3, x.begin() + 9}));
             const Tape::Id b = t.input(Mat(1, 2, {x.begin() + 9, x.begin() + 11}));
             const Tape::Id rows = t.concat_rows(std::vector{in, t.scale(in, 2.0)});
             const Tape::Id y = t.linear(rows, w, b);
             return std::pair{t.sum(t.square(y)),
                              std::vector<Tape::Id>{in, w, b}};
           });
}

TEST_CASE("softmax rows sum to one and differentiate correctly") {
  Tape probe;
  const Tape::Id logits = probe.constant(Mat(2, 3, {1.0, 2.0, 3.0, -1.0, 0.0, 500.0}));
  const Mat& y = probe.val(probe.softmax_rows(logits));
  CHECK(y.at(0, 0) + y.at(0, 1) + y.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(1, 0) + y.at(1, 1) + y.at(1, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(1, 2) == doctest::Approx(1.0));  // large logit dominates, no overflow

  fd_check({0.3, -0.6, 1.2, 0.8, 0.1, -0.9},
           [](Tape& t, const std::vector<double>& x) {
             const Tape::Id a = t.input(Mat(2, 3, std::vector<double>(x)));
             const Tape::Id sm = t.softmax_rows(a);
             const Tape::Id w = t.constant(Mat(2, 3, {1.0, 2.0, -1.0, 0.5, -2.0, 1.5}));
             return std::pair{t.sum(t.mul(sm, w)), std::vector<Tape::Id>{a}};
           });
}

TEST_CASE("stencil gathers neighborhoods with zero padding") {
  // 2x3 grid, 1 channel, radius 1: slot layout runs dj then di.
  Tape t;
  const Tape::Id g = t.constant(Mat(6, 1, {1, 2, 3, 4, 5, 6}));
  const Mat& y = t.val(t.stencil(g, 2, 3, 1));
  REQUIRE(y.cols == 9);
  // Cell (0,0): everything above and left is padding.
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(0, 4) == 1.0);  // center
  CHECK(y.at(0, 5) == 2.0);  // right neighbor
  CHECK(y.at(0, 7) == 4.0);  // below
  // Cell (1,1) = value 5 sees the full 3x3 block.
  CHECK(y.at(4, 0) == 1.0);
  CHECK(y.at(4, 4) == 5.0);
  CHECK(y.at(4, 8) == 0.0);  // below row is padding

  fd_check({0.1, 0.5, -0.3, 0.8, -0.6, 0.2},
           [](Tape& t2, const std::vector<double>& x) {
             const Tape::Id grid = t2.input(Mat(6, 1, std::vector<double>(x)));
             const Tape::Id st = t2.stencil(grid, 2, 3, 1);
             const Tape::Id w = t2.constant([] {
               Mat m(6, 9);
               for (size_t k = 0; k < m.data.size(); ++k)
                 m.data[k] = 0.1 * static_cast<double>(k % 7) - 0.3;
               return m;
             }());
             return std::pair{t2.sum(t2.mul(st, w)),
                              std::vector<Tape::Id>{grid}};
           });
}

TEST_CASE("bilinear sampling interpolates and clamps") {
  Tape t;
  // 2x2 grid, 1 channel: values 1,2 on row 0 and 3,4 on row 1.
  const Tape::Id g = t.constant(Mat(4, 1, {1.0, 2.0, 3.0, 4.0}));
  const Tape::Id coords = t.constant(
      Mat(4, 2, {0.0, 0.0, 1.0, 0.0, 0.5, 0.5, -3.0, 9.0}));
  const Mat& y = t.val(t.bilinear(g, coords, 2, 2));
  CHECK(y.at(0, 0) == doctest::Approx(1.0));
  CHECK(y.at(1, 0) == doctest::Approx(2.0));
  CHECK(y.at(2, 0) == doctest::Approx(2.5));
  CHECK(y.at(3, 0) == doctest::Approx(3.0));  // clamped to bottom-left

  // Gradients flow to the grid and to in-range coordinates.
  fd_check({1.0, 2.0, 3.0, 4.0, 0.3, 0.6},
           [](Tape& t2, const std::vector<double>& x) {
             const Tape::Id grid = t2.input(Mat(4, 1, {x[0], x[1], x[2], x[3]}));
             const Tape::Id c = t2.input(Mat(1, 2, {x[4], x[5]}));
             const Tape::Id s = t2.bilinear(grid, c, 2, 2);
             return std::pair{t2.sum(t2.square(s)),
                              std::vector<Tape::Id>{grid, c}};
           });
}

TEST_CASE("clamped bilinear coordinates get zero positional gradient") {
  Tape t;
  const Tape::Id grid = t.constant(Mat(4, 1, {1.0, 2.0, 3.0, 4.0}));
  const Tape::Id c = t.input(Mat(2, 2, {-1.5, 0.5, 0.5, 7.0}));
  t.backward(t.sum(t.bilinear(grid, c, 2, 2)));
  const Mat& g = t.grad(c);
  CHECK(g.at(0, 0) == 0.0);  // x clamped
  CHECK(g.at(1, 1) == 0.0);  // y clamped
}

TEST_CASE("detach blocks gradient flow") {
  Tape t;
  const Tape::Id a = t.input(Mat::scalar(2.0));
  const Tape::Id y = t.mul(t.detach(t.square(a)), a);  // 4 * a with 4 frozen
  t.backward(t.sum(y));
  CHECK(t.grad(a).data[0] == 4.0);
}

TEST_CASE("parameter nodes accumulate into the flat gradient") {
  const std::vector<double> params{1.0, 2.0, 3.0, 4.0};
  Tape t(params);
  const Tape::Id p1 = t.param(0, 1, 2);
  const Tape::Id p2 = t.param(2, 1, 2);
  const Tape::Id shared = t.param(0, 1, 2);  // same slice used twice
  t.backward(t.sum(t.concat_cols(std::vector{p1, p2, t.scale(shared, 3.0)})));
  std::vector<double> grads(4, 0.0);
  t.accumulate_param_grads(grads);
  CHECK(grads[0] == 4.0);
  CHECK(grads[1] == 4.0);
  CHECK(grads[2] == 1.0);
  CHECK(grads[3] == 1.0);
}

TEST_CASE("tape misuse raises usage errors") {
  Tape t;
  const Tape::Id a = t.input(Mat::scalar(1.0));
  const Tape::Id s = t.square(a);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), UsageError);
  CHECK_THROWS_AS(t.val(999), UsageError);
  CHECK_THROWS_AS(t.val(-1), UsageError);

  Tape t2;
  const Tape::Id m = t2.input(Mat(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_AS(t2.backward(m), ShapeError);  // seed must be scalar
  CHECK_THROWS_AS(t2.add(m, t2.input(Mat::scalar(1.0))), ShapeError);
  CHECK_THROWS_AS(t2.matmul(m, t2.input(Mat(3, 2, {1, 2, 3, 4, 5, 6}))),
                  ShapeError);
  CHECK_THROWS_AS(t2.param(0, 2, 2), ShapeError);  // no parameter vector
}

}  // TEST_SUITE

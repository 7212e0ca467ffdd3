#include "vera/autodiff.hpp"
#include "vera/rng.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>

using namespace vera;
using ad::Tape;
using ad::Var;

namespace {

Mat randm(std::uint64_t seed, Eigen::Index r, Eigen::Index c) {
  RandomStream rng(seed);
  return rng.normal_matrix(r, c);
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  Tape t;
  Var a = t.leaf(randm(1, 3, 4));
  Var b = t.leaf(randm(2, 3, 4));
  CHECK(t.value(t.add(a, b)).isApprox(t.value(a) + t.value(b)));
  CHECK(t.value(t.mul(a, b)).isApprox(t.value(a).cwiseProduct(t.value(b))));
  CHECK(t.value(t.sum(a))(0, 0) == doctest::Approx(t.value(a).sum()));
  CHECK(t.value(t.mean(a))(0, 0) == doctest::Approx(t.value(a).mean()));
}

TEST_CASE("softmax rows normalize") {
  Tape t;
  Var x = t.leaf(randm(3, 5, 7) * 3.0);
  Mat y = t.value(t.softmax_rows(x));
  for (Eigen::Index r = 0; r < y.rows(); ++r) CHECK(y.row(r).sum() == doctest::Approx(1.0));
  CHECK(y.minCoeff() > 0.0);
}

TEST_CASE("gradients match finite differences across the op set") {
  auto check = [](auto builder, std::vector<Mat> inputs) {
    auto res = test::grad_check(builder, std::move(inputs));
    CAPTURE(res.worst_analytic);
    CAPTURE(res.worst_numeric);
    CHECK(res.max_rel_err < 1e-6);
  };

  SUBCASE("matmul + bias + tanh chain") {
    check(
        [](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]), w = t.leaf(xs[1]), b = t.leaf(xs[2]);
          Var y = t.tanh(ad::linear(t, x, w, b));
          return std::make_pair(t.mean(t.square(y)), std::vector<Var>{x, w, b});
        },
        {randm(10, 4, 3), randm(11, 3, 5), randm(12, 1, 5)});
  }

  SUBCASE("softmax + gather + log") {
    Eigen::VectorXi idx(4);
    idx << 2, 0, 1, 2;
    check(
        [idx](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]);
          Var p = t.softmax_rows(x);
          Var picked = t.gather_cols(p, idx);
          Var loss = t.neg(t.mean(t.log(t.clamp_min(picked, 1e-8))));
          return std::make_pair(loss, std::vector<Var>{x});
        },
        {randm(13, 4, 3)});
  }

  SUBCASE("broadcast scale ops") {
    check(
        [](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]), s = t.leaf(xs[1]), a = t.leaf(xs[2]);
          Var y = t.colwise_scale(t.rowwise_scale(x, s), a);
          return std::make_pair(t.sum(t.square(y)), std::vector<Var>{x, s, a});
        },
        {randm(14, 5, 3), randm(15, 1, 3), randm(16, 5, 1)});
  }

  SUBCASE("conv3x3 + avgpool + upsample") {
    const int H = 4, W = 4, cin = 2, cout = 3;
    check(
        [=](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]), w = t.leaf(xs[1]), b = t.leaf(xs[2]);
          Var y = ad::conv3x3(t, x, w, b, H, W, cin);
          Var up = t.upsample2_bilinear(y, H, W);
          Var down = t.avgpool2(up, 2 * H, 2 * W);
          return std::make_pair(t.mean(t.square(down)), std::vector<Var>{x, w, b});
        },
        {randm(17, H * W, cin), randm(18, 9 * cin, cout), randm(19, 1, cout)});
  }

  SUBCASE("cosine similarity") {
    check(
        [](Tape& t, const std::vector<Mat>& xs) {
          Var u = t.leaf(xs[0]), v = t.leaf(xs[1]);
          return std::make_pair(ad::cosine(t, u, v), std::vector<Var>{u, v});
        },
        {randm(20, 1, 6), randm(21, 1, 6)});
  }

  SUBCASE("slices, concat, reshape, shift") {
    check(
        [](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]);
          Var left = t.slice_cols(x, 0, 2);
          Var right = t.slice_cols(x, 2, 2);
          Var cat = t.concat_cols({right, left});
          Var resh = t.reshape(cat, 8, 2);
          Var shifted = t.shift_rows(t.reshape(x, 16, 1), 4, 4, 1, -1);
          return std::make_pair(t.add(t.mean(t.square(resh)), t.sum(t.abs(shifted))),
                                std::vector<Var>{x});
        },
        {randm(22, 4, 4)});
  }

  SUBCASE("softplus, exp, sqrt, div") {
    check(
        [](Tape& t, const std::vector<Mat>& xs) {
          Var x = t.leaf(xs[0]);
          Var s = t.sum(t.exp(t.scale(x, 0.3)));
          Var q = t.div_scalar(t.sum(t.softplus(x)), t.sqrt(s));
          return std::make_pair(q, std::vector<Var>{x});
        },
        {randm(23, 3, 3)});
  }
}

TEST_CASE("upsample2 preserves constants and mass ratios") {
  Tape t;
  Var x = t.leaf(Mat::Constant(16, 2, 3.5));
  Mat up = t.value(t.upsample2_bilinear(x, 4, 4));
  CHECK(up.rows() == 64);
  CHECK((up.array() - 3.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("backward through unused leaves yields zero grad") {
  Tape t;
  Var a = t.leaf(randm(30, 2, 2));
  Var b = t.leaf(randm(31, 2, 2));
  Var loss = t.sum(t.square(a));
  t.backward(loss);
  CHECK(t.grad(b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.grad(a).isApprox(2.0 * t.value(a)));
}

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sevar/autograd.hpp"

using namespace sevar;

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape<double> t;
  Rng rng(5);
  VarId x = t.leaf(rand_uniform<double>(rng, {3, 4}, -1.0, 1.0), true);
  VarId loss = ag::sum(t, x);
  t.backward(loss);
  const auto& g = t.grad(x);
  for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tape<double> t;
  VarId x = t.leaf(Tensor<double>({3}, {1, 2, 3}), true);
  VarId loss = ag::sum(t, ag::mul(t, x, x));
  t.backward(loss);
  const auto& g = t.grad(x);
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(4.0));
  CHECK(g[2] == doctest::Approx(6.0));
}

TEST_CASE("fan-out accumulates gradients") {
  Rng rng(9);
  auto xv = rand_uniform<double>(rng, {4}, -1.0, 1.0);

  Tape<double> t1;
  VarId y1 = t1.leaf(xv, true);
  t1.backward(ag::sum(t1, ag::add(t1, y1, y1)));

  Tape<double> t2;
  VarId y2 = t2.leaf(xv, true);
  t2.backward(ag::sum(t2, y2));

  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(t1.grad(y1)[i] == doctest::Approx(2.0 * t2.grad(y2)[i]));
  }
}

TEST_CASE("non-scalar loss is rejected") {
  Tape<double> t;
  VarId x = t.leaf(Tensor<double>({2, 2}, 1.0), true);
  CHECK_THROWS_AS(t.backward(x), NonScalarLoss);
}

TEST_CASE("grad of a non-requires_grad leaf stays zero") {
  Tape<double> t;
  VarId x = t.leaf(Tensor<double>({3}, {1, 2, 3}), false);
  VarId y = t.leaf(Tensor<double>({3}, {1, 1, 1}), true);
  VarId loss = ag::sum(t, ag::mul(t, x, y));
  t.backward(loss);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(t.grad(x)[i] == 0.0);
  CHECK(t.grad(y)[0] == doctest::Approx(1.0));
}

TEST_CASE("finite_diff_check on sum of squares") {
  Rng rng(21);
  auto x = rand_uniform<double>(rng, {2, 5}, -2.0, 2.0);
  auto build = [](Tape<double>& t, VarId xid) { return ag::sum(t, ag::mul(t, xid, xid)); };
  CHECK(finite_diff_check<double>(build, x, 1e-5) < 1e-7);
}

TEST_CASE("finite_diff_check on sum of sigmoid") {
  Rng rng(22);
  auto x = rand_uniform<double>(rng, {3, 3}, -2.0, 2.0);
  auto build = [](Tape<double>& t, VarId xid) { return ag::sum(t, ag::sigmoid(t, xid)); };
  CHECK(finite_diff_check<double>(build, x, 1e-5) < 1e-6);
}

TEST_CASE("gradient accumulation is linear") {
  // grad(a*f + b*g) == a*grad(f) + b*grad(g)
  Rng rng(33);
  auto xv = rand_uniform<double>(rng, {6}, -1.0, 1.0);
  const double a = rng.uniform(-2.0, 2.0);
  const double b = rng.uniform(-2.0, 2.0);

  auto grad_of = [&](auto&& build) {
    Tape<double> t;
    VarId x = t.leaf(xv, true);
    t.backward(build(t, x));
    return t.grad(x);
  };

  auto f = [](Tape<double>& t, VarId x) { return ag::sum(t, ag::mul(t, x, x)); };
  auto g = [](Tape<double>& t, VarId x) { return ag::sum(t, ag::sigmoid(t, x)); };
  auto combined = [&](Tape<double>& t, VarId x) {
    return ag::add(t, ag::scale(t, f(t, x), a), ag::scale(t, g(t, x), b));
  };

  auto gf = grad_of(f), gg = grad_of(g), gc = grad_of(combined);
  for (std::int64_t i = 0; i < 6; ++i) {
    const double want = a * gf[i] + b * gg[i];
    const double denom = std::max(std::abs(want), 1e-12);
    CHECK(std::abs(gc[i] - want) / denom <= 1e-10);
  }
}

TEST_CASE("matmul backward agrees with finite differences") {
  Rng rng(44);
  auto a = rand_uniform<double>(rng, {3, 4}, -1.0, 1.0);
  auto b = rand_uniform<double>(rng, {4, 2}, -1.0, 1.0);

  auto build_a = [&](Tape<double>& t, VarId xid) {
    VarId bb = t.leaf(b, false);
    return ag::sum(t, ag::matmul(t, xid, bb));
  };
  CHECK(finite_diff_check<double>(build_a, a, 1e-5) < 1e-8);

  auto build_b = [&](Tape<double>& t, VarId xid) {
    VarId aa = t.leaf(a, false);
    return ag::sum(t, ag::matmul(t, aa, xid));
  };
  CHECK(finite_diff_check<double>(build_b, b, 1e-5) < 1e-8);
}

TEST_CASE("spatial_mean and channel_scale backward pass finite differences") {
  Rng rng(55);
  auto u = rand_uniform<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
  auto w = rand_uniform<double>(rng, {2, 3}, -1.0, 1.0);

  auto build_mean = [&](Tape<double>& t, VarId xid) {
    return ag::weighted_sum(t, ag::spatial_mean(t, xid), w);
  };
  CHECK(finite_diff_check<double>(build_mean, u, 1e-5) < 1e-8);

  auto s = rand_uniform<double>(rng, {2, 3}, 0.1, 2.0);
  auto wu = rand_uniform<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
  auto build_scale_u = [&](Tape<double>& t, VarId xid) {
    VarId sid = t.leaf(s, false);
    return ag::weighted_sum(t, ag::channel_scale(t, xid, sid), wu);
  };
  CHECK(finite_diff_check<double>(build_scale_u, u, 1e-5) < 1e-8);

  auto build_scale_s = [&](Tape<double>& t, VarId xid) {
    VarId uid = t.leaf(u, false);
    return ag::weighted_sum(t, ag::channel_scale(t, uid, xid), wu);
  };
  CHECK(finite_diff_check<double>(build_scale_s, s, 1e-5) < 1e-8);
}

TEST_CASE("bind returns the same node for the same tensor") {
  Tape<double> t;
  Tensor<double> p({2}, {1.0, 2.0});
  VarId a = t.bind(&p);
  VarId b = t.bind(&p);
  CHECK(a == b);
  VarId loss = ag::sum(t, ag::add(t, a, b));
  t.backward(loss);
  CHECK(t.grad_of(&p)[0] == doctest::Approx(2.0));
}

#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmtm/ops.hpp"
#include "cmtm/rng.hpp"
#include "cmtm/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace cmtm;

namespace {

Tensor t2(std::vector<float> v, std::int64_t r, std::int64_t c) {
  return Tensor::from({r, c}, std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Tensor a = t2({1, 2, 3, 4}, 2, 2);
  Tensor out = ops::matmul(tape, Tensor::identity(2), a);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(out.at(i) == a.at(i));

  Tensor row = t2({1, 2}, 1, 2);
  Tensor col = t2({3, 4}, 2, 1);
  Tensor prod = ops::matmul(tape, row, col);
  CHECK(prod.shape() == Shape{1, 1});
  CHECK(prod.at(0) == doctest::Approx(11.0f));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(ops::matmul(tape, a, b),
                       doctest::Contains("[2x3]"), DimError);
  try {
    ops::matmul(tape, a, b);
  } catch (const DimError& e) {
    CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor a = oracle::random_tensor({3, 4}, rng);
  Tensor b = oracle::random_tensor({4, 2}, rng);
  auto expr = [](auto& tape, const auto& in) { return ops::matmul(tape, in[0], in[1]); };
  const auto res = oracle::check_gradients(expr, {a, b}, 101);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("softmax rows: symmetry, stability, row sums") {
  Tape tape;
  Tensor x = t2({0, 0, 0}, 1, 3);
  Tensor s = ops::softmax_rows(tape, x);
  for (std::int64_t j = 0; j < 3; ++j) CHECK(s.at(0, j) == doctest::Approx(1.0 / 3.0));

  Tensor big = t2({1000, 0}, 1, 2);
  Tensor sb = ops::softmax_rows(tape, big);
  CHECK(sb.all_finite());
  CHECK(sb.at(0, 0) == doctest::Approx(1.0f));
  CHECK(sb.at(0, 1) == doctest::Approx(0.0f));

  Rng rng(7);
  Tensor r = oracle::random_tensor({6, 9}, rng, -5.0, 5.0);
  Tensor sr = ops::softmax_rows(tape, r);
  for (std::int64_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 9; ++j) {
      CHECK(sr.at(i, j) >= 0.0f);
      sum += sr.at(i, j);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(13);
  Tensor x = oracle::random_tensor({4, 5}, rng, -2.0, 2.0);
  auto expr = [](auto& tape, const auto& in) { return ops::softmax_rows(tape, in[0]); };
  const auto res = oracle::check_gradients(expr, {x}, 102);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("layer_norm analytic cases") {
  Tape tape;
  Tensor x = Tensor::full({2, 4}, 3.5f);
  Tensor gamma = Tensor::full({4}, 1.0f);
  Tensor beta = Tensor::zeros({4});
  Tensor out = ops::layer_norm(tape, x, gamma, beta, 1e-5f);
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(0.0f));

  Rng rng(3);
  Tensor r = oracle::random_tensor({3, 4}, rng);
  Tensor zero_gamma = Tensor::zeros({4});
  Tensor b = Tensor::from({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  Tensor out2 = ops::layer_norm(tape, r, zero_gamma, b, 1e-5f);
  for (std::int64_t i = 0; i < 3; ++i) {
    for (std::int64_t j = 0; j < 4; ++j) CHECK(out2.at(i, j) == b.at(j));
  }
}

TEST_CASE("layer_norm normalizes each row") {
  Tape tape;
  Rng rng(5);
  Tensor x = oracle::random_tensor({8, 16}, rng, -3.0, 3.0);
  Tensor gamma = Tensor::full({16}, 1.0f);
  Tensor beta = Tensor::zeros({16});
  Tensor out = ops::layer_norm(tape, x, gamma, beta, 1e-5f);
  for (std::int64_t i = 0; i < 8; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t j = 0; j < 16; ++j) mean += out.at(i, j);
    mean /= 16.0;
    for (std::int64_t j = 0; j < 16; ++j) {
      var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
    }
    var /= 16.0;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(17);
  Tensor x = oracle::random_tensor({6, 8}, rng);
  Tensor gamma = oracle::random_tensor({8}, rng, 0.5, 1.5);
  Tensor beta = oracle::random_tensor({8}, rng, -0.5, 0.5);
  auto ln = [](auto& tape, const auto& in) {
    using Scalar = std::decay_t<decltype(in[0].at(0))>;
    return ops::layer_norm(tape, in[0], in[1], in[2], static_cast<Scalar>(1e-5));
  };
  const auto res = oracle::check_gradients(ln, {x, gamma, beta}, 103);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("concat_rows values and exact round-trip") {
  Tape tape;
  Tensor a = t2({1, 2}, 1, 2);
  Tensor b = t2({3, 4}, 1, 2);
  Tensor c = ops::concat_rows(tape, a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.at(0, 0) == 1.0f);
  CHECK(c.at(1, 1) == 4.0f);

  Rng rng(23);
  Tensor ra = oracle::random_tensor({5, 3}, rng);
  Tensor rb = oracle::random_tensor({2, 3}, rng);
  Tensor cat = ops::concat_rows(tape, ra, rb);
  Tensor first = ops::slice_rows(tape, cat, 0, 5);
  Tensor second = ops::slice_rows(tape, cat, 5, 7);
  for (std::int64_t i = 0; i < ra.numel(); ++i) CHECK(first.at(i) == ra.at(i));
  for (std::int64_t i = 0; i < rb.numel(); ++i) CHECK(second.at(i) == rb.at(i));

  Tensor bad = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(ops::concat_rows(tape, ra, bad), DimError);
}

TEST_CASE("concat_rows gradient splits between inputs") {
  Rng rng(29);
  Tensor a = oracle::random_tensor({3, 2}, rng);
  Tensor b = oracle::random_tensor({2, 2}, rng);

  // Analytic: loss touching only the second half flows only into b.
  Tensor la = a.clone();
  la.set_requires_grad(true);
  Tensor lb = b.clone();
  lb.set_requires_grad(true);
  Tape tape;
  Tensor cat = ops::concat_rows(tape, la, lb);
  Tensor tail = ops::slice_rows(tape, cat, 3, 5);
  Tensor loss = ops::sum(tape, tail);
  tape.backward(loss);
  for (const auto g : la.grad()) CHECK(g == 0.0f);
  for (const auto g : lb.grad()) CHECK(g == 1.0f);

  auto expr = [](auto& tape2, const auto& in) {
    auto cat2 = ops::concat_rows(tape2, in[0], in[1]);
    return ops::slice_rows(tape2, cat2, 3, 5);
  };
  const auto res = oracle::check_gradients(expr, {a, b}, 104);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward: ones for sum, doubling for reuse, usage errors") {
  {
    Tape tape;
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor loss = ops::sum(tape, x);
    tape.backward(loss);
    for (const auto g : x.grad()) CHECK(g == 1.0f);
  }
  {
    Tape tape;
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tensor y = ops::add(tape, x, x);
    Tensor loss = ops::sum(tape, y);
    tape.backward(loss);
    for (const auto g : x.grad()) CHECK(g == 2.0f);
  }
  {
    Tape tape;
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = ops::scale(tape, x, 2.0f);
    CHECK_THROWS_AS(tape.backward(y), UsageError);  // non-scalar loss
  }
  {
    Tape tape;
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor loss = ops::sum(tape, x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);  // single-use tape
  }
}

TEST_CASE("gradients accumulate fresh per backward call") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Tensor loss = ops::sum(tape, x);
    tape.backward(loss);
    for (const auto g : x.grad()) CHECK(g == 1.0f);  // not 2.0 on the second pass
  }
}

TEST_CASE("elementwise and shape ops: values") {
  Tape tape;
  Tensor a = t2({1, -2, 3, 0}, 2, 2);
  Tensor b = t2({2, 5, -1, 4}, 2, 2);

  Tensor s = ops::add(tape, a, b);
  CHECK(s.at(0, 1) == 3.0f);
  Tensor m = ops::mul(tape, a, b);
  CHECK(m.at(0, 1) == -10.0f);
  Tensor sc = ops::scale(tape, a, -2.0f);
  CHECK(sc.at(1, 0) == -6.0f);

  Tensor tr = ops::transpose(tape, a);
  CHECK(tr.shape() == Shape{2, 2});
  CHECK(tr.at(0, 1) == 3.0f);

  Tensor rs = ops::reshape(tape, a, {4});
  CHECK(rs.at(2) == 3.0f);
  CHECK_THROWS_AS(ops::reshape(tape, a, {5}), DimError);

  Tensor sm = ops::sum(tape, a);
  CHECK(sm.scalar_value() == doctest::Approx(2.0f));
  Tensor mn = ops::mean(tape, a);
  CHECK(mn.scalar_value() == doctest::Approx(0.5f));

  Tensor g = ops::gelu(tape, Tensor::from({1}, {0.0f}));
  CHECK(g.at(0) == doctest::Approx(0.0f));
  Tensor sg = ops::sigmoid(tape, Tensor::from({1}, {0.0f}));
  CHECK(sg.at(0) == doctest::Approx(0.5f));
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(31);
  Tensor a = oracle::random_tensor({3, 5}, rng);
  Tensor b = oracle::random_tensor({3, 5}, rng);
  Tensor v = oracle::random_tensor({5}, rng);

  auto check = [&](auto expr, const std::vector<Tensor>& in, std::uint64_t seed) {
    const auto res = oracle::check_gradients(expr, in, seed);
    CHECK(res.max_rel_err < 1e-4);
  };

  check([](auto& t, const auto& in) { return ops::add(t, in[0], in[1]); }, {a, b}, 201);
  check([](auto& t, const auto& in) { return ops::mul(t, in[0], in[1]); }, {a, b}, 202);
  check([](auto& t, const auto& in) {
    using Scalar = std::decay_t<decltype(in[0].at(0))>;
    return ops::scale(t, in[0], static_cast<Scalar>(-1.7));
  }, {a}, 203);
  check([](auto& t, const auto& in) { return ops::gelu(t, in[0]); }, {a}, 204);
  check([](auto& t, const auto& in) { return ops::sigmoid(t, in[0]); }, {a}, 205);
  check([](auto& t, const auto& in) { return ops::transpose(t, in[0]); }, {a}, 206);
  check([](auto& t, const auto& in) { return ops::reshape(t, in[0], {5, 3}); }, {a}, 207);
  check([](auto& t, const auto& in) { return ops::mean(t, in[0]); }, {a}, 208);
  check([](auto& t, const auto& in) { return ops::add_rowvec(t, in[0], in[1]); }, {a, v}, 209);
  check([](auto& t, const auto& in) { return ops::slice_cols(t, in[0], 1, 4); }, {a}, 210);
  check([](auto& t, const auto& in) {
    using Tn = std::decay_t<decltype(in[0])>;
    return ops::concat_cols(t, std::vector<Tn>{in[0], in[1]});
  }, {a, b}, 211);
}

TEST_CASE("bce_with_logits: analytic values and gradient") {
  Tape tape;
  Tensor z = Tensor::zeros({4, 4});
  Tensor t = Tensor::zeros({4, 4});
  for (std::int64_t i = 0; i < 8; ++i) t.at(i) = 1.0f;
  Tensor loss = ops::bce_with_logits(tape, z, t);
  CHECK(loss.scalar_value() == doctest::Approx(0.6931471805599453).epsilon(1e-6));

  Tensor sat = Tensor::zeros({2, 2});
  Tensor gt = Tensor::from({2, 2}, {1, 0, 1, 0});
  sat.at(0) = 20.0f;
  sat.at(1) = -20.0f;
  sat.at(2) = 20.0f;
  sat.at(3) = -20.0f;
  Tape tape2;
  Tensor l2 = ops::bce_with_logits(tape2, sat, gt);
  CHECK(l2.scalar_value() < 1e-6);

  Rng rng(37);
  Tensor logits = oracle::random_tensor({3, 4}, rng, -2.0, 2.0);
  Tensor targets = Tensor::zeros({3, 4});
  for (std::int64_t i = 0; i < targets.numel(); ++i) {
    targets.at(i) = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  }
  auto expr = [targets_d = tensor_cast<float, double>(targets), targets](auto& tp, const auto& in) {
    using Scalar = std::decay_t<decltype(in[0].at(0))>;
    if constexpr (std::is_same_v<Scalar, float>) {
      return ops::bce_with_logits(tp, in[0], targets);
    } else {
      return ops::bce_with_logits(tp, in[0], targets_d);
    }
  };
  const auto res = oracle::check_gradients(expr, {logits}, 212);
  CHECK(res.max_rel_err < 1e-4);

  // Independent scalar-loop oracle on a random case.
  Tape tape3;
  Tensor l3 = ops::bce_with_logits(tape3, logits, targets);
  double ref = 0.0;
  for (std::int64_t i = 0; i < logits.numel(); ++i) {
    const double zz = logits.at(i), tt = targets.at(i);
    ref += -(tt * std::log(1.0 / (1.0 + std::exp(-zz))) +
             (1.0 - tt) * std::log(1.0 - 1.0 / (1.0 + std::exp(-zz))));
  }
  ref /= static_cast<double>(logits.numel());
  CHECK(l3.scalar_value() == doctest::Approx(ref).epsilon(1e-6));
}

TEST_CASE("replace_rows values and gradient routing") {
  Tape tape;
  Tensor x = t2({1, 2, 3, 4, 5, 6}, 3, 2);
  Tensor row = Tensor::from({2}, {9.0f, 8.0f});
  Tensor out = ops::replace_rows(tape, x, {1}, row);
  CHECK(out.at(0, 0) == 1.0f);
  CHECK(out.at(1, 0) == 9.0f);
  CHECK(out.at(1, 1) == 8.0f);
  CHECK(out.at(2, 1) == 6.0f);

  Rng rng(41);
  Tensor rx = oracle::random_tensor({5, 3}, rng);
  Tensor rv = oracle::random_tensor({3}, rng);
  auto expr = [](auto& t, const auto& in) {
    return ops::replace_rows(t, in[0], {0, 3}, in[1]);
  };
  const auto res = oracle::check_gradients(expr, {rx, rv}, 213);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("spatial ops: space_to_depth2 / upsample_nearest2 round structure") {
  Tape tape;
  Rng rng(43);
  Tensor x = oracle::random_tensor({4, 6, 3}, rng);
  Tensor d = ops::space_to_depth2(tape, x);
  CHECK(d.shape() == Shape{2, 3, 12});
  CHECK(d.at(0, 0, 0) == x.at(0, 0, 0));
  CHECK(d.at(0, 0, 3) == x.at(0, 1, 0));   // dx block
  CHECK(d.at(0, 0, 6) == x.at(1, 0, 0));   // dy block
  CHECK(d.at(1, 2, 11) == x.at(3, 5, 2));

  Tensor u = ops::upsample_nearest2(tape, x);
  CHECK(u.shape() == Shape{8, 12, 3});
  CHECK(u.at(5, 7, 1) == x.at(2, 3, 1));

  auto s2d = [](auto& t, const auto& in) { return ops::space_to_depth2(t, in[0]); };
  CHECK(oracle::check_gradients(s2d, {x}, 214).max_rel_err < 1e-4);
  auto up = [](auto& t, const auto& in) { return ops::upsample_nearest2(t, in[0]); };
  CHECK(oracle::check_gradients(up, {x}, 215).max_rel_err < 1e-4);
  auto cc = [](auto& t, const auto& in) { return ops::concat_channels(t, in[0], in[1]); };
  Tensor y = oracle::random_tensor({4, 6, 2}, rng);
  CHECK(oracle::check_gradients(cc, {x, y}, 216).max_rel_err < 1e-4);
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  Rng rng(47);
  Tensor a = oracle::random_tensor({4, 4}, rng);
  Tensor b = oracle::random_tensor({4, 4}, rng);
  Tape t1, t2x;
  Tensor o1 = ops::softmax_rows(t1, ops::matmul(t1, a, b));
  Tensor o2 = ops::softmax_rows(t2x, ops::matmul(t2x, a, b));
  for (std::int64_t i = 0; i < o1.numel(); ++i) CHECK(o1.at(i) == o2.at(i));
}

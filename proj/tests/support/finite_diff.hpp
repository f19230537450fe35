#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cmtm/ops.hpp"
#include "cmtm/rng.hpp"
#include "cmtm/tensor.hpp"

// Test-side gradient oracle, independent of the library's backward pass:
// analytic float32 gradients are compared against float64 central
// differences (step 1e-4) of the same expression instantiated at double
// precision. Expressions are generic lambdas so one definition serves both
// scalar types.

namespace oracle {

struct GradCheckResult {
  double max_rel_err = 0.0;                 // worst tensor-level L2 relative error
  std::vector<double> per_input_rel_err;    // one entry per input tensor
};

inline double l2_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    ref += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-10);
}

// `expr_f` / `expr_d` must compute the same function. The loss is a fixed
// random linear functional of the output, which exercises the whole
// Jacobian rather than just the row-sum direction.
template <typename ExprF, typename ExprD>
GradCheckResult check_gradients(ExprF&& expr_f, ExprD&& expr_d,
                                const std::vector<cmtm::Tensor>& inputs, std::uint64_t probe_seed,
                                double step = 1e-4) {
  using cmtm::TapeT;
  using cmtm::Tensor;
  using cmtm::TensorT;

  // Analytic pass (float32).
  std::vector<Tensor> leaf_inputs;
  leaf_inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    Tensor c = t.clone();
    c.set_requires_grad(true);
    leaf_inputs.push_back(c);
  }
  TapeT<float> tape;
  Tensor out = expr_f(tape, leaf_inputs);

  cmtm::Rng probe(probe_seed);
  std::vector<double> weights(static_cast<std::size_t>(out.numel()));
  for (auto& w : weights) w = probe.uniform() * 2.0 - 1.0;

  Tensor wt = Tensor::zeros(out.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) wt.at(i) = static_cast<float>(weights[static_cast<std::size_t>(i)]);
  Tensor loss = cmtm::ops::sum(tape, cmtm::ops::mul(tape, out, wt));
  tape.backward(loss);

  // Numeric pass (float64 central differences).
  std::vector<TensorT<double>> base;
  base.reserve(inputs.size());
  for (const auto& t : inputs) base.push_back(cmtm::tensor_cast<float, double>(t));

  auto eval = [&](const std::vector<TensorT<double>>& in) {
    TapeT<double> scratch;
    TensorT<double> o = expr_d(scratch, in);
    double acc = 0.0;
    for (std::int64_t i = 0; i < o.numel(); ++i) acc += o.at(i) * weights[static_cast<std::size_t>(i)];
    return acc;
  };

  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    std::vector<double> analytic(leaf_inputs[t].grad().begin(), leaf_inputs[t].grad().end());
    std::vector<double> numeric(analytic.size(), 0.0);
    for (std::int64_t e = 0; e < base[t].numel(); ++e) {
      const double saved = base[t].at(e);
      base[t].at(e) = saved + step;
      const double up = eval(base);
      base[t].at(e) = saved - step;
      const double down = eval(base);
      base[t].at(e) = saved;
      numeric[static_cast<std::size_t>(e)] = (up - down) / (2.0 * step);
    }
    const double err = l2_rel_err(analytic, numeric);
    result.per_input_rel_err.push_back(err);
    result.max_rel_err = std::max(result.max_rel_err, err);
  }
  return result;
}

// Single generic lambda serving both precisions.
template <typename Expr>
GradCheckResult check_gradients(Expr&& expr, const std::vector<cmtm::Tensor>& inputs,
                                std::uint64_t probe_seed, double step = 1e-4) {
  return check_gradients(expr, expr, inputs, probe_seed, step);
}

inline cmtm::Tensor random_tensor(cmtm::Shape shape, cmtm::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  cmtm::Tensor t = cmtm::Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

}  // namespace oracle

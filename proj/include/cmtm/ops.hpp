#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmtm/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, computes the
// forward value (reductions accumulate in double regardless of T), and
// records a backward closure on the tape. Inputs are never mutated.

namespace cmtm {
namespace ops {

namespace detail {

template <typename T>
inline std::vector<T>* grad_target(const TensorT<T>& t) {
  if (t.is_leaf() && !t.requires_grad()) return nullptr;
  return &t.grad_buffer();
}

template <typename T>
inline void check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
#else
  (void)t;
  (void)op;
#endif
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimError(msg);
}

template <typename T>
inline bool any_grad(const TensorT<T>& a) {
  return a.requires_grad() || !a.is_leaf();
}

}  // namespace detail

template <typename T>
TensorT<T> matmul(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2,
                  "matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  detail::require(a.dim(1) == b.dim(0), "matmul inner dimensions disagree: " +
                                            shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out = TensorT<T>::zeros({m, n});
  out.set_requires_grad(detail::any_grad(a) || detail::any_grad(b));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
      }
      out.at(i, j) = static_cast<T>(acc);
    }
  }
  detail::check_finite(out, "matmul");
  tape.record(out, {a, b}, [a, b, out, m, k, n]() mutable {
    const auto& g = out.grad();
    auto* da = detail::grad_target(a);
    auto* db = detail::grad_target(b);
    if (da) {
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < n; ++j) {
            acc += static_cast<double>(g[static_cast<std::size_t>(i * n + j)]) *
                   static_cast<double>(b.at(p, j));
          }
          (*da)[static_cast<std::size_t>(i * k + p)] += static_cast<T>(acc);
        }
      }
    }
    if (db) {
      for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < m; ++i) {
            acc += static_cast<double>(a.at(i, p)) *
                   static_cast<double>(g[static_cast<std::size_t>(i * n + j)]);
          }
          (*db)[static_cast<std::size_t>(p * n + j)] += static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> add(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require(a.shape() == b.shape(), "add shape mismatch: " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  out.set_requires_grad(detail::any_grad(a) || detail::any_grad(b));
  for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  detail::check_finite(out, "add");
  tape.record(out, {a, b}, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (auto* da = detail::grad_target(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i];
    }
    if (auto* db = detail::grad_target(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i];
    }
  });
  return out;
}

template <typename T>
TensorT<T> mul(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require(a.shape() == b.shape(), "mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  out.set_requires_grad(detail::any_grad(a) || detail::any_grad(b));
  for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  detail::check_finite(out, "mul");
  tape.record(out, {a, b}, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (auto* da = detail::grad_target(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * b.at(static_cast<std::int64_t>(i));
    }
    if (auto* db = detail::grad_target(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * a.at(static_cast<std::int64_t>(i));
    }
  });
  return out;
}

template <typename T>
TensorT<T> scale(TapeT<T>& tape, const TensorT<T>& x, T factor) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * factor;
  detail::check_finite(out, "scale");
  tape.record(out, {x}, [x, out, factor]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * factor;
    }
  });
  return out;
}

// Broadcast-add a length-C vector to every row of an N x C matrix.
template <typename T>
TensorT<T> add_rowvec(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& v) {
  detail::require(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
                  "add_rowvec expects [NxC] + [C], got " + shape_str(x.shape()) + " and " +
                      shape_str(v.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x) || detail::any_grad(v));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
  }
  detail::check_finite(out, "add_rowvec");
  tape.record(out, {x, v}, [x, v, out, n, c]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
    }
    if (auto* dv = detail::grad_target(v)) {
      for (std::int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(g[static_cast<std::size_t>(i * c + j)]);
        (*dv)[static_cast<std::size_t>(j)] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> transpose(TapeT<T>& tape, const TensorT<T>& x) {
  detail::require(x.rank() == 2, "transpose expects rank-2, got " + shape_str(x.shape()));
  const std::int64_t m = x.dim(0), n = x.dim(1);
  TensorT<T> out = TensorT<T>::zeros({n, m});
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  }
  tape.record(out, {x}, [x, out, m, n]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          (*dx)[static_cast<std::size_t>(i * n + j)] += g[static_cast<std::size_t>(j * m + i)];
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> reshape(TapeT<T>& tape, const TensorT<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape from " + shape_str(x.shape()) +
                                                       " to " + shape_str(shape) +
                                                       " changes element count");
  TensorT<T> out = TensorT<T>::from(std::move(shape), x.values());
  out.set_requires_grad(detail::any_grad(x));
  tape.record(out, {x}, [x, out]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
    }
  });
  return out;
}

template <typename T>
TensorT<T> softmax_rows(TapeT<T>& tape, const TensorT<T>& x) {
  detail::require(x.rank() == 2, "softmax_rows expects rank-2, got " + shape_str(x.shape()));
  const std::int64_t m = x.dim(0), n = x.dim(1);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < m; ++i) {
    T mx = x.at(i, 0);
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const T e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      denom += static_cast<double>(e);
    }
    for (std::int64_t j = 0; j < n; ++j) {
      out.at(i, j) = static_cast<T>(static_cast<double>(out.at(i, j)) / denom);
    }
  }
  detail::check_finite(out, "softmax_rows");
  tape.record(out, {x}, [x, out, m, n]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          dot += static_cast<double>(g[static_cast<std::size_t>(i * n + j)]) *
                 static_cast<double>(out.at(i, j));
        }
        for (std::int64_t j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i * n + j);
          (*dx)[idx] += static_cast<T>((static_cast<double>(g[idx]) - dot) *
                                       static_cast<double>(out.at(i, j)));
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> layer_norm(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps) {
  detail::require(x.rank() == 2, "layer_norm expects rank-2, got " + shape_str(x.shape()));
  detail::require(gamma.rank() == 1 && beta.rank() == 1 && gamma.dim(0) == x.dim(1) &&
                      beta.dim(0) == x.dim(1),
                  "layer_norm affine shapes " + shape_str(gamma.shape()) + ", " +
                      shape_str(beta.shape()) + " do not match channels of " +
                      shape_str(x.shape()));
  const std::int64_t m = x.dim(0), n = x.dim(1);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x) || detail::any_grad(gamma) || detail::any_grad(beta));
  // Saved for backward: normalized rows and per-row 1/sigma.
  auto norm = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m * n));
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mean += static_cast<double>(x.at(i, j));
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = static_cast<double>(x.at(i, j)) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_sigma)[static_cast<std::size_t>(i)] = static_cast<T>(inv);
    for (std::int64_t j = 0; j < n; ++j) {
      const T y = static_cast<T>((static_cast<double>(x.at(i, j)) - mean) * inv);
      (*norm)[static_cast<std::size_t>(i * n + j)] = y;
      out.at(i, j) = gamma.at(j) * y + beta.at(j);
    }
  }
  detail::check_finite(out, "layer_norm");
  tape.record(out, {x, gamma, beta}, [x, gamma, beta, out, norm, inv_sigma, m, n]() mutable {
    const auto& g = out.grad();
    auto* dx = detail::grad_target(x);
    auto* dgamma = detail::grad_target(gamma);
    auto* dbeta = detail::grad_target(beta);
    for (std::int64_t i = 0; i < m; ++i) {
      if (dx) {
        double mean_gy = 0.0, mean_gyy = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i * n + j);
          const double gy = static_cast<double>(g[idx]) * static_cast<double>(gamma.at(j));
          mean_gy += gy;
          mean_gyy += gy * static_cast<double>((*norm)[idx]);
        }
        mean_gy /= static_cast<double>(n);
        mean_gyy /= static_cast<double>(n);
        const double inv = static_cast<double>((*inv_sigma)[static_cast<std::size_t>(i)]);
        for (std::int64_t j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i * n + j);
          const double gy = static_cast<double>(g[idx]) * static_cast<double>(gamma.at(j));
          (*dx)[idx] += static_cast<T>(
              inv * (gy - mean_gy - static_cast<double>((*norm)[idx]) * mean_gyy));
        }
      }
    }
    if (dgamma) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i * n + j);
          acc += static_cast<double>(g[idx]) * static_cast<double>((*norm)[idx]);
        }
        (*dgamma)[static_cast<std::size_t>(j)] += static_cast<T>(acc);
      }
    }
    if (dbeta) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) acc += static_cast<double>(g[static_cast<std::size_t>(i * n + j)]);
        (*dbeta)[static_cast<std::size_t>(j)] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> gelu(TapeT<T>& tape, const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x.at(i));
    out.at(i) = static_cast<T>(0.5 * v * (1.0 + std::erf(v / 1.4142135623730951)));
  }
  detail::check_finite(out, "gelu");
  tape.record(out, {x}, [x, out]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = static_cast<double>(x.at(static_cast<std::int64_t>(i)));
        const double cdf = 0.5 * (1.0 + std::erf(v / 1.4142135623730951));
        const double pdf = std::exp(-0.5 * v * v) / 2.5066282746310002;  // sqrt(2*pi)
        (*dx)[i] += static_cast<T>(static_cast<double>(g[i]) * (cdf + v * pdf));
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> sigmoid(TapeT<T>& tape, const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x.at(i));
    out.at(i) = static_cast<T>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                        : std::exp(v) / (1.0 + std::exp(v)));
  }
  detail::check_finite(out, "sigmoid");
  tape.record(out, {x}, [x, out]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = static_cast<double>(out.at(static_cast<std::int64_t>(i)));
        (*dx)[i] += static_cast<T>(static_cast<double>(g[i]) * s * (1.0 - s));
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> sum(TapeT<T>& tape, const TensorT<T>& x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.at(i));
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
  out.set_requires_grad(detail::any_grad(x));
  tape.record(out, {x}, [x, out]() mutable {
    const T g = out.grad()[0];
    if (auto* dx = detail::grad_target(x)) {
      for (auto& d : *dx) d += g;
    }
  });
  return out;
}

template <typename T>
TensorT<T> mean(TapeT<T>& tape, const TensorT<T>& x) {
  detail::require(x.numel() > 0, "mean of empty tensor");
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.at(i));
  const double k = static_cast<double>(x.numel());
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / k));
  out.set_requires_grad(detail::any_grad(x));
  tape.record(out, {x}, [x, out, k]() mutable {
    const double g = static_cast<double>(out.grad()[0]) / k;
    if (auto* dx = detail::grad_target(x)) {
      for (auto& d : *dx) d += static_cast<T>(g);
    }
  });
  return out;
}

// Mean binary cross-entropy with logits, numerically stable form.
// Targets are treated as constants.
template <typename T>
TensorT<T> bce_with_logits(TapeT<T>& tape, const TensorT<T>& logits, const TensorT<T>& targets) {
  detail::require(logits.shape() == targets.shape(),
                  "bce_with_logits shape mismatch: " + shape_str(logits.shape()) + " vs " +
                      shape_str(targets.shape()));
  detail::require(logits.numel() > 0, "bce_with_logits on empty tensor");
  const double k = static_cast<double>(logits.numel());
  double acc = 0.0;
  for (std::int64_t i = 0; i < logits.numel(); ++i) {
    const double z = static_cast<double>(logits.at(i));
    const double t = static_cast<double>(targets.at(i));
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / k));
  out.set_requires_grad(detail::any_grad(logits));
  tape.record(out, {logits, targets}, [logits, targets, out, k]() mutable {
    const double g = static_cast<double>(out.grad()[0]) / k;
    if (auto* dz = detail::grad_target(logits)) {
      for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const double z = static_cast<double>(logits.at(i));
        const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        (*dz)[static_cast<std::size_t>(i)] +=
            static_cast<T>(g * (s - static_cast<double>(targets.at(i))));
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> concat_rows(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "concat_rows channel mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const std::int64_t na = a.dim(0), nb = b.dim(0), c = a.dim(1);
  TensorT<T> out = TensorT<T>::zeros({na + nb, c});
  out.set_requires_grad(detail::any_grad(a) || detail::any_grad(b));
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(na * c));
  tape.record(out, {a, b}, [a, b, out, na, nb, c]() mutable {
    const auto& g = out.grad();
    if (auto* da = detail::grad_target(a)) {
      for (std::int64_t i = 0; i < na * c; ++i) (*da)[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    }
    if (auto* db = detail::grad_target(b)) {
      for (std::int64_t i = 0; i < nb * c; ++i) {
        (*db)[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(na * c + i)];
      }
    }
  });
  return out;
}

// Rows [r0, r1) of x as a new tensor.
template <typename T>
TensorT<T> slice_rows(TapeT<T>& tape, const TensorT<T>& x, std::int64_t r0, std::int64_t r1) {
  detail::require(x.rank() == 2, "slice_rows expects rank-2, got " + shape_str(x.shape()));
  detail::require(0 <= r0 && r0 <= r1 && r1 <= x.dim(0),
                  "slice_rows range [" + std::to_string(r0) + "," + std::to_string(r1) +
                      ") out of bounds for " + shape_str(x.shape()));
  const std::int64_t c = x.dim(1);
  TensorT<T> out = TensorT<T>::zeros({r1 - r0, c});
  out.set_requires_grad(detail::any_grad(x));
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
            x.values().begin() + static_cast<std::ptrdiff_t>(r1 * c), out.values().begin());
  tape.record(out, {x}, [x, out, r0, c]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*dx)[static_cast<std::size_t>(r0 * c) + i] += g[i];
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> slice_cols(TapeT<T>& tape, const TensorT<T>& x, std::int64_t c0, std::int64_t c1) {
  detail::require(x.rank() == 2, "slice_cols expects rank-2, got " + shape_str(x.shape()));
  detail::require(0 <= c0 && c0 <= c1 && c1 <= x.dim(1),
                  "slice_cols range [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") out of bounds for " + shape_str(x.shape()));
  const std::int64_t m = x.dim(0), n = x.dim(1), w = c1 - c0;
  TensorT<T> out = TensorT<T>::zeros({m, w});
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  }
  tape.record(out, {x}, [x, out, m, n, c0, w]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          (*dx)[static_cast<std::size_t>(i * n + c0 + j)] += g[static_cast<std::size_t>(i * w + j)];
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> concat_cols(TapeT<T>& tape, const std::vector<TensorT<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols on empty list");
  const std::int64_t m = parts[0].dim(0);
  std::int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == m,
                    "concat_cols row mismatch: " + shape_str(p.shape()));
    total += p.dim(1);
    rg = rg || detail::any_grad(p);
  }
  TensorT<T> out = TensorT<T>::zeros({m, total});
  out.set_requires_grad(rg);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < p.dim(1); ++j) out.at(i, off + j) = p.at(i, j);
    }
    off += p.dim(1);
  }
  tape.record(out, parts, [parts, out, m, total]() mutable {
    const auto& g = out.grad();
    std::int64_t off = 0;
    for (auto& p : parts) {
      const std::int64_t w = p.dim(1);
      if (auto* dp = detail::grad_target(p)) {
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < w; ++j) {
            (*dp)[static_cast<std::size_t>(i * w + j)] +=
                g[static_cast<std::size_t>(i * total + off + j)];
          }
        }
      }
      off += w;
    }
  });
  return out;
}

// Copy of x with the rows listed in `indices` replaced by `row` (length C).
// Gradient flows into `row` only through the replaced positions.
template <typename T>
TensorT<T> replace_rows(TapeT<T>& tape, const TensorT<T>& x, std::vector<std::int64_t> indices,
                        const TensorT<T>& row) {
  detail::require(x.rank() == 2 && row.rank() == 1 && row.dim(0) == x.dim(1),
                  "replace_rows expects [NxC] with row [C], got " + shape_str(x.shape()) +
                      " and " + shape_str(row.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1);
  for (const auto idx : indices) {
    detail::require(0 <= idx && idx < n,
                    "replace_rows index " + std::to_string(idx) + " out of bounds for " +
                        shape_str(x.shape()));
  }
  TensorT<T> out = TensorT<T>::from(x.shape(), x.values());
  out.set_requires_grad(detail::any_grad(x) || detail::any_grad(row));
  for (const auto idx : indices) {
    for (std::int64_t j = 0; j < c; ++j) out.at(idx, j) = row.at(j);
  }
  auto idx_ptr = std::make_shared<std::vector<std::int64_t>>(std::move(indices));
  tape.record(out, {x, row}, [x, row, out, idx_ptr, n, c]() mutable {
    const auto& g = out.grad();
    std::vector<bool> replaced(static_cast<std::size_t>(n), false);
    for (const auto idx : *idx_ptr) replaced[static_cast<std::size_t>(idx)] = true;
    if (auto* dx = detail::grad_target(x)) {
      for (std::int64_t i = 0; i < n; ++i) {
        if (replaced[static_cast<std::size_t>(i)]) continue;
        for (std::int64_t j = 0; j < c; ++j) {
          (*dx)[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(i * c + j)];
        }
      }
    }
    if (auto* dr = detail::grad_target(row)) {
      for (std::int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (const auto idx : *idx_ptr) acc += static_cast<double>(g[static_cast<std::size_t>(idx * c + j)]);
        (*dr)[static_cast<std::size_t>(j)] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

// [H x W x C] -> [H/2 x W/2 x 4C]; the four channel blocks are the 2x2 cell
// in raster order. Inverse of the mapping is the gradient.
template <typename T>
TensorT<T> space_to_depth2(TapeT<T>& tape, const TensorT<T>& x) {
  detail::require(x.rank() == 3, "space_to_depth2 expects rank-3, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  detail::require(h % 2 == 0 && w % 2 == 0,
                  "space_to_depth2 needs even spatial dims, got " + shape_str(x.shape()));
  TensorT<T> out = TensorT<T>::zeros({h / 2, w / 2, 4 * c});
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t y = 0; y < h / 2; ++y) {
    for (std::int64_t xx = 0; xx < w / 2; ++xx) {
      for (std::int64_t dy = 0; dy < 2; ++dy) {
        for (std::int64_t dx = 0; dx < 2; ++dx) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            out.at(y, xx, (dy * 2 + dx) * c + ch) = x.at(2 * y + dy, 2 * xx + dx, ch);
          }
        }
      }
    }
  }
  tape.record(out, {x}, [x, out, h, w, c]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      const std::int64_t ow = w / 2, oc = 4 * c;
      for (std::int64_t y = 0; y < h / 2; ++y) {
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx2 = 0; dx2 < 2; ++dx2) {
              for (std::int64_t ch = 0; ch < c; ++ch) {
                (*dx)[static_cast<std::size_t>(((2 * y + dy) * w + 2 * xx + dx2) * c + ch)] +=
                    g[static_cast<std::size_t>((y * ow + xx) * oc + (dy * 2 + dx2) * c + ch)];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

// Nearest-neighbor 2x upsampling of [H x W x C].
template <typename T>
TensorT<T> upsample_nearest2(TapeT<T>& tape, const TensorT<T>& x) {
  detail::require(x.rank() == 3, "upsample_nearest2 expects rank-3, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  TensorT<T> out = TensorT<T>::zeros({2 * h, 2 * w, c});
  out.set_requires_grad(detail::any_grad(x));
  for (std::int64_t y = 0; y < 2 * h; ++y) {
    for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
      for (std::int64_t ch = 0; ch < c; ++ch) out.at(y, xx, ch) = x.at(y / 2, xx / 2, ch);
    }
  }
  tape.record(out, {x}, [x, out, h, w, c]() mutable {
    const auto& g = out.grad();
    if (auto* dx = detail::grad_target(x)) {
      for (std::int64_t y = 0; y < 2 * h; ++y) {
        for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            (*dx)[static_cast<std::size_t>(((y / 2) * w + xx / 2) * c + ch)] +=
                g[static_cast<std::size_t>((y * 2 * w + xx) * c + ch)];
          }
        }
      }
    }
  });
  return out;
}

// Channel concatenation of two [H x W x C*] maps.
template <typename T>
TensorT<T> concat_channels(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1),
                  "concat_channels spatial mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const std::int64_t h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  TensorT<T> out = TensorT<T>::zeros({h, w, ca + cb});
  out.set_requires_grad(detail::any_grad(a) || detail::any_grad(b));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x0 = 0; x0 < w; ++x0) {
      for (std::int64_t ch = 0; ch < ca; ++ch) out.at(y, x0, ch) = a.at(y, x0, ch);
      for (std::int64_t ch = 0; ch < cb; ++ch) out.at(y, x0, ca + ch) = b.at(y, x0, ch);
    }
  }
  tape.record(out, {a, b}, [a, b, out, h, w, ca, cb]() mutable {
    const auto& g = out.grad();
    auto* da = detail::grad_target(a);
    auto* db = detail::grad_target(b);
    const std::int64_t cc = ca + cb;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x0 = 0; x0 < w; ++x0) {
        if (da) {
          for (std::int64_t ch = 0; ch < ca; ++ch) {
            (*da)[static_cast<std::size_t>((y * w + x0) * ca + ch)] +=
                g[static_cast<std::size_t>((y * w + x0) * cc + ch)];
          }
        }
        if (db) {
          for (std::int64_t ch = 0; ch < cb; ++ch) {
            (*db)[static_cast<std::size_t>((y * w + x0) * cb + ch)] +=
                g[static_cast<std::size_t>((y * w + x0) * cc + ca + ch)];
          }
        }
      }
    }
  });
  return out;
}

// x @ w + b on the trailing channel axis of a [H x W x Cin] map.
template <typename T>
TensorT<T> linear_hw(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& w,
                     const TensorT<T>& b) {
  detail::require(x.rank() == 3, "linear_hw expects rank-3 input, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(0), ww = x.dim(1), cin = x.dim(2);
  TensorT<T> flat = reshape(tape, x, {h * ww, cin});
  TensorT<T> y = matmul(tape, flat, w);
  y = add_rowvec(tape, y, b);
  return reshape(tape, y, {h, ww, w.dim(1)});
}

}  // namespace ops
}  // namespace cmtm

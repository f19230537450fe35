#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmtm/ops.hpp"
#include "cmtm/rng.hpp"
#include "cmtm/tensor.hpp"

// Cross-modality token modulation: the appearance and motion token
// sequences are concatenated and refined by a stack of dense transformer
// blocks so every token attends to every token of both modalities. During
// training a random subset of each stream's tokens is replaced by a
// learnable mask token.

namespace cmtm {

enum class Modality { appearance, motion };
enum class Mode { train, eval };

inline constexpr float kLayerNormEps = 1e-5f;

struct CmtmConfig {
  std::int64_t channels = 64;
  std::int64_t blocks = 2;
  std::int64_t heads = 1;
  double mask_ratio = 0.4;
  bool apply_to_app = true;
  bool apply_to_mo = true;
  bool use_positional = true;
  bool use_modality = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (blocks < 1) throw ConfigError("blocks must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (channels % heads != 0) {
      throw ConfigError("channels (" + std::to_string(channels) + ") not divisible by heads (" +
                        std::to_string(heads) + ")");
    }
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
      throw ConfigError("mask_ratio must lie in [0, 1), got " + std::to_string(mask_ratio));
    }
  }
};

// Realized retain/mask assignment for one stream in one training iteration.
struct MaskPlan {
  std::vector<std::uint8_t> retain;          // 1 = kept, 0 = masked
  std::vector<std::int64_t> masked_indices;  // sorted positions where retain == 0
  double ratio = 0.0;

  std::int64_t size() const { return static_cast<std::int64_t>(retain.size()); }
  std::int64_t masked_count() const { return static_cast<std::int64_t>(masked_indices.size()); }
};

template <typename T>
struct TokenSequenceT {
  TensorT<T> tokens;  // [N x C]
  Modality modality = Modality::appearance;
  std::int64_t h = 0, w = 0;

  std::int64_t n() const { return tokens.dim(0); }
  std::int64_t channels() const { return tokens.dim(1); }
};

using TokenSequence = TokenSequenceT<float>;

template <typename T>
struct BlockParamsT {
  TensorT<T> wq, wk, wv, wo;              // C x C, no biases
  TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // C x 4C, 4C, 4C x C, C
  TensorT<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

using BlockParams = BlockParamsT<float>;

template <typename T>
struct CmtmParamsT {
  std::vector<BlockParamsT<T>> blocks;
  TensorT<T> mask_token_app, mask_token_mo;      // C, learnable
  TensorT<T> modality_emb_app, modality_emb_mo;  // C, learnable

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors(const std::string& prefix) const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + "block" + std::to_string(i) + ".";
      const auto& b = blocks[i];
      out.emplace_back(p + "wq", b.wq);
      out.emplace_back(p + "wk", b.wk);
      out.emplace_back(p + "wv", b.wv);
      out.emplace_back(p + "wo", b.wo);
      out.emplace_back(p + "ffn_w1", b.ffn_w1);
      out.emplace_back(p + "ffn_b1", b.ffn_b1);
      out.emplace_back(p + "ffn_w2", b.ffn_w2);
      out.emplace_back(p + "ffn_b2", b.ffn_b2);
      out.emplace_back(p + "ln1_gamma", b.ln1_gamma);
      out.emplace_back(p + "ln1_beta", b.ln1_beta);
      out.emplace_back(p + "ln2_gamma", b.ln2_gamma);
      out.emplace_back(p + "ln2_beta", b.ln2_beta);
    }
    out.emplace_back(prefix + "mask_token_app", mask_token_app);
    out.emplace_back(prefix + "mask_token_mo", mask_token_mo);
    out.emplace_back(prefix + "modality_emb_app", modality_emb_app);
    out.emplace_back(prefix + "modality_emb_mo", modality_emb_mo);
    return out;
  }
};

using CmtmParams = CmtmParamsT<float>;

namespace init {

template <typename T>
TensorT<T> normal(Shape shape, Rng& rng, double stddev) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
TensorT<T> constant(Shape shape, T value) {
  TensorT<T> t = TensorT<T>::full(std::move(shape), value, true);
  return t;
}

}  // namespace init

template <typename T>
CmtmParamsT<T> init_cmtm_params(const CmtmConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::int64_t c = cfg.channels;
  CmtmParamsT<T> p;
  p.blocks.resize(static_cast<std::size_t>(cfg.blocks));
  for (auto& b : p.blocks) {
    b.wq = init::normal<T>({c, c}, rng, 0.02);
    b.wk = init::normal<T>({c, c}, rng, 0.02);
    b.wv = init::normal<T>({c, c}, rng, 0.02);
    b.wo = init::normal<T>({c, c}, rng, 0.02);
    b.ffn_w1 = init::normal<T>({c, 4 * c}, rng, 0.02);
    b.ffn_b1 = init::constant<T>({4 * c}, T(0));
    b.ffn_w2 = init::normal<T>({4 * c, c}, rng, 0.02);
    b.ffn_b2 = init::constant<T>({c}, T(0));
    b.ln1_gamma = init::constant<T>({c}, T(1));
    b.ln1_beta = init::constant<T>({c}, T(0));
    b.ln2_gamma = init::constant<T>({c}, T(1));
    b.ln2_beta = init::constant<T>({c}, T(0));
  }
  p.mask_token_app = init::normal<T>({c}, rng, 0.02);
  p.mask_token_mo = init::normal<T>({c}, rng, 0.02);
  p.modality_emb_app = init::normal<T>({c}, rng, 0.02);
  p.modality_emb_mo = init::normal<T>({c}, rng, 0.02);
  return p;
}

template <typename From, typename To>
CmtmParamsT<To> params_cast(const CmtmParamsT<From>& src) {
  CmtmParamsT<To> p;
  for (const auto& b : src.blocks) {
    BlockParamsT<To> nb;
    nb.wq = tensor_cast<From, To>(b.wq);
    nb.wk = tensor_cast<From, To>(b.wk);
    nb.wv = tensor_cast<From, To>(b.wv);
    nb.wo = tensor_cast<From, To>(b.wo);
    nb.ffn_w1 = tensor_cast<From, To>(b.ffn_w1);
    nb.ffn_b1 = tensor_cast<From, To>(b.ffn_b1);
    nb.ffn_w2 = tensor_cast<From, To>(b.ffn_w2);
    nb.ffn_b2 = tensor_cast<From, To>(b.ffn_b2);
    nb.ln1_gamma = tensor_cast<From, To>(b.ln1_gamma);
    nb.ln1_beta = tensor_cast<From, To>(b.ln1_beta);
    nb.ln2_gamma = tensor_cast<From, To>(b.ln2_gamma);
    nb.ln2_beta = tensor_cast<From, To>(b.ln2_beta);
    p.blocks.push_back(std::move(nb));
  }
  p.mask_token_app = tensor_cast<From, To>(src.mask_token_app);
  p.mask_token_mo = tensor_cast<From, To>(src.mask_token_mo);
  p.modality_emb_app = tensor_cast<From, To>(src.modality_emb_app);
  p.modality_emb_mo = tensor_cast<From, To>(src.modality_emb_mo);
  return p;
}

// Flattens a [H x W x C] feature map into row-major tokens: token i holds
// spatial cell (i / W, i % W).
template <typename T>
TokenSequenceT<T> tokenize(TapeT<T>& tape, const TensorT<T>& feature, Modality modality) {
  if (feature.rank() != 3) {
    throw DimError("tokenize expects [HxWxC], got " + shape_str(feature.shape()));
  }
  const std::int64_t h = feature.dim(0), w = feature.dim(1), c = feature.dim(2);
  TokenSequenceT<T> seq;
  seq.tokens = ops::reshape(tape, feature, {h * w, c});
  seq.modality = modality;
  seq.h = h;
  seq.w = w;
  return seq;
}

template <typename T>
TensorT<T> detokenize(TapeT<T>& tape, const TokenSequenceT<T>& seq) {
  return ops::reshape(tape, seq.tokens, {seq.h, seq.w, seq.tokens.dim(1)});
}

// Fixed 2-D sinusoidal table: the first C/2 channels encode the row index,
// the last C/2 the column index, each half as a standard sin/cos interleave
// with base 10000. Not trainable.
template <typename T>
TensorT<T> positional_embedding(std::int64_t h, std::int64_t w, std::int64_t c) {
  if (h < 1 || w < 1 || c < 1) throw ConfigError("positional_embedding sizes must be positive");
  if (c % 2 != 0) {
    throw ConfigError("positional_embedding needs an even channel count, got " +
                      std::to_string(c));
  }
  const std::int64_t half = c / 2;
  TensorT<T> table = TensorT<T>::zeros({h * w, c});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t row = y * w + x;
      for (std::int64_t k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k / 2) /
                                                   static_cast<double>(half));
        const double ay = static_cast<double>(y) * freq;
        const double ax = static_cast<double>(x) * freq;
        table.at(row, k) = static_cast<T>(k % 2 == 0 ? std::sin(ay) : std::cos(ay));
        table.at(row, half + k) = static_cast<T>(k % 2 == 0 ? std::sin(ax) : std::cos(ax));
      }
    }
  }
  return table;
}

// Uniformly samples floor(ratio * n) positions to mask, without
// replacement. ratio == 0 consumes no randomness.
inline MaskPlan sample_mask_plan(std::int64_t n, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  if (n < 0) throw ConfigError("token count must be nonnegative");
  // 1e-9 guard keeps floor() exact when ratio * n lands on an integer that
  // double representation puts infinitesimally below itself.
  const auto k = static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
  plan.retain.assign(static_cast<std::size_t>(n), 1);
  for (const auto idx : plan.masked_indices) plan.retain[static_cast<std::size_t>(idx)] = 0;
  return plan;
}

// Replaces masked rows with the modality's learnable mask token. Retained
// rows pass through unchanged; the mask token receives gradient only
// through masked positions.
template <typename T>
TokenSequenceT<T> apply_token_mask(TapeT<T>& tape, const TokenSequenceT<T>& seq,
                                   const MaskPlan& plan, const CmtmParamsT<T>& params) {
  if (plan.size() != seq.n()) {
    throw DimError("mask plan covers " + std::to_string(plan.size()) + " tokens but sequence has " +
                   std::to_string(seq.n()));
  }
  const TensorT<T>& token =
      seq.modality == Modality::appearance ? params.mask_token_app : params.mask_token_mo;
  TokenSequenceT<T> out = seq;
  out.tokens = ops::replace_rows(tape, seq.tokens, plan.masked_indices, token);
  return out;
}

// Scaled dot-product attention over every row of x jointly (all tokens of
// both modalities). Returns the pre-projection attention output.
template <typename T>
TensorT<T> dense_attention(TapeT<T>& tape, const TensorT<T>& x, const BlockParamsT<T>& block,
                           std::int64_t heads) {
  const std::int64_t c = x.dim(1);
  if (c % heads != 0) {
    throw ConfigError("channels (" + std::to_string(c) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  const std::int64_t ch = c / heads;
  TensorT<T> q = ops::matmul(tape, x, block.wq);
  TensorT<T> k = ops::matmul(tape, x, block.wk);
  TensorT<T> v = ops::matmul(tape, x, block.wv);
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ch)));
  std::vector<TensorT<T>> parts;
  parts.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t hh = 0; hh < heads; ++hh) {
    TensorT<T> qh = heads == 1 ? q : ops::slice_cols(tape, q, hh * ch, (hh + 1) * ch);
    TensorT<T> kh = heads == 1 ? k : ops::slice_cols(tape, k, hh * ch, (hh + 1) * ch);
    TensorT<T> vh = heads == 1 ? v : ops::slice_cols(tape, v, hh * ch, (hh + 1) * ch);
    TensorT<T> logits = ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)), inv_scale);
    TensorT<T> weights = ops::softmax_rows(tape, logits);
    parts.push_back(ops::matmul(tape, weights, vh));
  }
  return heads == 1 ? parts[0] : ops::concat_cols(tape, parts);
}

// Pre-norm residual transformer layer over the concatenated token matrix:
// x <- x + proj(attention(LN(x))); x <- x + FFN(LN(x)).
template <typename T>
TensorT<T> dense_transformer_block(TapeT<T>& tape, const TensorT<T>& tokens,
                                   const BlockParamsT<T>& block, std::int64_t heads) {
  if (tokens.rank() != 2) {
    throw DimError("dense_transformer_block expects [NxC], got " + shape_str(tokens.shape()));
  }
  TensorT<T> y = ops::layer_norm(tape, tokens, block.ln1_gamma, block.ln1_beta,
                                 static_cast<T>(kLayerNormEps));
  TensorT<T> a = dense_attention(tape, y, block, heads);
  TensorT<T> x = ops::add(tape, tokens, ops::matmul(tape, a, block.wo));
  TensorT<T> z =
      ops::layer_norm(tape, x, block.ln2_gamma, block.ln2_beta, static_cast<T>(kLayerNormEps));
  TensorT<T> f = ops::add_rowvec(tape, ops::matmul(tape, z, block.ffn_w1), block.ffn_b1);
  f = ops::gelu(tape, f);
  f = ops::add_rowvec(tape, ops::matmul(tape, f, block.ffn_w2), block.ffn_b2);
  return ops::add(tape, x, f);
}

// Algebraic reference route for the same attention: forms the four blocks
// of the row-softmaxed weight matrix (app->app, app->mo, mo->app, mo->mo)
// explicitly and combines them per stream. Forward-only, double-precision
// internals; used as an oracle against dense_attention, not in training.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> block_decomposition(const TensorT<T>& tokens_app,
                                                      const TensorT<T>& tokens_mo,
                                                      const BlockParamsT<T>& block,
                                                      std::int64_t heads) {
  if (tokens_app.rank() != 2 || tokens_mo.rank() != 2 ||
      tokens_app.shape() != tokens_mo.shape()) {
    throw DimError("block_decomposition expects equal [NxC] streams, got " +
                   shape_str(tokens_app.shape()) + " and " + shape_str(tokens_mo.shape()));
  }
  const std::int64_t n = tokens_app.dim(0), c = tokens_app.dim(1);
  if (c % heads != 0) {
    throw ConfigError("channels (" + std::to_string(c) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  const std::int64_t ch = c / heads;

  auto project = [&](const TensorT<T>& t, const TensorT<T>& w) {
    std::vector<double> out(static_cast<std::size_t>(n * c), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < c; ++p) {
          acc += static_cast<double>(t.at(i, p)) * static_cast<double>(w.at(p, j));
        }
        out[static_cast<std::size_t>(i * c + j)] = acc;
      }
    }
    return out;
  };
  const auto qa = project(tokens_app, block.wq), ka = project(tokens_app, block.wk),
             va = project(tokens_app, block.wv);
  const auto qm = project(tokens_mo, block.wq), km = project(tokens_mo, block.wk),
             vm = project(tokens_mo, block.wv);

  TensorT<T> out_app = TensorT<T>::zeros({n, c});
  TensorT<T> out_mo = TensorT<T>::zeros({n, c});
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(ch));

  // One query row at a time: logits against both key blocks, joint row
  // softmax, then the two weight blocks applied to their value blocks.
  auto attend = [&](const std::vector<double>& q, TensorT<T>& dst) {
    std::vector<double> l_self(static_cast<std::size_t>(n)), l_cross(static_cast<std::size_t>(n));
    for (std::int64_t hh = 0; hh < heads; ++hh) {
      const std::int64_t c0 = hh * ch;
      for (std::int64_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::int64_t j = 0; j < n; ++j) {
          double acc_a = 0.0, acc_m = 0.0;
          for (std::int64_t p = 0; p < ch; ++p) {
            const double qv = q[static_cast<std::size_t>(i * c + c0 + p)];
            acc_a += qv * ka[static_cast<std::size_t>(j * c + c0 + p)];
            acc_m += qv * km[static_cast<std::size_t>(j * c + c0 + p)];
          }
          l_self[static_cast<std::size_t>(j)] = acc_a * inv_scale;
          l_cross[static_cast<std::size_t>(j)] = acc_m * inv_scale;
          mx = std::max(mx, std::max(l_self[static_cast<std::size_t>(j)],
                                     l_cross[static_cast<std::size_t>(j)]));
        }
        double denom = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          l_self[static_cast<std::size_t>(j)] = std::exp(l_self[static_cast<std::size_t>(j)] - mx);
          l_cross[static_cast<std::size_t>(j)] = std::exp(l_cross[static_cast<std::size_t>(j)] - mx);
          denom += l_self[static_cast<std::size_t>(j)] + l_cross[static_cast<std::size_t>(j)];
        }
        for (std::int64_t p = 0; p < ch; ++p) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < n; ++j) {
            acc += l_self[static_cast<std::size_t>(j)] * va[static_cast<std::size_t>(j * c + c0 + p)] +
                   l_cross[static_cast<std::size_t>(j)] * vm[static_cast<std::size_t>(j * c + c0 + p)];
          }
          dst.at(i, c0 + p) = static_cast<T>(acc / denom);
        }
      }
    }
  };
  attend(qa, out_app);
  attend(qm, out_mo);
  return {out_app, out_mo};
}

template <typename T>
struct CmtmOutputT {
  TensorT<T> app, mo;  // modulated [H x W x C] features
  std::optional<MaskPlan> plan_app, plan_mo;
};

using CmtmOutput = CmtmOutputT<float>;

// Full module: tokenize both streams, add positional and modality
// embeddings, mask (training only, per-stream toggle), concatenate, run D
// dense transformer blocks, split and restore the spatial layout. Masking
// replaces the content+embedding sum; embeddings are not re-added after.
template <typename T>
CmtmOutputT<T> cmtm_forward(TapeT<T>& tape, const TensorT<T>& f_app, const TensorT<T>& f_mo,
                            const CmtmConfig& cfg, const CmtmParamsT<T>& params, Mode mode,
                            Rng* rng) {
  cfg.validate();
  if (f_app.rank() != 3 || f_mo.rank() != 3 || f_app.shape() != f_mo.shape()) {
    throw DimError("cmtm_forward expects equal [HxWxC] streams, got " + shape_str(f_app.shape()) +
                   " and " + shape_str(f_mo.shape()));
  }
  if (f_app.dim(2) != cfg.channels) {
    throw DimError("feature channels " + std::to_string(f_app.dim(2)) +
                   " do not match configured channels " + std::to_string(cfg.channels));
  }
  TokenSequenceT<T> app = tokenize(tape, f_app, Modality::appearance);
  TokenSequenceT<T> mo = tokenize(tape, f_mo, Modality::motion);
  const std::int64_t n = app.n();

  if (cfg.use_positional) {
    const TensorT<T> pos = positional_embedding<T>(app.h, app.w, cfg.channels);
    app.tokens = ops::add(tape, app.tokens, pos);
    mo.tokens = ops::add(tape, mo.tokens, pos);
  }
  if (cfg.use_modality) {
    app.tokens = ops::add_rowvec(tape, app.tokens, params.modality_emb_app);
    mo.tokens = ops::add_rowvec(tape, mo.tokens, params.modality_emb_mo);
  }

  CmtmOutputT<T> out;
  if (mode == Mode::train && cfg.apply_to_app) {
    if (rng == nullptr) throw UsageError("train-mode cmtm_forward requires an rng");
    out.plan_app = sample_mask_plan(n, cfg.mask_ratio, *rng);
    app = apply_token_mask(tape, app, *out.plan_app, params);
  }
  if (mode == Mode::train && cfg.apply_to_mo) {
    if (rng == nullptr) throw UsageError("train-mode cmtm_forward requires an rng");
    out.plan_mo = sample_mask_plan(n, cfg.mask_ratio, *rng);
    mo = apply_token_mask(tape, mo, *out.plan_mo, params);
  }

  TensorT<T> x = ops::concat_rows(tape, app.tokens, mo.tokens);
  for (const auto& block : params.blocks) {
    x = dense_transformer_block(tape, x, block, cfg.heads);
  }
  TokenSequenceT<T> res_app{ops::slice_rows(tape, x, 0, n), Modality::appearance, app.h, app.w};
  TokenSequenceT<T> res_mo{ops::slice_rows(tape, x, n, 2 * n), Modality::motion, mo.h, mo.w};
  out.app = detokenize(tape, res_app);
  out.mo = detokenize(tape, res_mo);
  return out;
}

}  // namespace cmtm

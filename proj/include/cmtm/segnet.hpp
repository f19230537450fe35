#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmtm/cmtm.hpp"
#include "cmtm/metrics.hpp"
#include "cmtm/ops.hpp"

// Toy two-stream encoder/decoder segmentation network. Each stream runs a
// three-stage hierarchical encoder (stride-2 patch merge + pointwise MLP);
// stage-3 features of both streams pass through the token modulation
// module; the decoder fuses the per-stage features of both streams with
// nearest-neighbor upsampling and pointwise MLPs, plus a full-resolution
// stem on the raw inputs, and projects to one logit per pixel.

namespace cmtm {

struct SegConfig {
  std::int64_t c1 = 16, c2 = 32, c3 = 64;  // per-stage encoder channels
  std::int64_t decoder_channels = 32;
  CmtmConfig cmtm;

  void validate() const {
    if (c1 < 1 || c2 < 1 || c3 < 1 || decoder_channels < 1) {
      throw ConfigError("channel plan entries must be >= 1");
    }
    if (cmtm.channels != c3) {
      throw ConfigError("cmtm channels (" + std::to_string(cmtm.channels) +
                        ") must equal stage-3 channels (" + std::to_string(c3) + ")");
    }
    cmtm.validate();
  }
};

template <typename T>
struct EncoderStageParamsT {
  TensorT<T> merge_w, merge_b;          // 4*Cin -> Cout after space-to-depth
  TensorT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // residual pointwise MLP
};

template <typename T>
struct EncoderParamsT {
  std::array<EncoderStageParamsT<T>, 3> stages;

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors(const std::string& prefix) const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string p = prefix + "stage" + std::to_string(i) + ".";
      const auto& s = stages[i];
      out.emplace_back(p + "merge_w", s.merge_w);
      out.emplace_back(p + "merge_b", s.merge_b);
      out.emplace_back(p + "mlp_w1", s.mlp_w1);
      out.emplace_back(p + "mlp_b1", s.mlp_b1);
      out.emplace_back(p + "mlp_w2", s.mlp_w2);
      out.emplace_back(p + "mlp_b2", s.mlp_b2);
    }
    return out;
  }
};

template <typename T>
struct DecoderParamsT {
  TensorT<T> proj1_w, proj1_b, proj2_w, proj2_b, proj3_w, proj3_b;  // stage fusions
  TensorT<T> mlp2_w1, mlp2_b1, mlp2_w2, mlp2_b2;
  TensorT<T> mlp1_w1, mlp1_b1, mlp1_w2, mlp1_b2;
  TensorT<T> stem_w, stem_b;  // raw image+flow channels at full resolution
  TensorT<T> mlp0_w1, mlp0_b1, mlp0_w2, mlp0_b2;
  TensorT<T> head_w, head_b;

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors(const std::string& prefix) const {
    return {
        {prefix + "proj1_w", proj1_w}, {prefix + "proj1_b", proj1_b},
        {prefix + "proj2_w", proj2_w}, {prefix + "proj2_b", proj2_b},
        {prefix + "proj3_w", proj3_w}, {prefix + "proj3_b", proj3_b},
        {prefix + "mlp2_w1", mlp2_w1}, {prefix + "mlp2_b1", mlp2_b1},
        {prefix + "mlp2_w2", mlp2_w2}, {prefix + "mlp2_b2", mlp2_b2},
        {prefix + "mlp1_w1", mlp1_w1}, {prefix + "mlp1_b1", mlp1_b1},
        {prefix + "mlp1_w2", mlp1_w2}, {prefix + "mlp1_b2", mlp1_b2},
        {prefix + "stem_w", stem_w},   {prefix + "stem_b", stem_b},
        {prefix + "mlp0_w1", mlp0_w1}, {prefix + "mlp0_b1", mlp0_b1},
        {prefix + "mlp0_w2", mlp0_w2}, {prefix + "mlp0_b2", mlp0_b2},
        {prefix + "head_w", head_w},   {prefix + "head_b", head_b},
    };
  }
};

template <typename T>
struct SegModelT {
  EncoderParamsT<T> encoder_app, encoder_mo;
  CmtmParamsT<T> cmtm;
  DecoderParamsT<T> decoder;

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    auto extend = [&out](std::vector<std::pair<std::string, TensorT<T>>> part) {
      out.insert(out.end(), part.begin(), part.end());
    };
    extend(encoder_app.named_tensors("encoder_app."));
    extend(encoder_mo.named_tensors("encoder_mo."));
    extend(cmtm.named_tensors("cmtm."));
    extend(decoder.named_tensors("decoder."));
    return out;
  }
};

using SegModel = SegModelT<float>;

template <typename T>
struct StreamFeaturesT {
  TensorT<T> s1, s2, s3;  // H/2, H/4, H/8
};

namespace seg_detail {

template <typename T>
TensorT<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), true);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

// Residual tails and the logit head start near (not at) zero: the network
// opens as a near-identity with near-zero logits, which keeps the initial
// loss at ~ln 2 while every parameter still receives gradient.
template <typename T>
TensorT<T> damped_normal(Shape shape, Rng& rng) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * 0.01);
  return t;
}

template <typename T>
EncoderStageParamsT<T> init_stage(std::int64_t cin, std::int64_t cout, Rng& rng) {
  EncoderStageParamsT<T> s;
  s.merge_w = he_normal<T>({4 * cin, cout}, 4 * cin, rng);
  s.merge_b = init::constant<T>({cout}, T(0));
  s.mlp_w1 = he_normal<T>({cout, 2 * cout}, cout, rng);
  s.mlp_b1 = init::constant<T>({2 * cout}, T(0));
  s.mlp_w2 = damped_normal<T>({2 * cout, cout}, rng);
  s.mlp_b2 = init::constant<T>({cout}, T(0));
  return s;
}

// y + W2 gelu(W1 y) applied pointwise over a [H x W x C] map.
template <typename T>
TensorT<T> residual_mlp(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& w1,
                        const TensorT<T>& b1, const TensorT<T>& w2, const TensorT<T>& b2) {
  TensorT<T> hidden = ops::gelu(tape, ops::linear_hw(tape, x, w1, b1));
  return ops::add(tape, x, ops::linear_hw(tape, hidden, w2, b2));
}

}  // namespace seg_detail

template <typename T>
EncoderParamsT<T> init_encoder(const SegConfig& cfg, Rng& rng) {
  EncoderParamsT<T> p;
  p.stages[0] = seg_detail::init_stage<T>(3, cfg.c1, rng);
  p.stages[1] = seg_detail::init_stage<T>(cfg.c1, cfg.c2, rng);
  p.stages[2] = seg_detail::init_stage<T>(cfg.c2, cfg.c3, rng);
  return p;
}

template <typename T>
DecoderParamsT<T> init_decoder(const SegConfig& cfg, Rng& rng) {
  using seg_detail::damped_normal;
  using seg_detail::he_normal;
  const std::int64_t cd = cfg.decoder_channels;
  DecoderParamsT<T> p;
  p.proj1_w = he_normal<T>({cfg.c1, cd}, cfg.c1, rng);
  p.proj1_b = init::constant<T>({cd}, T(0));
  p.proj2_w = he_normal<T>({cfg.c2, cd}, cfg.c2, rng);
  p.proj2_b = init::constant<T>({cd}, T(0));
  p.proj3_w = he_normal<T>({cfg.c3, cd}, cfg.c3, rng);
  p.proj3_b = init::constant<T>({cd}, T(0));
  p.mlp2_w1 = he_normal<T>({cd, 2 * cd}, cd, rng);
  p.mlp2_b1 = init::constant<T>({2 * cd}, T(0));
  p.mlp2_w2 = damped_normal<T>({2 * cd, cd}, rng);
  p.mlp2_b2 = init::constant<T>({cd}, T(0));
  p.mlp1_w1 = he_normal<T>({cd, 2 * cd}, cd, rng);
  p.mlp1_b1 = init::constant<T>({2 * cd}, T(0));
  p.mlp1_w2 = damped_normal<T>({2 * cd, cd}, rng);
  p.mlp1_b2 = init::constant<T>({cd}, T(0));
  p.stem_w = he_normal<T>({6, cd}, 6, rng);
  p.stem_b = init::constant<T>({cd}, T(0));
  p.mlp0_w1 = he_normal<T>({cd, 2 * cd}, cd, rng);
  p.mlp0_b1 = init::constant<T>({2 * cd}, T(0));
  p.mlp0_w2 = damped_normal<T>({2 * cd, cd}, rng);
  p.mlp0_b2 = init::constant<T>({cd}, T(0));
  p.head_w = damped_normal<T>({cd, 1}, rng);
  p.head_b = init::constant<T>({1}, T(0));
  return p;
}

// Draw order is fixed: appearance encoder, motion encoder, token
// modulation parameters, decoder.
template <typename T>
SegModelT<T> init_seg_model(const SegConfig& cfg, Rng& rng) {
  cfg.validate();
  SegModelT<T> m;
  m.encoder_app = init_encoder<T>(cfg, rng);
  m.encoder_mo = init_encoder<T>(cfg, rng);
  m.cmtm = init_cmtm_params<T>(cfg.cmtm, rng);
  m.decoder = init_decoder<T>(cfg, rng);
  return m;
}

template <typename From, typename To>
SegModelT<To> model_cast(const SegModelT<From>& src) {
  SegModelT<To> dst;
  auto cast_stage = [](const EncoderStageParamsT<From>& s) {
    EncoderStageParamsT<To> d;
    d.merge_w = tensor_cast<From, To>(s.merge_w);
    d.merge_b = tensor_cast<From, To>(s.merge_b);
    d.mlp_w1 = tensor_cast<From, To>(s.mlp_w1);
    d.mlp_b1 = tensor_cast<From, To>(s.mlp_b1);
    d.mlp_w2 = tensor_cast<From, To>(s.mlp_w2);
    d.mlp_b2 = tensor_cast<From, To>(s.mlp_b2);
    return d;
  };
  for (int i = 0; i < 3; ++i) {
    dst.encoder_app.stages[static_cast<std::size_t>(i)] =
        cast_stage(src.encoder_app.stages[static_cast<std::size_t>(i)]);
    dst.encoder_mo.stages[static_cast<std::size_t>(i)] =
        cast_stage(src.encoder_mo.stages[static_cast<std::size_t>(i)]);
  }
  dst.cmtm = params_cast<From, To>(src.cmtm);
  const auto src_named = src.decoder.named_tensors("");
  DecoderParamsT<To>& d = dst.decoder;
  std::vector<TensorT<To>*> slots = {
      &d.proj1_w, &d.proj1_b, &d.proj2_w, &d.proj2_b, &d.proj3_w, &d.proj3_b,
      &d.mlp2_w1, &d.mlp2_b1, &d.mlp2_w2, &d.mlp2_b2,
      &d.mlp1_w1, &d.mlp1_b1, &d.mlp1_w2, &d.mlp1_b2,
      &d.stem_w,  &d.stem_b,
      &d.mlp0_w1, &d.mlp0_b1, &d.mlp0_w2, &d.mlp0_b2,
      &d.head_w,  &d.head_b,
  };
  for (std::size_t i = 0; i < slots.size(); ++i) {
    *slots[i] = tensor_cast<From, To>(src_named[i].second);
  }
  return dst;
}

// Three stages of stride-2 patch merge + residual pointwise MLP.
template <typename T>
StreamFeaturesT<T> encoder_forward(TapeT<T>& tape, const TensorT<T>& image,
                                   const EncoderParamsT<T>& params) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimError("encoder expects [HxWx3], got " + shape_str(image.shape()));
  }
  if (image.dim(0) % 8 != 0 || image.dim(1) % 8 != 0) {
    throw ConfigError("encoder input size " + shape_str(image.shape()) +
                      " must be divisible by 8");
  }
  StreamFeaturesT<T> feats;
  TensorT<T> x = image;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = params.stages[i];
    x = ops::space_to_depth2(tape, x);
    x = ops::linear_hw(tape, x, s.merge_w, s.merge_b);
    x = seg_detail::residual_mlp(tape, x, s.mlp_w1, s.mlp_b1, s.mlp_w2, s.mlp_b2);
    if (i == 0) feats.s1 = x;
    if (i == 1) feats.s2 = x;
    if (i == 2) feats.s3 = x;
  }
  return feats;
}

template <typename T>
TensorT<T> decoder_forward(TapeT<T>& tape, const StreamFeaturesT<T>& app,
                           const StreamFeaturesT<T>& mo, const TensorT<T>& mod_app,
                           const TensorT<T>& mod_mo, const TensorT<T>& image,
                           const TensorT<T>& flow_rgb, const DecoderParamsT<T>& p) {
  using namespace ops;
  TensorT<T> x = gelu(tape, linear_hw(tape, add(tape, mod_app, mod_mo), p.proj3_w, p.proj3_b));
  x = upsample_nearest2(tape, x);
  TensorT<T> p2 = gelu(tape, linear_hw(tape, add(tape, app.s2, mo.s2), p.proj2_w, p.proj2_b));
  x = seg_detail::residual_mlp(tape, add(tape, x, p2), p.mlp2_w1, p.mlp2_b1, p.mlp2_w2, p.mlp2_b2);
  x = upsample_nearest2(tape, x);
  TensorT<T> p1 = gelu(tape, linear_hw(tape, add(tape, app.s1, mo.s1), p.proj1_w, p.proj1_b));
  x = seg_detail::residual_mlp(tape, add(tape, x, p1), p.mlp1_w1, p.mlp1_b1, p.mlp1_w2, p.mlp1_b2);
  x = upsample_nearest2(tape, x);
  TensorT<T> stem =
      gelu(tape, linear_hw(tape, concat_channels(tape, image, flow_rgb), p.stem_w, p.stem_b));
  x = seg_detail::residual_mlp(tape, add(tape, x, stem), p.mlp0_w1, p.mlp0_b1, p.mlp0_w2, p.mlp0_b2);
  TensorT<T> logits = linear_hw(tape, x, p.head_w, p.head_b);
  return reshape(tape, logits, {image.dim(0), image.dim(1)});
}

// Full network: two encoders, token modulation on stage-3 features, fused
// decode to per-pixel logits at input resolution.
template <typename T>
TensorT<T> model_forward(TapeT<T>& tape, const TensorT<T>& image, const TensorT<T>& flow_rgb,
                         const SegModelT<T>& model, const SegConfig& cfg, Mode mode, Rng* rng) {
  if (image.shape() != flow_rgb.shape()) {
    throw DimError("image " + shape_str(image.shape()) + " and flow " +
                   shape_str(flow_rgb.shape()) + " must share shape");
  }
  StreamFeaturesT<T> app = encoder_forward(tape, image, model.encoder_app);
  StreamFeaturesT<T> mo = encoder_forward(tape, flow_rgb, model.encoder_mo);
  CmtmOutputT<T> mod = cmtm_forward(tape, app.s3, mo.s3, cfg.cmtm, model.cmtm, mode, rng);
  return decoder_forward(tape, app, mo, mod.app, mod.mo, image, flow_rgb, model.decoder);
}

template <typename T>
TensorT<T> mask_to_targets(const BinaryMask& mask) {
  TensorT<T> t = TensorT<T>::zeros({mask.h, mask.w});
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.at(i) = mask.data[static_cast<std::size_t>(i)] ? T(1) : T(0);
  }
  return t;
}

// Mean binary cross-entropy with logits against a binary ground-truth mask.
template <typename T>
TensorT<T> segmentation_loss(TapeT<T>& tape, const TensorT<T>& logits, const BinaryMask& gt) {
  if (logits.rank() != 2 || logits.dim(0) != gt.h || logits.dim(1) != gt.w) {
    throw DimError("logits " + shape_str(logits.shape()) + " do not match mask [" +
                   std::to_string(gt.h) + "x" + std::to_string(gt.w) + "]");
  }
  return ops::bce_with_logits(tape, logits, mask_to_targets<T>(gt));
}

}  // namespace cmtm

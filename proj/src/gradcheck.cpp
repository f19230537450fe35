#include "cmtm/gradcheck.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "cmtm/rng.hpp"
#include "cmtm/segnet.hpp"
#include "cmtm/synthvid.hpp"
#include "cmtm/trainer.hpp"

namespace cmtm {

RunConfig gradcheck_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.model.c1 = 4;
  cfg.model.c2 = 6;
  cfg.model.c3 = 8;
  cfg.model.decoder_channels = 6;
  cfg.model.cmtm.channels = 8;
  cfg.model.cmtm.blocks = 1;
  cfg.model.cmtm.heads = 1;
  cfg.model.cmtm.mask_ratio = 0.4;
  cfg.scene.height = 8;
  cfg.scene.width = 8;
  cfg.scene.frames = 2;
  cfg.scene.shape_size = 1.5;
  cfg.scene.shape_vx = 0.5;
  cfg.scene.shape_vy = 0.25;
  cfg.scene.distractor = false;
  cfg.train_sequences = 1;
  cfg.holdout_sequences = 0;
  cfg.steps = 0;
  return cfg;
}

GradcheckReport gradcheck(const RunConfig& cfg, const GradcheckOptions& opts) {
  cfg.validate();
  if (cfg.scene.height > 8 || cfg.scene.width > 8) {
    throw ConfigError("gradcheck needs a tiny scene (at most 8x8), got " +
                      std::to_string(cfg.scene.height) + "x" + std::to_string(cfg.scene.width));
  }

  Rng init_rng(derive_seed(cfg.seed, "params"));
  SegModel model = init_seg_model<float>(cfg.model, init_rng);
  const GeneratedSequence seq = generate_sequence(cfg.scene, derive_seed(cfg.seed, "sequence", 0));
  const VideoSample& sample = seq.samples.front();

  // Train-mode forward so masking participates; the mask plans are replayed
  // exactly in every numeric evaluation by reseeding the same rng.
  const std::uint64_t forward_seed = derive_seed(cfg.seed, "gradcheck-forward");

  // Analytic float32 gradients.
  {
    Tape tape;
    Rng rng(forward_seed);
    Tensor logits =
        model_forward(tape, sample.frame, sample.flow_rgb, model, cfg.model, Mode::train, &rng);
    Tensor loss = segmentation_loss(tape, logits, sample.gt_mask);
    tape.backward(loss);
  }

  // Double-precision loss functional over a mutable double model.
  SegModelT<double> dmodel = model_cast<float, double>(model);
  const TensorT<double> dframe = tensor_cast<float, double>(sample.frame);
  const TensorT<double> dflow = tensor_cast<float, double>(sample.flow_rgb);
  auto eval_loss = [&]() {
    TapeT<double> tape;
    Rng rng(forward_seed);
    TensorT<double> logits =
        model_forward(tape, dframe, dflow, dmodel, cfg.model, Mode::train, &rng);
    TensorT<double> loss = segmentation_loss<double>(tape, logits, sample.gt_mask);
    return loss.scalar_value();
  };

  const auto named_f = model.named_tensors();
  auto named_d = dmodel.named_tensors();

  GradcheckReport report;
  for (std::size_t i = 0; i < named_f.size(); ++i) {
    const auto& [name, param] = named_f[i];
    std::vector<float> analytic(static_cast<std::size_t>(param.numel()), 0.0f);
    if (param.has_grad()) analytic = param.grad();
    if (opts.tamper_grad) opts.tamper_grad(name, analytic);

    TensorT<double>& dparam = named_d[i].second;
    double diff2 = 0.0, ref2 = 0.0;
    for (std::int64_t e = 0; e < dparam.numel(); ++e) {
      const double saved = dparam.at(e);
      dparam.at(e) = saved + opts.step;
      const double up = eval_loss();
      dparam.at(e) = saved - opts.step;
      const double down = eval_loss();
      dparam.at(e) = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double d = static_cast<double>(analytic[static_cast<std::size_t>(e)]) - numeric;
      diff2 += d * d;
      ref2 += numeric * numeric;
    }
    GradcheckGroup group;
    group.name = name;
    group.rel_err = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-10);
    report.max_rel_err = std::max(report.max_rel_err, group.rel_err);
    report.groups.push_back(std::move(group));
  }
  return report;
}

std::string format_gradcheck_report(const GradcheckReport& report) {
  std::ostringstream os;
  for (const auto& g : report.groups) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), g.rel_err,
                                   std::chars_format::scientific, 3);
    os << "group=" << g.name << " rel_err=" << std::string(buf, res.ptr) << "\n";
  }
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), report.max_rel_err, std::chars_format::scientific, 3);
  os << "max_rel_err=" << std::string(buf, res.ptr) << "\n";
  return os.str();
}

}  // namespace cmtm

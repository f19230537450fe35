#include "cmtm/trainer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "cmtm/rng.hpp"

namespace cmtm {

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;  // parameter untouched by this step's graph
    const auto& g = p.grad();
    for (std::size_t e = 0; e < g.size(); ++e) {
      const double grad = static_cast<double>(g[e]);
      m_[i][e] = beta1_ * m_[i][e] + (1.0 - beta1_) * grad;
      v_[i][e] = beta2_ * v_[i][e] + (1.0 - beta2_) * grad * grad;
      const double mhat = m_[i][e] / bc1;
      const double vhat = v_[i][e] / bc2;
      p.at(static_cast<std::int64_t>(e)) -=
          static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

std::vector<std::vector<VideoSample>> make_training_data(const RunConfig& cfg) {
  std::vector<std::vector<VideoSample>> out;
  for (std::int64_t i = 0; i < cfg.train_sequences; ++i) {
    out.push_back(
        generate_sequence(cfg.scene, derive_seed(cfg.seed, "sequence", static_cast<std::uint64_t>(i)))
            .samples);
  }
  return out;
}

std::vector<std::vector<VideoSample>> make_holdout_data(const RunConfig& cfg) {
  std::vector<std::vector<VideoSample>> out;
  for (std::int64_t i = 0; i < cfg.holdout_sequences; ++i) {
    out.push_back(
        generate_sequence(cfg.scene, derive_seed(cfg.seed, "holdout", static_cast<std::uint64_t>(i)))
            .samples);
  }
  return out;
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();

  Rng init_rng(derive_seed(cfg.seed, "params"));
  SegModel model = init_seg_model<float>(cfg.model, init_rng);

  const auto data = make_training_data(cfg);
  std::vector<const VideoSample*> pool;
  for (const auto& seq : data) {
    for (const auto& s : seq) pool.push_back(&s);
  }

  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_tensors()) params.push_back(t);
  Adam adam(params, cfg.lr);

  Rng train_rng(derive_seed(cfg.seed, "train"));
  TrainResult result;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    try {
      Tape tape;
      Tensor batch_loss;
      for (std::int64_t b = 0; b < cfg.batch; ++b) {
        const VideoSample& sample = *pool[train_rng.index(pool.size())];
        Tensor logits =
            model_forward(tape, sample.frame, sample.flow_rgb, model, cfg.model, Mode::train,
                          &train_rng);
        Tensor loss = segmentation_loss(tape, logits, sample.gt_mask);
        batch_loss = b == 0 ? loss : ops::add(tape, batch_loss, loss);
      }
      if (cfg.batch > 1) {
        batch_loss = ops::scale(tape, batch_loss, 1.0f / static_cast<float>(cfg.batch));
      }
      const double loss_value = static_cast<double>(batch_loss.scalar_value());
      if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
      result.loss_log.push_back(loss_value);
      if (opts.log) (*opts.log) << "step=" << step << " loss=" << fmt_g(loss_value) << "\n";

      adam.zero_grad();
      tape.backward(batch_loss);
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }
  }

  result.checkpoint = checkpoint_from_model(model, cfg.model);
  return result;
}

MetricReport evaluate_model(const SegModel& model, const SegConfig& cfg,
                            const std::vector<std::vector<VideoSample>>& data, int tol_px) {
  std::vector<std::pair<double, double>> per_frame;
  for (const auto& seq : data) {
    for (const auto& sample : seq) {
      Tape tape;
      Tensor logits =
          model_forward(tape, sample.frame, sample.flow_rgb, model, cfg, Mode::eval, nullptr);
      BinaryMask pred = BinaryMask::zeros(logits.dim(0), logits.dim(1));
      for (std::int64_t i = 0; i < logits.numel(); ++i) {
        pred.data[static_cast<std::size_t>(i)] = logits.at(i) > 0.0f ? 1 : 0;
      }
      per_frame.emplace_back(region_similarity(pred, sample.gt_mask),
                             boundary_accuracy(pred, sample.gt_mask, tol_px));
    }
  }
  return aggregate(per_frame);
}

MetricReport evaluate_checkpoint(const Checkpoint& ckpt,
                                 const std::vector<std::vector<VideoSample>>& data, int tol_px) {
  SegConfig cfg;
  const SegModel model = model_from_checkpoint(ckpt, &cfg);
  return evaluate_model(model, cfg, data, tol_px);
}

namespace {

constexpr const char* kArchTensor = "config.arch";

}  // namespace

Checkpoint checkpoint_from_model(const SegModel& model, const SegConfig& cfg) {
  Checkpoint ckpt;
  Tensor arch = Tensor::from({8}, {static_cast<float>(cfg.c1), static_cast<float>(cfg.c2),
                                   static_cast<float>(cfg.c3),
                                   static_cast<float>(cfg.decoder_channels),
                                   static_cast<float>(cfg.cmtm.blocks),
                                   static_cast<float>(cfg.cmtm.heads),
                                   cfg.cmtm.use_positional ? 1.0f : 0.0f,
                                   cfg.cmtm.use_modality ? 1.0f : 0.0f});
  ckpt.tensors.emplace_back(kArchTensor, arch);
  for (const auto& [name, t] : model.named_tensors()) {
    ckpt.tensors.emplace_back(name, t.clone());
  }
  return ckpt;
}

SegModel model_from_checkpoint(const Checkpoint& ckpt, SegConfig* cfg_out) {
  const Tensor* arch = ckpt.find(kArchTensor);
  if (arch == nullptr || arch->numel() != 8) {
    throw IoError(IoError::Kind::malformed, "checkpoint misses the '" + std::string(kArchTensor) +
                                                "' tensor");
  }
  SegConfig cfg;
  cfg.c1 = static_cast<std::int64_t>(arch->at(0));
  cfg.c2 = static_cast<std::int64_t>(arch->at(1));
  cfg.c3 = static_cast<std::int64_t>(arch->at(2));
  cfg.decoder_channels = static_cast<std::int64_t>(arch->at(3));
  cfg.cmtm.channels = cfg.c3;
  cfg.cmtm.blocks = static_cast<std::int64_t>(arch->at(4));
  cfg.cmtm.heads = static_cast<std::int64_t>(arch->at(5));
  cfg.cmtm.use_positional = arch->at(6) != 0.0f;
  cfg.cmtm.use_modality = arch->at(7) != 0.0f;
  cfg.validate();

  Rng dummy(0);
  SegModel model = init_seg_model<float>(cfg, dummy);
  std::string missing, mismatched;
  for (auto& [name, t] : model.named_tensors()) {
    const Tensor* stored = ckpt.find(name);
    if (stored == nullptr) {
      missing += missing.empty() ? name : ", " + name;
      continue;
    }
    if (stored->shape() != t.shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + name + " (file " +
                    shape_str(stored->shape()) + " vs model " + shape_str(t.shape()) + ")";
      continue;
    }
    t.values() = stored->values();
  }
  if (!missing.empty() || !mismatched.empty()) {
    std::ostringstream os;
    os << "checkpoint incompatible with its architecture header;";
    if (!missing.empty()) os << " missing: " << missing << ";";
    if (!mismatched.empty()) os << " shape mismatch: " << mismatched;
    throw IoError(IoError::Kind::malformed, os.str());
  }
  if (cfg_out != nullptr) *cfg_out = cfg;
  return model;
}

std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os << "j_mean=" << fmt_g(report.j_mean) << "\n";
  os << "f_mean=" << fmt_g(report.f_mean) << "\n";
  os << "g_mean=" << fmt_g(report.g_mean) << "\n";
  for (std::size_t i = 0; i < report.per_frame.size(); ++i) {
    os << "frame=" << i << " j=" << fmt_g(report.per_frame[i].first)
       << " f=" << fmt_g(report.per_frame[i].second) << "\n";
  }
  return os.str();
}

}  // namespace cmtm

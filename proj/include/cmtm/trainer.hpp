#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cmtm/checkpoint.hpp"
#include "cmtm/config.hpp"
#include "cmtm/metrics.hpp"
#include "cmtm/segnet.hpp"
#include "cmtm/synthvid.hpp"

namespace cmtm {

// Adam over a fixed parameter list. State arrays follow parameter order,
// so identical parameter ordering gives identical updates.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void zero_grad();
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_log;  // one entry per step
};

struct TrainOptions {
  std::ostream* log = nullptr;  // receives "step=K loss=V" lines when set
};

// Deterministic end-to-end training on generated data: fresh mask plans
// every iteration, Adam updates, per-step loss log. A non-finite loss
// aborts with a NumericError naming the step.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

// The sequences train() trains on / holds out, reproducible from the seed.
std::vector<std::vector<VideoSample>> make_training_data(const RunConfig& cfg);
std::vector<std::vector<VideoSample>> make_holdout_data(const RunConfig& cfg);

// Eval-mode forward on every frame, logits thresholded at zero, J/F/G.
MetricReport evaluate_model(const SegModel& model, const SegConfig& cfg,
                            const std::vector<std::vector<VideoSample>>& data, int tol_px);
MetricReport evaluate_checkpoint(const Checkpoint& ckpt,
                                 const std::vector<std::vector<VideoSample>>& data, int tol_px);

// Checkpoints carry the parameter tensors plus a small "config.arch"
// tensor, so a model can be rebuilt from the file alone.
Checkpoint checkpoint_from_model(const SegModel& model, const SegConfig& cfg);
SegModel model_from_checkpoint(const Checkpoint& ckpt, SegConfig* cfg_out = nullptr);

std::string format_report(const MetricReport& report);

}  // namespace cmtm

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmtm/metrics.hpp"
#include "cmtm/tensor.hpp"

// Synthetic video segmentation data: a textured shape translating over a
// textured background, with analytically exact optical flow and exact
// rasterized ground truth. Optional distractor patches look like the
// foreground in RGB but move with the background, so appearance alone
// cannot separate them.

namespace cmtm {

enum class ShapeKind { disk, rectangle };

struct SceneConfig {
  std::int64_t height = 32;
  std::int64_t width = 32;
  ShapeKind kind = ShapeKind::disk;
  double shape_vx = 0.9;   // pixels per frame, positive right
  double shape_vy = 0.45;  // pixels per frame, positive down
  double bg_vx = 0.0;
  double bg_vy = 0.0;
  double shape_size = 6.0;  // disk radius, or rectangle half-width
  std::int64_t frames = 8;
  bool distractor = true;
  std::uint64_t texture_seed = 0;
  double flow_max_mag = 4.0;  // normalization for the RGB flow rendering

  void validate() const;
};

struct VideoSample {
  Tensor frame;       // [H x W x 3] in [0, 1]
  Tensor flow_field;  // [H x W x 2], (u right, v down), pixels per frame
  Tensor flow_rgb;    // [H x W x 3]
  BinaryMask gt_mask;
};

struct GeneratedSequence {
  std::vector<VideoSample> samples;
  std::vector<BinaryMask> distractor_masks;  // where the distractor was drawn
  std::vector<std::pair<double, double>> shape_centers;  // realized (cx, cy) per frame
  bool has_distractor = false;
};

GeneratedSequence generate_sequence(const SceneConfig& cfg, std::uint64_t seed);

// (u, v) -> (u/(2*max_mag)+0.5, v/(2*max_mag)+0.5, |flow|/max_mag), each
// channel clamped to [0, 1].
Tensor flow_to_rgb(const Tensor& flow_field, float max_mag);

// One directory per sequence: a manifest plus per-frame binary tensor
// containers in the checkpoint encoding.
void dump_sequence(const GeneratedSequence& seq, const std::string& dir);
std::vector<VideoSample> load_sequence(const std::string& dir);

// DIR/seq_000, DIR/seq_001, ... with per-sequence seeds derived from `seed`.
void dump_corpus(const SceneConfig& cfg, std::uint64_t seed, std::int64_t sequences,
                 const std::string& dir);
std::vector<std::vector<VideoSample>> load_corpus(const std::string& dir);

}  // namespace cmtm

#include "cmtm/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmtm/checkpoint.hpp"
#include "cmtm/rng.hpp"

namespace cmtm {

namespace fs = std::filesystem;

namespace {

// Smooth procedural texture: a small bank of plane waves. Sampling it at a
// translated coordinate translates the pattern, which keeps rendered
// motion consistent with the analytic flow.
struct Texture {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves[3];

  static Texture make(Rng& rng, double amplitude) {
    Texture t;
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) {
        Texture::Wave w;
        w.fx = (rng.uniform() * 2.0 - 1.0) * 0.9;
        w.fy = (rng.uniform() * 2.0 - 1.0) * 0.9;
        w.phase = rng.uniform() * 6.283185307179586;
        w.amp = amplitude * (0.4 + 0.6 * rng.uniform());
        t.waves[c].push_back(w);
      }
    }
    return t;
  }

  double sample(int channel, double x, double y) const {
    double v = 0.0;
    for (const auto& w : waves[channel]) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
    return v;
  }
};

struct ShapeGeom {
  ShapeKind kind;
  double half_x, half_y;  // rectangle half-extents; half_x is the disk radius

  bool contains(double cx, double cy, std::int64_t px, std::int64_t py) const {
    const double dx = static_cast<double>(px) + 0.5 - cx;
    const double dy = static_cast<double>(py) + 0.5 - cy;
    if (kind == ShapeKind::disk) return dx * dx + dy * dy <= half_x * half_x;
    return std::abs(dx) <= half_x && std::abs(dy) <= half_y;
  }
};

// Scanline rasterization: per row, an explicit pixel-center span.
BinaryMask rasterize(const ShapeGeom& g, double cx, double cy, std::int64_t h, std::int64_t w) {
  BinaryMask mask = BinaryMask::zeros(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - cy;
    double half = -1.0;
    if (g.kind == ShapeKind::disk) {
      const double r = g.half_x;
      if (std::abs(dy) > r) continue;
      half = std::sqrt(r * r - dy * dy);
    } else {
      if (std::abs(dy) > g.half_y) continue;
      half = g.half_x;
    }
    const auto x0 = static_cast<std::int64_t>(std::ceil(cx - half - 0.5));
    const auto x1 = static_cast<std::int64_t>(std::floor(cx + half - 0.5));
    for (std::int64_t x = std::max<std::int64_t>(0, x0); x <= std::min(w - 1, x1); ++x) {
      mask.at(y, x) = 1;
    }
  }
  return mask;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

void SceneConfig::validate() const {
  if (height < 8 || width < 8) {
    throw ConfigError("scene size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is degenerate (minimum 8x8)");
  }
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (shape_size < 1.0) throw ConfigError("shape_size must be >= 1");
  if (flow_max_mag <= 0.0) throw ConfigError("flow_max_mag must be positive");
  const double travel_x = std::abs(shape_vx) * static_cast<double>(frames - 1);
  const double travel_y = std::abs(shape_vy) * static_cast<double>(frames - 1);
  if (2.0 * shape_size + travel_x + 2.0 >= static_cast<double>(width) ||
      2.0 * shape_size + travel_y + 2.0 >= static_cast<double>(height)) {
    throw ConfigError("shape velocity/size leave no in-frame trajectory for " +
                      std::to_string(frames) + " frames");
  }
}

GeneratedSequence generate_sequence(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed ^ cfg.texture_seed * 0x9e3779b97f4a7c15ULL, "scene"));

  const std::int64_t h = cfg.height, w = cfg.width;
  const ShapeGeom shape{cfg.kind, cfg.shape_size,
                        cfg.kind == ShapeKind::disk ? cfg.shape_size : cfg.shape_size * 0.75};

  // Base colors: muted background, bright foreground.
  double bg_base[3], fg_base[3];
  for (int c = 0; c < 3; ++c) bg_base[c] = 0.2 + 0.25 * rng.uniform();
  for (int c = 0; c < 3; ++c) fg_base[c] = 0.65 + 0.3 * rng.uniform();
  const Texture bg_tex = Texture::make(rng, 0.06);
  const Texture fg_tex = Texture::make(rng, 0.08);

  // Start position such that the whole trajectory stays in frame.
  const double travel_x = cfg.shape_vx * static_cast<double>(cfg.frames - 1);
  const double travel_y = cfg.shape_vy * static_cast<double>(cfg.frames - 1);
  const double margin_x = shape.half_x + 1.0;
  const double margin_y = shape.half_y + 1.0;
  const double lo_x = margin_x + std::max(0.0, -travel_x);
  const double hi_x = static_cast<double>(w) - margin_x - std::max(0.0, travel_x);
  const double lo_y = margin_y + std::max(0.0, -travel_y);
  const double hi_y = static_cast<double>(h) - margin_y - std::max(0.0, travel_y);
  const double cx0 = lo_x + (hi_x - lo_x) * rng.uniform();
  const double cy0 = lo_y + (hi_y - lo_y) * rng.uniform();

  // Distractor: a foreground-colored patch that rides with the background.
  const ShapeGeom dgeom{ShapeKind::rectangle, cfg.shape_size * 0.5, cfg.shape_size * 0.4};
  double dx0 = 0.0, dy0 = 0.0;
  bool distractor_placed = false;
  if (cfg.distractor) {
    for (int attempt = 0; attempt < 256 && !distractor_placed; ++attempt) {
      const double px = dgeom.half_x + 1.0 +
                        (static_cast<double>(w) - 2.0 * (dgeom.half_x + 1.0)) * rng.uniform();
      const double py = dgeom.half_y + 1.0 +
                        (static_cast<double>(h) - 2.0 * (dgeom.half_y + 1.0)) * rng.uniform();
      bool clear = true;
      for (std::int64_t t = 0; t < cfg.frames && clear; ++t) {
        const double scx = cx0 + cfg.shape_vx * static_cast<double>(t);
        const double scy = cy0 + cfg.shape_vy * static_cast<double>(t);
        const double ddx = px + cfg.bg_vx * static_cast<double>(t);
        const double ddy = py + cfg.bg_vy * static_cast<double>(t);
        if (std::abs(scx - ddx) < shape.half_x + dgeom.half_x + 1.0 &&
            std::abs(scy - ddy) < shape.half_y + dgeom.half_y + 1.0) {
          clear = false;
        }
      }
      if (clear) {
        dx0 = px;
        dy0 = py;
        distractor_placed = true;
      }
    }
  }

  GeneratedSequence seq;
  seq.has_distractor = distractor_placed;
  for (std::int64_t t = 0; t < cfg.frames; ++t) {
    const double cx = cx0 + cfg.shape_vx * static_cast<double>(t);
    const double cy = cy0 + cfg.shape_vy * static_cast<double>(t);
    const double bg_off_x = cfg.bg_vx * static_cast<double>(t);
    const double bg_off_y = cfg.bg_vy * static_cast<double>(t);

    VideoSample sample;
    sample.gt_mask = rasterize(shape, cx, cy, h, w);
    BinaryMask dmask = BinaryMask::zeros(h, w);
    if (distractor_placed) {
      dmask = rasterize(dgeom, dx0 + bg_off_x, dy0 + bg_off_y, h, w);
      // The moving shape always wins overlapping pixels.
      for (std::size_t i = 0; i < dmask.data.size(); ++i) {
        if (sample.gt_mask.data[i]) dmask.data[i] = 0;
      }
    }

    sample.frame = Tensor::zeros({h, w, 3});
    sample.flow_field = Tensor::zeros({h, w, 2});
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const bool fg = sample.gt_mask.at(y, x) != 0;
        const bool dd = dmask.at(y, x) != 0;
        for (int c = 0; c < 3; ++c) {
          double v;
          if (fg) {
            v = fg_base[c] + fg_tex.sample(c, static_cast<double>(x) - cx,
                                           static_cast<double>(y) - cy);
          } else if (dd) {
            v = fg_base[c] + fg_tex.sample(c, static_cast<double>(x) - dx0 - bg_off_x,
                                           static_cast<double>(y) - dy0 - bg_off_y);
          } else {
            v = bg_base[c] + bg_tex.sample(c, static_cast<double>(x) - bg_off_x,
                                           static_cast<double>(y) - bg_off_y);
          }
          sample.frame.at(y, x, c) = clamp01(v);
        }
        sample.flow_field.at(y, x, 0) = static_cast<float>(fg ? cfg.shape_vx : cfg.bg_vx);
        sample.flow_field.at(y, x, 1) = static_cast<float>(fg ? cfg.shape_vy : cfg.bg_vy);
      }
    }
    sample.flow_rgb = flow_to_rgb(sample.flow_field, static_cast<float>(cfg.flow_max_mag));
    seq.distractor_masks.push_back(std::move(dmask));
    seq.shape_centers.emplace_back(cx, cy);
    seq.samples.push_back(std::move(sample));
  }
  return seq;
}

Tensor flow_to_rgb(const Tensor& flow_field, float max_mag) {
  if (flow_field.rank() != 3 || flow_field.dim(2) != 2) {
    throw DimError("flow_to_rgb expects [HxWx2], got " + shape_str(flow_field.shape()));
  }
  if (!(max_mag > 0.0f)) throw ConfigError("max_mag must be positive");
  const std::int64_t h = flow_field.dim(0), w = flow_field.dim(1);
  Tensor rgb = Tensor::zeros({h, w, 3});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double u = flow_field.at(y, x, 0);
      const double v = flow_field.at(y, x, 1);
      rgb.at(y, x, 0) = clamp01(u / (2.0 * max_mag) + 0.5);
      rgb.at(y, x, 1) = clamp01(v / (2.0 * max_mag) + 0.5);
      rgb.at(y, x, 2) = clamp01(std::sqrt(u * u + v * v) / max_mag);
    }
  }
  return rgb;
}

namespace {

Tensor mask_to_tensor(const BinaryMask& m) {
  Tensor t = Tensor::zeros({m.h, m.w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = m.data[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
  return t;
}

BinaryMask tensor_to_mask(const Tensor& t) {
  if (t.rank() != 2) throw IoError(IoError::Kind::malformed, "gt_mask tensor is not rank-2");
  BinaryMask m = BinaryMask::zeros(t.dim(0), t.dim(1));
  for (std::int64_t i = 0; i < t.numel(); ++i) m.data[static_cast<std::size_t>(i)] = t.at(i) > 0.5f ? 1 : 0;
  return m;
}

std::string frame_file(std::int64_t index) {
  std::ostringstream os;
  os << "frame_";
  os.width(3);
  os.fill('0');
  os << index << ".bin";
  return os.str();
}

}  // namespace

void dump_sequence(const GeneratedSequence& seq, const std::string& dir) {
  if (seq.samples.empty()) throw UsageError("dump_sequence: empty sequence");
  fs::create_directories(dir);
  const auto& first = seq.samples.front();
  const std::int64_t h = first.frame.dim(0), w = first.frame.dim(1);

  std::ostringstream manifest;
  manifest << "frames=" << seq.samples.size() << "\n";
  manifest << "height=" << h << "\n";
  manifest << "width=" << w << "\n";
  manifest << "tensor frame float32 " << h << "x" << w << "x3\n";
  manifest << "tensor flow float32 " << h << "x" << w << "x2\n";
  manifest << "tensor flow_rgb float32 " << h << "x" << w << "x3\n";
  manifest << "tensor gt_mask float32 " << h << "x" << w << "\n";

  for (std::size_t i = 0; i < seq.samples.size(); ++i) {
    const auto& s = seq.samples[i];
    Checkpoint frame_ckpt;
    frame_ckpt.tensors.emplace_back("frame", s.frame);
    frame_ckpt.tensors.emplace_back("flow", s.flow_field);
    frame_ckpt.tensors.emplace_back("flow_rgb", s.flow_rgb);
    frame_ckpt.tensors.emplace_back("gt_mask", mask_to_tensor(s.gt_mask));
    const std::string name = frame_file(static_cast<std::int64_t>(i));
    save_checkpoint(frame_ckpt, (fs::path(dir) / name).string());
    manifest << "file " << name << "\n";
  }

  std::ofstream mf(fs::path(dir) / "manifest.txt");
  if (!mf) throw IoError(IoError::Kind::io, "cannot write manifest in '" + dir + "'");
  mf << manifest.str();
}

std::vector<VideoSample> load_sequence(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  if (!mf) throw IoError(IoError::Kind::io, "cannot open manifest in '" + dir + "'");
  std::vector<std::string> files;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.rfind("file ", 0) == 0) files.push_back(line.substr(5));
  }
  if (files.empty()) throw IoError(IoError::Kind::malformed, "manifest lists no frames");

  std::vector<VideoSample> samples;
  for (const auto& f : files) {
    const Checkpoint ckpt = load_checkpoint((fs::path(dir) / f).string());
    const Tensor* frame = ckpt.find("frame");
    const Tensor* flow = ckpt.find("flow");
    const Tensor* flow_rgb = ckpt.find("flow_rgb");
    const Tensor* gt = ckpt.find("gt_mask");
    if (!frame || !flow || !flow_rgb || !gt) {
      throw IoError(IoError::Kind::malformed, "frame file '" + f + "' misses a tensor");
    }
    VideoSample s;
    s.frame = *frame;
    s.flow_field = *flow;
    s.flow_rgb = *flow_rgb;
    s.gt_mask = tensor_to_mask(*gt);
    samples.push_back(std::move(s));
  }
  return samples;
}

void dump_corpus(const SceneConfig& cfg, std::uint64_t seed, std::int64_t sequences,
                 const std::string& dir) {
  if (sequences < 1) throw UsageError("dump_corpus: need at least one sequence");
  fs::create_directories(dir);
  for (std::int64_t i = 0; i < sequences; ++i) {
    const GeneratedSequence seq =
        generate_sequence(cfg, derive_seed(seed, "sequence", static_cast<std::uint64_t>(i)));
    std::ostringstream sub;
    sub << "seq_";
    sub.width(3);
    sub.fill('0');
    sub << i;
    dump_sequence(seq, (fs::path(dir) / sub.str()).string());
  }
}

std::vector<std::vector<VideoSample>> load_corpus(const std::string& dir) {
  std::vector<fs::path> seq_dirs;
  if (!fs::is_directory(dir)) {
    throw IoError(IoError::Kind::io, "'" + dir + "' is not a directory");
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("seq_", 0) == 0) {
      seq_dirs.push_back(entry.path());
    }
  }
  std::sort(seq_dirs.begin(), seq_dirs.end());
  if (seq_dirs.empty()) {
    throw IoError(IoError::Kind::malformed, "no seq_* directories under '" + dir + "'");
  }
  std::vector<std::vector<VideoSample>> out;
  for (const auto& p : seq_dirs) out.push_back(load_sequence(p.string()));
  return out;
}

}  // namespace cmtm

#include "cmtm/metrics.hpp"

#include <algorithm>
#include <string>

namespace cmtm {

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.h != b.h || a.w != b.w) {
    throw DimError(std::string(op) + ": mask shapes [" + std::to_string(a.h) + "x" +
                   std::to_string(a.w) + "] and [" + std::to_string(b.h) + "x" +
                   std::to_string(b.w) + "] differ");
  }
}

}  // namespace

double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "region_similarity");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // both empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryMask& mask) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  auto bg = [&](std::int64_t y, std::int64_t x) {
    if (y < 0 || y >= mask.h || x < 0 || x >= mask.w) return true;
    return mask.at(y, x) == 0;
  };
  for (std::int64_t y = 0; y < mask.h; ++y) {
    for (std::int64_t x = 0; x < mask.w; ++x) {
      if (mask.at(y, x) == 0) continue;
      if (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)) out.emplace_back(y, x);
    }
  }
  return out;
}

double boundary_accuracy(const BinaryMask& pred, const BinaryMask& gt, int tol_px) {
  require_same_shape(pred, gt, "boundary_accuracy");
  if (tol_px < 0) throw ConfigError("boundary tolerance must be nonnegative");
  const bool pred_empty = pred.area() == 0;
  const bool gt_empty = gt.area() == 0;
  if (pred_empty && gt_empty) return 1.0;
  if (pred_empty || gt_empty) return 0.0;

  const auto pb = boundary_pixels(pred);
  const auto gb = boundary_pixels(gt);

  // Chebyshev dilation of a boundary set: mark every cell within the
  // (2*tol+1)^2 square around each boundary pixel.
  auto dilate = [&](const std::vector<std::pair<std::int64_t, std::int64_t>>& pts) {
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(pred.h * pred.w), 0);
    for (const auto& [y, x] : pts) {
      for (std::int64_t dy = -tol_px; dy <= tol_px; ++dy) {
        for (std::int64_t dx = -tol_px; dx <= tol_px; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= pred.h || xx < 0 || xx >= pred.w) continue;
          grid[static_cast<std::size_t>(yy * pred.w + xx)] = 1;
        }
      }
    }
    return grid;
  };
  const auto gt_zone = dilate(gb);
  const auto pred_zone = dilate(pb);

  std::int64_t matched_pred = 0;
  for (const auto& [y, x] : pb) {
    matched_pred += gt_zone[static_cast<std::size_t>(y * pred.w + x)] ? 1 : 0;
  }
  std::int64_t matched_gt = 0;
  for (const auto& [y, x] : gb) {
    matched_gt += pred_zone[static_cast<std::size_t>(y * pred.w + x)] ? 1 : 0;
  }

  const double precision = static_cast<double>(matched_pred) / static_cast<double>(pb.size());
  const double recall = static_cast<double>(matched_gt) / static_cast<double>(gb.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport aggregate(const std::vector<std::pair<double, double>>& per_frame) {
  if (per_frame.empty()) throw UsageError("aggregate: empty per-frame metric list");
  MetricReport report;
  report.per_frame = per_frame;
  for (const auto& [j, f] : per_frame) {
    report.j_mean += j;
    report.f_mean += f;
  }
  report.j_mean /= static_cast<double>(per_frame.size());
  report.f_mean /= static_cast<double>(per_frame.size());
  report.g_mean = (report.j_mean + report.f_mean) / 2.0;
  return report;
}

}  // namespace cmtm

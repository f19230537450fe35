#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmtm/errors.hpp"

// Segmentation quality metrics: region similarity (IoU), boundary accuracy
// (boundary F-measure with a Chebyshev pixel tolerance), and their mean.

namespace cmtm {

// Row-major binary mask.
struct BinaryMask {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> data;

  static BinaryMask zeros(std::int64_t h, std::int64_t w) {
    return BinaryMask{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
  }
  std::uint8_t at(std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(y * w + x)];
  }
  std::uint8_t& at(std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(y * w + x)];
  }
  std::int64_t area() const {
    std::int64_t n = 0;
    for (const auto v : data) n += v ? 1 : 0;
    return n;
  }
};

struct MetricReport {
  double j_mean = 0.0;
  double f_mean = 0.0;
  double g_mean = 0.0;
  std::vector<std::pair<double, double>> per_frame;  // (j, f)
};

// Intersection-over-union. Two empty masks score 1.0.
double region_similarity(const BinaryMask& pred, const BinaryMask& gt);

// F-measure of boundary precision/recall. A boundary pixel (mask pixel
// 4-adjacent to background, with out-of-bounds counting as background)
// matches when the other mask has a boundary pixel within Chebyshev
// distance tol_px. Two empty masks score 1.0.
double boundary_accuracy(const BinaryMask& pred, const BinaryMask& gt, int tol_px);

// Boundary pixels of a mask; exposed for the metric oracles.
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryMask& mask);

MetricReport aggregate(const std::vector<std::pair<double, double>>& per_frame);

}  // namespace cmtm

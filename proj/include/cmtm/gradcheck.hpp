#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmtm/config.hpp"

namespace cmtm {

struct GradcheckGroup {
  std::string name;
  double rel_err = 0.0;  // L2 relative error, analytic vs central differences
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double max_rel_err = 0.0;

  bool passed(double tol = 1e-3) const { return max_rel_err < tol; }
};

struct GradcheckOptions {
  double step = 1e-4;
  // Test seam: mutate a named analytic gradient before comparison, to
  // verify that a wrong gradient is actually reported.
  std::function<void(const std::string&, std::vector<float>&)> tamper_grad;
};

// Compares every parameter gradient of a full forward+loss pass against
// float64 central differences of the same network instantiated at double
// precision. Requires a tiny configuration (inputs at most 8x8).
GradcheckReport gradcheck(const RunConfig& cfg, const GradcheckOptions& opts = {});

// Default tiny configuration for gradient checking.
RunConfig gradcheck_config();

std::string format_gradcheck_report(const GradcheckReport& report);

}  // namespace cmtm

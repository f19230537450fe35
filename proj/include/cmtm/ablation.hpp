#pragma once

#include <string>
#include <vector>

#include "cmtm/config.hpp"
#include "cmtm/metrics.hpp"

namespace cmtm {

// One trained/evaluated cell of an ablation grid. Table 3 sweeps the
// stream/masking toggles (versions I..VI); table 4 sweeps the masking
// ratio over {0.0, 0.2, 0.4, 0.6, 0.8}. Cells share the data seed and
// differ only in the ablated knob; a failed cell is recorded and the grid
// continues.
struct AblationCell {
  std::string version;
  bool app = false, mo = false, mask = false;  // table 3 columns
  double ratio = 0.0;                          // table 4 column
  bool ok = false;
  std::string error;
  MetricReport report;        // holdout metrics
  double final_loss = 0.0;
};

struct AblationResult {
  int table = 0;
  std::vector<AblationCell> cells;
};

AblationResult run_ablation(const RunConfig& base, int table);

std::string ablation_csv(const AblationResult& result);

}  // namespace cmtm

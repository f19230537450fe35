#include "cmtm/ablation.hpp"

#include <charconv>
#include <sstream>

#include "cmtm/trainer.hpp"

namespace cmtm {

namespace {

std::string fmt_g(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void run_cell(const RunConfig& cfg, AblationCell& cell) {
  try {
    const TrainResult trained = train(cfg);
    const auto holdout = make_holdout_data(cfg);
    cell.report = evaluate_checkpoint(trained.checkpoint, holdout, cfg.tol_px);
    cell.final_loss = trained.loss_log.empty() ? 0.0 : trained.loss_log.back();
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
}

}  // namespace

AblationResult run_ablation(const RunConfig& base, int table) {
  if (table != 3 && table != 4) {
    throw UsageError("ablation table must be 3 or 4, got " + std::to_string(table));
  }
  AblationResult result;
  result.table = table;

  if (table == 3) {
    // Checkmark pattern: (App., Mo., Mask) per version. The stream columns
    // select which stream masking targets; the Mask column gates masking,
    // so a stream is masked only when its column and Mask are both set.
    // Attention always runs over both streams' tokens.
    const struct {
      const char* version;
      bool app, mo, mask;
    } variants[] = {
        {"I", true, false, false},  {"II", true, false, true}, {"III", false, true, false},
        {"IV", false, true, true},  {"V", true, true, false},  {"VI", true, true, true},
    };
    for (const auto& v : variants) {
      AblationCell cell;
      cell.version = v.version;
      cell.app = v.app;
      cell.mo = v.mo;
      cell.mask = v.mask;
      cell.ratio = base.model.cmtm.mask_ratio;
      RunConfig cfg = base;
      cfg.model.cmtm.apply_to_app = v.app && v.mask;
      cfg.model.cmtm.apply_to_mo = v.mo && v.mask;
      run_cell(cfg, cell);
      result.cells.push_back(std::move(cell));
    }
  } else {
    const double ratios[] = {0.0, 0.2, 0.4, 0.6, 0.8};
    const char* versions[] = {"I", "II", "III", "IV", "V"};
    for (int i = 0; i < 5; ++i) {
      AblationCell cell;
      cell.version = versions[i];
      cell.app = true;
      cell.mo = true;
      cell.mask = ratios[i] > 0.0;
      cell.ratio = ratios[i];
      RunConfig cfg = base;
      cfg.model.cmtm.apply_to_app = true;
      cfg.model.cmtm.apply_to_mo = true;
      cfg.model.cmtm.mask_ratio = ratios[i];
      run_cell(cfg, cell);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

std::string ablation_csv(const AblationResult& result) {
  std::ostringstream os;
  if (result.table == 3) {
    os << "version,app,mo,mask,j_mean,f_mean,g_mean,final_loss,status\n";
    for (const auto& c : result.cells) {
      os << c.version << ',' << (c.app ? 1 : 0) << ',' << (c.mo ? 1 : 0) << ','
         << (c.mask ? 1 : 0) << ',';
      if (c.ok) {
        os << fmt_g(c.report.j_mean) << ',' << fmt_g(c.report.f_mean) << ','
           << fmt_g(c.report.g_mean) << ',' << fmt_g(c.final_loss) << ",ok\n";
      } else {
        os << ",,,,failed\n";
      }
    }
  } else {
    os << "version,ratio,j_mean,f_mean,g_mean,final_loss,status\n";
    for (const auto& c : result.cells) {
      os << c.version << ',' << fmt_g(c.ratio) << ',';
      if (c.ok) {
        os << fmt_g(c.report.j_mean) << ',' << fmt_g(c.report.f_mean) << ','
           << fmt_g(c.report.g_mean) << ',' << fmt_g(c.final_loss) << ",ok\n";
      } else {
        os << ",,,,failed\n";
      }
    }
  }
  return os.str();
}

}  // namespace cmtm

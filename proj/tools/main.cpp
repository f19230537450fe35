// Experiment CLI: synthetic data generation, training, evaluation, the
// two ablation grids, and the full-network gradient check.
//
// Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O or
// file-format error.

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "cmtm/ablation.hpp"
#include "cmtm/checkpoint.hpp"
#include "cmtm/config.hpp"
#include "cmtm/gradcheck.hpp"
#include "cmtm/synthvid.hpp"
#include "cmtm/trainer.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;
constexpr int kIo = 3;

cmtm::RunConfig config_from(const std::string& path) {
  if (path.empty()) return cmtm::RunConfig{};
  return cmtm::load_config_file(path);
}

int run_gen_data(const std::string& out, std::uint64_t seed, std::int64_t scenes,
                 const std::string& config_path) {
  cmtm::RunConfig cfg = config_from(config_path);
  cfg.scene.validate();
  cmtm::dump_corpus(cfg.scene, seed, scenes, out);
  std::cout << "wrote " << scenes << " sequences to " << out << "\n";
  return kOk;
}

int run_train(const std::string& config_path, const std::string& out) {
  const cmtm::RunConfig cfg = config_from(config_path);
  cmtm::TrainOptions opts;
  opts.log = &std::cout;
  const cmtm::TrainResult result = cmtm::train(cfg, opts);
  cmtm::save_checkpoint(result.checkpoint, out);
  std::cout << "checkpoint=" << out << "\n";
  return kOk;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path, int tol_px) {
  const cmtm::Checkpoint ckpt = cmtm::load_checkpoint(ckpt_path);
  const auto data = cmtm::load_corpus(data_dir);
  const cmtm::MetricReport report = cmtm::evaluate_checkpoint(ckpt, data, tol_px);
  const std::string text = cmtm::format_report(report);
  if (report_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(report_path);
    if (!out) throw cmtm::IoError(cmtm::IoError::Kind::io, "cannot write '" + report_path + "'");
    out << text;
    std::cout << "report=" << report_path << "\n";
  }
  return kOk;
}

int run_ablate(const std::string& config_path, int table, const std::string& out) {
  const cmtm::RunConfig cfg = config_from(config_path);
  const cmtm::AblationResult result = cmtm::run_ablation(cfg, table);
  const std::string csv = cmtm::ablation_csv(result);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream file(out);
    if (!file) throw cmtm::IoError(cmtm::IoError::Kind::io, "cannot write '" + out + "'");
    file << csv;
    std::cout << "table=" << table << " csv=" << out << "\n";
  }
  bool all_ok = true;
  for (const auto& c : result.cells) all_ok = all_ok && c.ok;
  return all_ok ? kOk : kNumeric;
}

int run_gradcheck(const std::string& config_path, double tol) {
  const cmtm::RunConfig cfg =
      config_path.empty() ? cmtm::gradcheck_config() : cmtm::load_config_file(config_path);
  const cmtm::GradcheckReport report = cmtm::gradcheck(cfg);
  std::cout << cmtm::format_gradcheck_report(report);
  if (!report.passed(tol)) {
    std::cerr << "gradient check failed (tolerance " << tol << ")\n";
    return kNumeric;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stream token-modulation segmentation testbed"};
  app.require_subcommand(1);

  std::string out_dir, config_path, ckpt_path, data_dir, report_path, csv_path;
  std::uint64_t seed = 1;
  std::int64_t scenes = 4;
  int table = 3;
  int tol_px = 1;
  double grad_tol = 1e-3;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "corpus seed");
  gen->add_option("--scenes", scenes, "number of sequences");
  gen->add_option("--config", config_path, "config file for scene settings");

  auto* tr = app.add_subcommand("train", "train on generated data");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--out", ckpt_path, "checkpoint output path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ev->add_option("--data", data_dir, "corpus directory")->required();
  ev->add_option("--report", report_path, "report output path");
  ev->add_option("--tol", tol_px, "boundary tolerance in pixels");

  auto* ab = app.add_subcommand("ablate", "run an ablation grid");
  ab->add_option("--config", config_path, "config file")->required();
  ab->add_option("--table", table, "grid to run (3 or 4)")->required()
      ->check(CLI::IsMember({3, 4}));
  ab->add_option("--out", csv_path, "CSV output path");

  auto* gc = app.add_subcommand("gradcheck", "full-network gradient check");
  gc->add_option("--config", config_path, "config file (default: builtin tiny config)");
  gc->add_option("--tol", grad_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(out_dir, seed, scenes, config_path);
    if (tr->parsed()) return run_train(config_path, ckpt_path);
    if (ev->parsed()) return run_eval(ckpt_path, data_dir, report_path, tol_px);
    if (ab->parsed()) return run_ablate(config_path, table, csv_path);
    if (gc->parsed()) return run_gradcheck(config_path, grad_tol);
  } catch (const cmtm::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const cmtm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const cmtm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const cmtm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

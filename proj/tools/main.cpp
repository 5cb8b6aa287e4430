#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "gptqt/cli.hpp"

namespace {

void add_method_flags(CLI::App* cmd, gptqt::RunConfig& cfg) {
  cmd->add_option("--method", cfg.method,
                  "Quantizer: rtn, gptq, gptq-minmse, bcq, gptq-bcq, gptqt");
  cmd->add_option("--bits", cfg.bits, "Final bit width m");
  cmd->add_option("--inter-bits", cfg.inter_bits, "Intermediate bit width n (gptqt)");
  cmd->add_option("--range", cfg.range_bits, "Scale re-exploration range in bits");
  cmd->add_option("--grid-points", cfg.grid_points, "Scale search grid density");
  cmd->add_option("--damp", cfg.damp, "Hessian damping as a fraction of mean(diag)");
  cmd->add_option("--block", cfg.block, "Column block size for the compensated loop");
  cmd->add_option("--als-iters", cfg.als_iters, "BCQ alternating-optimization iterations");
  cmd->add_option("--clip-grid", cfg.clip_grid, "min-MSE clip search grid size");
  cmd->add_flag("--actorder", cfg.actorder, "Quantize columns by descending diag(H)");
  cmd->add_flag("--joint-search", cfg.joint_search, "Joint codebook x scale search");
  cmd->add_flag("--shared-codebook", cfg.shared_codebook, "One codebook per layer");
}

void add_common_flags(CLI::App* cmd, gptqt::RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "Random seed");
  cmd->add_option("--format", cfg.format, "Report format: csv or markdown");
  cmd->add_option("--report", cfg.report_path, "Also write the report to this file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gptqt: two-step binary-coding weight quantization toolkit"};
  app.require_subcommand(1);
  gptqt::RunConfig cfg;

  auto* gen = app.add_subcommand("gen", "Generate synthetic weight/activation tensors");
  gen->add_option("--weights", cfg.weights, "Output weight tensor (GQTF)")->required();
  gen->add_option("--calib", cfg.calib, "Output calibration activations (GQTF)");
  gen->add_option("--val", cfg.val, "Output held-out activations (GQTF)");
  gen->add_option("--rows", cfg.gen_rows, "Weight rows");
  gen->add_option("--cols", cfg.gen_cols, "Weight cols / activation features");
  gen->add_option("--samples", cfg.gen_samples, "Calibration sample count");
  gen->add_option("--val-samples", cfg.gen_val_samples, "Held-out sample count");
  gen->add_option("--rho", cfg.rho, "AR(1) feature correlation in [0,1)");
  gen->add_option("--scale", cfg.weight_scale, "Weight standard deviation");
  add_common_flags(gen, cfg);

  auto* quant = app.add_subcommand("quantize", "Quantize a layer and write the packed matrix");
  quant->add_option("--weights", cfg.weights, "Weight tensor (GQTF)")->required();
  quant->add_option("--calib", cfg.calib, "Calibration activations (GQTF)")->required();
  quant->add_option("--val", cfg.val, "Optional held-out activations for the error column");
  quant->add_option("--out", cfg.out, "Output packed matrix (GQTQ)")->required();
  add_method_flags(quant, cfg);
  add_common_flags(quant, cfg);

  auto* eval = app.add_subcommand("eval", "Evaluate a packed matrix against the original");
  eval->add_option("--packed", cfg.packed, "Packed matrix (GQTQ)")->required();
  eval->add_option("--weights", cfg.weights, "Original weight tensor (GQTF)")->required();
  eval->add_option("--val", cfg.val, "Held-out activations (GQTF)")->required();
  add_common_flags(eval, cfg);

  auto* cmp = app.add_subcommand("compare", "Run several methods/sweeps on the same inputs");
  cmp->add_option("--weights", cfg.weights, "Weight tensor (GQTF)")->required();
  cmp->add_option("--calib", cfg.calib, "Calibration activations (GQTF)")->required();
  cmp->add_option("--val", cfg.val, "Optional held-out activations");
  cmp->add_option("--methods", cfg.methods, "Methods to compare (default: all)");
  cmp->add_option("--sweep-inter", cfg.sweep_inter, "gptqt rows per intermediate bit width");
  cmp->add_option("--sweep-range", cfg.sweep_range, "gptqt rows per re-exploration range");
  add_method_flags(cmp, cfg);
  add_common_flags(cmp, cfg);

  auto* bench = app.add_subcommand("bench", "Time the matvec kernels on synthetic matrices");
  bench->add_option("--sizes", cfg.bench_sizes, "Square sizes to benchmark");
  bench->add_option("--bits", cfg.bits, "Packed bit width m");
  bench->add_option("--reps", cfg.reps, "Repetitions per timing (median reported)");
  bench->add_flag("--parallel", cfg.parallel, "Compute LUT output rows in parallel");
  add_common_flags(bench, cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // flag errors are validation errors
  }

  cfg.command = app.get_subcommands().front()->get_name();
  return gptqt::run_command(cfg, std::cout, std::cerr);
}

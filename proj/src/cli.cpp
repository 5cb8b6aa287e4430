#include "gptqt/cli.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gptqt/calib.hpp"
#include "gptqt/fuse.hpp"
#include "gptqt/gemm.hpp"
#include "gptqt/tensor.hpp"

namespace gptqt {

namespace {

std::string config_line(const RunConfig& cfg) {
  std::ostringstream ss;
  ss << "config: command=" << cfg.command << " method=" << cfg.method << " bits=" << cfg.bits
     << " inter_bits=" << cfg.inter_bits << " range_bits=" << cfg.range_bits
     << " grid_points=" << cfg.grid_points << " damp=" << cfg.damp << " block=" << cfg.block
     << " seed=" << cfg.seed;
  return ss.str();
}

HessianState hessian_from_file(const std::string& calib_path, double damp) {
  const TensorF32 x = read_tensor(calib_path);
  if (x.ndim() != 2) throw std::runtime_error("calibration tensor must be 2-D");
  HessianState hess(x.rows());
  hess.accumulate(x);
  hess.finalize(damp);
  return hess;
}

ReportRow quant_metrics_row(const RunConfig& cfg, const TensorF32& w, const QuantizedLayer& layer,
                            const TensorF32& dq, const TensorF32* x_err) {
  ReportRow row;
  row.kind = cfg.command;
  row.rows = w.rows();
  row.cols = w.cols();
  row.bits = cfg.bits;
  row.seed = cfg.seed;
  double sq = 0.0;
  for (std::size_t i = 0; i < dq.data.size(); ++i) {
    const double d = static_cast<double>(dq.data[i]) - w.data[i];
    sq += d * d;
  }
  row.weight_mse = sq / static_cast<double>(dq.data.size());
  row.proxy_diag = std::accumulate(layer.plan_proxy.begin(), layer.plan_proxy.end(), 0.0);
  if (x_err) row.out_rel_err = layer_output_error(w, dq, *x_err);
  row.plan_ms = layer.plan_seconds * 1e3;
  row.loop_ms = layer.loop_seconds * 1e3;
  return row;
}

}  // namespace

QuantMethod method_from_config(const RunConfig& cfg) {
  const auto tag = parse_method(cfg.method);
  if (!tag)
    throw ConfigError("unknown method '" + cfg.method +
                      "' (expected rtn, gptq, gptq-minmse, bcq, gptq-bcq or gptqt)");
  QuantMethod m;
  m.tag = *tag;
  m.bits = cfg.bits;
  m.inter_bits = cfg.inter_bits;
  m.range_bits = cfg.range_bits;
  m.grid_points = cfg.grid_points;
  m.als_iters = cfg.als_iters;
  m.clip_grid = cfg.clip_grid;
  m.actorder = cfg.actorder;
  m.joint_search = cfg.joint_search;
  m.shared_codebook = cfg.shared_codebook;
  return m;
}

void validate_config(const RunConfig& cfg) {
  if (cfg.format != "csv" && cfg.format != "markdown")
    throw ConfigError("format must be csv or markdown");
  if (!(cfg.damp > 0.0)) throw ConfigError("damp must be > 0");
  if (cfg.block < 1) throw ConfigError("block must be >= 1");

  auto check_method = [&](const std::string& name) {
    RunConfig c = cfg;
    c.method = name;
    const QuantMethod m = method_from_config(c);
    try {
      validate_method(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("method " + name + ": " + e.what());
    }
  };

  if (cfg.command == "gen") {
    if (cfg.weights.empty()) throw ConfigError("gen requires --weights");
    if (cfg.gen_rows < 1 || cfg.gen_cols < 1) throw ConfigError("gen needs rows, cols >= 1");
    if (cfg.gen_samples < 1) throw ConfigError("gen needs samples >= 1");
    if (!(cfg.rho >= 0.0 && cfg.rho < 1.0)) throw ConfigError("rho must be in [0, 1)");
  } else if (cfg.command == "quantize") {
    if (cfg.weights.empty() || cfg.calib.empty() || cfg.out.empty())
      throw ConfigError("quantize requires --weights, --calib and --out");
    check_method(cfg.method);
  } else if (cfg.command == "eval") {
    if (cfg.packed.empty() || cfg.weights.empty() || cfg.val.empty())
      throw ConfigError("eval requires --packed, --weights and --val");
  } else if (cfg.command == "compare") {
    if (cfg.weights.empty() || cfg.calib.empty())
      throw ConfigError("compare requires --weights and --calib");
    for (const auto& name : cfg.methods) check_method(name);
    for (int n : cfg.sweep_inter) {
      if (n < 2 || n > 6) throw ConfigError("sweep-inter values must be in 2..6");
      if (cfg.bits >= n)
        throw ConfigError("sweep-inter " + std::to_string(n) + " needs bits < inter bits");
    }
    for (int r : cfg.sweep_range)
      if (r < 0) throw ConfigError("sweep-range values must be >= 0");
    if (cfg.methods.empty() && cfg.sweep_inter.empty() && cfg.sweep_range.empty())
      check_method("gptqt");  // default method set includes gptqt
  } else if (cfg.command == "bench") {
    if (cfg.bits < 1 || cfg.bits > 8) throw ConfigError("bench bits must be in 1..8");
    if (cfg.reps < 3) throw ConfigError("bench reps must be >= 3");
    if (cfg.bench_sizes.empty()) throw ConfigError("bench needs at least one size");
  } else {
    throw ConfigError("unknown command '" + cfg.command + "'");
  }
}

QuantReport cmd_gen(const RunConfig& cfg) {
  QuantReport rep;
  rep.header.push_back(config_line(cfg));
  rep.header.push_back("gen: rows=" + std::to_string(cfg.gen_rows) +
                       " cols=" + std::to_string(cfg.gen_cols) +
                       " samples=" + std::to_string(cfg.gen_samples) +
                       " rho=" + std::to_string(cfg.rho));

  auto add_row = [&](const std::string& what, std::size_t r, std::size_t c) {
    ReportRow row;
    row.kind = "gen";
    row.method = what;
    row.rows = r;
    row.cols = c;
    row.seed = cfg.seed;
    rep.rows.push_back(row);
  };

  const TensorF32 w =
      gen_weights(cfg.gen_rows, cfg.gen_cols, cfg.seed, static_cast<float>(cfg.weight_scale));
  write_tensor(cfg.weights, w);
  add_row("weights", cfg.gen_rows, cfg.gen_cols);

  if (!cfg.calib.empty()) {
    const TensorF32 x = gen_activations(cfg.gen_cols, cfg.gen_samples,
                                        splitmix64_at(cfg.seed, 1), static_cast<float>(cfg.rho));
    write_tensor(cfg.calib, x);
    add_row("calib", cfg.gen_cols, cfg.gen_samples);
  }
  if (!cfg.val.empty()) {
    const TensorF32 x = gen_activations(cfg.gen_cols, cfg.gen_val_samples,
                                        splitmix64_at(cfg.seed, 2), static_cast<float>(cfg.rho));
    write_tensor(cfg.val, x);
    add_row("val", cfg.gen_cols, cfg.gen_val_samples);
  }
  return rep;
}

QuantReport cmd_quantize(const RunConfig& cfg) {
  const TensorF32 w = read_tensor(cfg.weights);
  if (w.ndim() != 2) throw std::runtime_error("weights tensor must be 2-D");
  const HessianState hess = hessian_from_file(cfg.calib, cfg.damp);
  const QuantMethod method = method_from_config(cfg);

  const QuantizedLayer layer = quantize_layer(w, hess, method, cfg.block);
  const PackedBCMatrix packed = pack(layer);
  serialize(packed, cfg.out);

  // metrics come from the artifact as written (f32 coefficients on disk)
  const PackedBCMatrix reloaded = deserialize(cfg.out);
  const TensorF32 dq = dequantize_packed(reloaded);
  TensorF32 x_err;
  if (!cfg.val.empty())
    x_err = read_tensor(cfg.val);
  else
    x_err = read_tensor(cfg.calib);

  QuantReport rep;
  rep.header.push_back(config_line(cfg));
  ReportRow row = quant_metrics_row(cfg, w, layer, dq, &x_err);
  row.method = cfg.method;
  row.inter_bits = method.tag == QuantMethod::Tag::Gptqt ? cfg.inter_bits : 0;
  row.range_bits = method.tag == QuantMethod::Tag::Gptqt ? cfg.range_bits : 0;
  row.pack_bytes = static_cast<double>(std::filesystem::file_size(cfg.out));
  rep.rows.push_back(row);
  return rep;
}

QuantReport cmd_eval(const RunConfig& cfg) {
  const TensorF32 w = read_tensor(cfg.weights);
  const PackedBCMatrix packed = deserialize(cfg.packed);
  if (packed.rows != w.rows() || packed.cols != w.cols())
    throw std::runtime_error("eval: packed matrix is " + std::to_string(packed.rows) + "x" +
                             std::to_string(packed.cols) + " but weights are " +
                             std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  const TensorF32 x_val = read_tensor(cfg.val);
  const TensorF32 dq = dequantize_packed(packed);

  QuantReport rep;
  rep.header.push_back(config_line(cfg));
  ReportRow row;
  row.kind = "eval";
  row.rows = w.rows();
  row.cols = w.cols();
  row.method = "packed";
  row.bits = packed.m;
  row.seed = cfg.seed;
  double sq = 0.0;
  for (std::size_t i = 0; i < dq.data.size(); ++i) {
    const double d = static_cast<double>(dq.data[i]) - w.data[i];
    sq += d * d;
  }
  row.weight_mse = sq / static_cast<double>(dq.data.size());
  row.out_rel_err = layer_output_error(w, dq, x_val);
  row.pack_bytes = static_cast<double>(std::filesystem::file_size(cfg.packed));
  rep.rows.push_back(row);
  return rep;
}

QuantReport cmd_compare(const RunConfig& cfg) {
  const TensorF32 w = read_tensor(cfg.weights);
  const HessianState hess = hessian_from_file(cfg.calib, cfg.damp);
  TensorF32 x_err;
  if (!cfg.val.empty())
    x_err = read_tensor(cfg.val);
  else
    x_err = read_tensor(cfg.calib);

  QuantReport rep;
  rep.header.push_back(config_line(cfg));

  auto run_one = [&](const std::string& name, int inter_bits, int range_bits) {
    RunConfig c = cfg;
    c.method = name;
    c.inter_bits = inter_bits;
    c.range_bits = range_bits;
    const QuantMethod m = method_from_config(c);
    const QuantizedLayer layer = quantize_layer(w, hess, m, cfg.block);
    ReportRow row = quant_metrics_row(c, w, layer, layer.dequant_tensor(), &x_err);
    row.kind = "compare";
    row.method = name;
    row.inter_bits = m.tag == QuantMethod::Tag::Gptqt ? inter_bits : 0;
    row.range_bits = m.tag == QuantMethod::Tag::Gptqt ? range_bits : 0;
    rep.rows.push_back(row);
  };

  std::vector<std::string> methods = cfg.methods;
  if (methods.empty() && cfg.sweep_inter.empty() && cfg.sweep_range.empty())
    methods = {"rtn", "gptq", "gptq-minmse", "bcq", "gptq-bcq", "gptqt"};
  for (const auto& name : methods) run_one(name, cfg.inter_bits, cfg.range_bits);
  for (int n : cfg.sweep_inter) run_one("gptqt", n, cfg.range_bits);
  for (int r : cfg.sweep_range) run_one("gptqt", cfg.inter_bits, r);
  return rep;
}

QuantReport cmd_bench(const RunConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (std::size_t s : cfg.bench_sizes) sizes.emplace_back(s, s);
  const std::vector<BenchRow> rows = bench(sizes, cfg.bits, cfg.reps, cfg.seed, cfg.parallel);

  QuantReport rep;
  rep.header.push_back(config_line(cfg));
  rep.header.push_back("bench: reps=" + std::to_string(cfg.reps) + " parallel=" +
                       (cfg.parallel ? "on" : "off") + " paths=dense,dequant,lut");
  for (const BenchRow& b : rows) {
    ReportRow row;
    row.kind = "bench";
    row.rows = b.rows;
    row.cols = b.cols;
    row.method = b.path;
    row.bits = b.bits;
    row.seed = cfg.seed;
    row.time_ms = b.median_ms;
    row.ratio_vs_dequant = b.ratio_vs_dequant;
    rep.rows.push_back(row);
  }
  return rep;
}

int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    validate_config(cfg);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    QuantReport rep;
    if (cfg.command == "gen")
      rep = cmd_gen(cfg);
    else if (cfg.command == "quantize")
      rep = cmd_quantize(cfg);
    else if (cfg.command == "eval")
      rep = cmd_eval(cfg);
    else if (cfg.command == "compare")
      rep = cmd_compare(cfg);
    else
      rep = cmd_bench(cfg);

    const std::string text = format_report(rep, cfg.format);
    out << text;
    if (!cfg.report_path.empty()) {
      std::ofstream f(cfg.report_path, std::ios::trunc);
      if (!f) throw std::runtime_error("cannot open report file " + cfg.report_path);
      f << text;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace gptqt

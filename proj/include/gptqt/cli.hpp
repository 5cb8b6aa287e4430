#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gptqt/engine.hpp"
#include "gptqt/report.hpp"

namespace gptqt {

/// Parsed command-line run. Field defaults are the tool defaults and are
/// echoed into every report header.
struct RunConfig {
  std::string command;  // gen | quantize | eval | bench | compare

  // paths
  std::string weights;
  std::string calib;
  std::string val;
  std::string out;          // generated/packed artifact
  std::string packed;       // packed input for eval
  std::string report_path;  // optional report file; reports always go to stdout

  // method knobs
  std::string method = "gptqt";
  int bits = 3;
  int inter_bits = 5;
  int range_bits = 1;
  int grid_points = 64;
  double damp = 0.01;
  int block = 128;
  int als_iters = 10;
  int clip_grid = 100;
  bool actorder = false;
  bool joint_search = false;
  bool shared_codebook = false;

  std::uint64_t seed = 1;
  std::string format = "csv";  // csv | markdown

  // gen
  std::size_t gen_rows = 256;
  std::size_t gen_cols = 256;
  std::size_t gen_samples = 512;
  std::size_t gen_val_samples = 256;
  double rho = 0.0;
  double weight_scale = 1.0;

  // bench
  std::vector<std::size_t> bench_sizes = {1024, 2048, 4096};
  int reps = 5;
  bool parallel = false;  // fan LUT output rows across cores

  // compare
  std::vector<std::string> methods;  // empty = all six
  std::vector<int> sweep_inter;      // extra gptqt rows per intermediate bits
  std::vector<int> sweep_range;      // extra gptqt rows per range
};

/// Invalid flag combinations (reported with exit code 2).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Checks cross-field consistency; throws ConfigError with an actionable
/// message.
void validate_config(const RunConfig& cfg);

QuantMethod method_from_config(const RunConfig& cfg);

QuantReport cmd_gen(const RunConfig& cfg);
QuantReport cmd_quantize(const RunConfig& cfg);
QuantReport cmd_eval(const RunConfig& cfg);
QuantReport cmd_compare(const RunConfig& cfg);
QuantReport cmd_bench(const RunConfig& cfg);

/// Validates, dispatches and prints the report. Exit codes: 0 success,
/// 2 validation error, 3 runtime error.
int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace gptqt

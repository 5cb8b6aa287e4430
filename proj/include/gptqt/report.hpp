#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace gptqt {

/// One report line. Numeric cells default to NaN, which renders as an empty
/// cell; every cell that is present must be finite.
struct ReportRow {
  std::string kind;    // gen | quantize | eval | bench | compare
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string method;  // quantizer tag or kernel path
  int bits = 0;
  int inter_bits = 0;
  int range_bits = 0;
  std::uint64_t seed = 0;

  static constexpr double kEmpty = std::numeric_limits<double>::quiet_NaN();
  double weight_mse = kEmpty;
  double proxy_diag = kEmpty;    // sum over rows of the diagonal proxy
  double out_rel_err = kEmpty;   // ||(W_dq - W) X||_F / ||W X||_F
  double plan_ms = kEmpty;
  double loop_ms = kEmpty;
  double pack_bytes = kEmpty;
  double time_ms = kEmpty;           // bench: median kernel time
  double ratio_vs_dequant = kEmpty;  // bench: dequant-path time / this path
};

/// Report container: header lines (rendered as '# ' comments in CSV) plus
/// rows. The CSV schema is versioned via the first header line.
struct QuantReport {
  std::vector<std::string> header;
  std::vector<ReportRow> rows;
};

inline constexpr std::string_view kReportSchema = "gptqt-report v1";

void write_csv(const QuantReport& report, std::ostream& os);
void write_markdown(const QuantReport& report, std::ostream& os);

/// format is "csv" or "markdown".
std::string format_report(const QuantReport& report, std::string_view format);

}  // namespace gptqt

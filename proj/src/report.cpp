#include "gptqt/report.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gptqt {

namespace {

const char* kColumns =
    "kind,rows,cols,method,bits,inter_bits,range_bits,seed,weight_mse,proxy_diag,"
    "out_rel_err,plan_ms,loop_ms,pack_bytes,time_ms,ratio_vs_dequant";

std::string cell(double v) {
  if (std::isnan(v)) return "";
  if (!std::isfinite(v)) throw std::logic_error("report: non-finite numeric cell");
  std::ostringstream ss;
  ss.precision(9);
  ss << v;
  return ss.str();
}

std::vector<std::string> row_cells(const ReportRow& r) {
  return {r.kind,
          std::to_string(r.rows),
          std::to_string(r.cols),
          r.method,
          std::to_string(r.bits),
          std::to_string(r.inter_bits),
          std::to_string(r.range_bits),
          std::to_string(r.seed),
          cell(r.weight_mse),
          cell(r.proxy_diag),
          cell(r.out_rel_err),
          cell(r.plan_ms),
          cell(r.loop_ms),
          cell(r.pack_bytes),
          cell(r.time_ms),
          cell(r.ratio_vs_dequant)};
}

}  // namespace

void write_csv(const QuantReport& report, std::ostream& os) {
  os << "# " << kReportSchema << "\n";
  for (const auto& line : report.header) os << "# " << line << "\n";
  os << kColumns << "\n";
  for (const auto& r : report.rows) {
    const auto cells = row_cells(r);
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << "\n";
  }
}

void write_markdown(const QuantReport& report, std::ostream& os) {
  for (const auto& line : report.header) os << "> " << line << "\n";
  std::istringstream cols(kColumns);
  std::string c;
  std::vector<std::string> names;
  while (std::getline(cols, c, ',')) names.push_back(c);

  os << "|";
  for (const auto& n : names) os << " " << n << " |";
  os << "\n|";
  for (std::size_t i = 0; i < names.size(); ++i) os << "---|";
  os << "\n";
  for (const auto& r : report.rows) {
    os << "|";
    for (const auto& v : row_cells(r)) os << " " << (v.empty() ? " " : v) << " |";
    os << "\n";
  }
}

std::string format_report(const QuantReport& report, std::string_view format) {
  std::ostringstream ss;
  if (format == "csv")
    write_csv(report, ss);
  else if (format == "markdown")
    write_markdown(report, ss);
  else
    throw std::invalid_argument("format must be csv or markdown");
  return ss.str();
}

}  // namespace gptqt

#pragma once

// CSV and JSON encodings of the library types.

#include "ncsde/basis.hpp"
#include "ncsde/clustering.hpp"
#include "ncsde/core.hpp"
#include "ncsde/engine.hpp"
#include "ncsde/simulate.hpp"
#include "ncsde/spectral.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ncsde {

using Json = nlohmann::json;

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line, long column = 0)
      : Error(what), line_(line), column_(column) {}
  long line() const { return line_; }
  long column() const { return column_; }

 private:
  long line_;
  long column_;
};

// Header row of labels followed by numeric rows, one column per series.
struct LabeledMatrix {
  std::vector<std::string> labels;
  Matrix values;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

inline double parse_number(std::string_view field, long line, long column) {
  if (field.empty()) throw ParseError("missing value at line " + std::to_string(line) + ", column " + std::to_string(column), line, column);
  if (field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("not a number '" + std::string(field) + "' at line " + std::to_string(line) + ", column " +
                         std::to_string(column),
                     line, column);
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline LabeledMatrix read_csv(std::istream& in) {
  LabeledMatrix out;
  std::string line;
  long line_no = 0;
  // Skip leading blank lines.
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw ParseError("input is empty", line_no);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto f : detail::split_fields(line)) out.labels.push_back(detail::unquote(f));
  const auto cols = static_cast<long>(out.labels.size());
  for (long c = 0; c < cols; ++c)
    if (out.labels[static_cast<std::size_t>(c)].empty())
      throw ParseError("empty column name at line " + std::to_string(line_no) + ", column " + std::to_string(c + 1),
                       line_no, c + 1);

  std::vector<double> data;
  long rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (static_cast<long>(fields.size()) != cols)
      throw ParseError("expected " + std::to_string(cols) + " fields at line " + std::to_string(line_no) + ", found " +
                           std::to_string(fields.size()),
                       line_no);
    for (long c = 0; c < cols; ++c) data.push_back(detail::parse_number(fields[static_cast<std::size_t>(c)], line_no, c + 1));
    ++rows;
  }
  if (rows == 0) throw ParseError("no data rows", line_no);
  out.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), rows, cols);
  return out;
}

inline LabeledMatrix read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_csv(in);
}

inline TimeSeriesSet to_series(LabeledMatrix lm) {
  return TimeSeriesSet(std::move(lm.values), std::move(lm.labels));
}

inline void write_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& header) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols()) throw SizeError("header width does not match matrix");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << detail::format_double(values(r, c));
    out << '\n';
  }
}

inline void write_csv_file(const std::string& path, const Matrix& values, const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(out, values, header);
}

inline std::vector<std::string> numbered(const std::string& prefix, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// Grid column followed by one column per series.
inline void write_periodogram_csv(std::ostream& out, const PeriodogramSet& ps, const std::vector<std::string>& labels) {
  Matrix table(ps.frequencies(), ps.series() + 1);
  table.col(0) = ps.grid.omegas;
  table.rightCols(ps.series()) = ps.ordinates;
  std::vector<std::string> header{"omega"};
  header.insert(header.end(), labels.begin(), labels.end());
  write_csv(out, table, header);
}

// ---- JSON ----

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw DomainError("expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw DomainError("ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Json to_json(const BasisSpec& b, const PenaltySpec& p) {
  Json pen{{"kind", to_string(p.kind)}};
  if (p.kind == PenaltyKind::difference) pen["a"] = p.order;
  return {{"L", b.L}, {"degree", b.degree}, {"domain", {b.lo, b.hi}}, {"penalty", pen}};
}

inline std::string to_string(LambdaMode m) {
  switch (m) {
    case LambdaMode::fixed: return "fixed";
    case LambdaMode::automatic: return "auto";
    case LambdaMode::aic_grid: return "grid";
  }
  return "?";
}

// "auto", "auto:x0", "fixed:x" or "grid:x1,x2,...".
inline LambdaSetting parse_lambda(const std::string& s) {
  LambdaSetting out;
  const auto colon = s.find(':');
  const std::string head = s.substr(0, colon);
  const std::string tail = colon == std::string::npos ? "" : s.substr(colon + 1);
  auto number = [&](std::string_view f) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size())
      throw DomainError("bad lambda value '" + std::string(f) + "'");
    return v;
  };
  if (head == "auto") {
    out.mode = LambdaMode::automatic;
    if (!tail.empty()) out.value = number(tail);
  } else if (head == "fixed") {
    out.mode = LambdaMode::fixed;
    out.value = number(tail);
  } else if (head == "grid") {
    out.mode = LambdaMode::aic_grid;
    for (auto f : detail::split_fields(tail)) out.grid.push_back(number(f));
  } else {
    throw DomainError("lambda must be auto, fixed:x or grid:x1,x2,...; got '" + s + "'");
  }
  return out;
}

// "d2", "diff" or "diff:a".
inline PenaltySpec parse_penalty(const std::string& s) {
  PenaltySpec out;
  const auto colon = s.find(':');
  out.kind = penalty_kind_from_string(s.substr(0, colon));
  if (colon != std::string::npos) {
    if (out.kind != PenaltyKind::difference) throw DomainError("only the difference penalty takes an order");
    const std::string tail = s.substr(colon + 1);
    int a = 0;
    const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), a);
    if (tail.empty() || ec != std::errc() || ptr != tail.data() + tail.size())
      throw DomainError("bad difference order '" + tail + "'");
    out.order = a;
  }
  return out;
}

inline Json to_json(const LambdaSetting& l) {
  Json j{{"mode", to_string(l.mode)}, {"value", l.value}};
  if (l.mode == LambdaMode::aic_grid) j["grid"] = l.grid;
  return j;
}

inline LambdaSetting lambda_from_json(const Json& j) {
  if (j.is_string()) return parse_lambda(j.get<std::string>());
  LambdaSetting out;
  const std::string mode = j.value("mode", std::string("auto"));
  if (mode == "auto") out.mode = LambdaMode::automatic;
  else if (mode == "fixed") out.mode = LambdaMode::fixed;
  else if (mode == "grid") out.mode = LambdaMode::aic_grid;
  else throw DomainError("unknown lambda mode '" + mode + "'");
  out.value = j.value("value", out.value);
  if (j.contains("grid")) out.grid = j.at("grid").get<std::vector<double>>();
  return out;
}

inline Json to_json(const FitConfig& c) {
  return {{"K", c.K},
          {"lambda", to_json(c.lambda)},
          {"max_outer_iters", c.max_outer_iters},
          {"tol", c.tol},
          {"max_halvings", c.max_halvings},
          {"init_ridge", c.init_ridge},
          {"lambda_tol", c.lambda_tol}};
}

// Missing keys keep the values already in `c`.
inline void merge_json(FitConfig& c, const Json& j) {
  if (!j.is_object()) throw DomainError("fit config must be a JSON object");
  if (j.contains("K")) c.K = j.at("K").get<int>();
  if (j.contains("lambda")) c.lambda = lambda_from_json(j.at("lambda"));
  if (j.contains("max_outer_iters")) c.max_outer_iters = j.at("max_outer_iters").get<int>();
  if (j.contains("tol")) c.tol = j.at("tol").get<double>();
  if (j.contains("max_halvings")) c.max_halvings = j.at("max_halvings").get<int>();
  if (j.contains("init_ridge")) c.init_ridge = j.at("init_ridge").get<double>();
  if (j.contains("lambda_tol")) c.lambda_tol = j.at("lambda_tol").get<double>();
}

inline Json to_json(const FitResult& r) {
  Json grid = Json::array();
  for (const auto& [lam, a] : r.aic_grid) grid.push_back({{"lambda", lam}, {"aic", a}});
  return {{"theta", matrix_to_json(r.coefficients.theta)},
          {"scores", matrix_to_json(r.coefficients.scores)},
          {"lambda", r.lambda},
          {"deviance", r.deviance},
          {"df", r.df},
          {"aic", r.aic},
          {"converged", r.converged},
          {"iterations", r.iterations},
          {"skipped_blocks", r.skipped_blocks},
          {"canonical_ties", r.canonical_ties},
          {"objective_trace", r.objective_trace},
          {"lambda_trace", r.lambda_trace},
          {"aic_grid", grid}};
}

inline FitResult fit_result_from_json(const Json& j) {
  FitResult r;
  r.coefficients.theta = matrix_from_json(j.at("theta"));
  r.coefficients.scores = matrix_from_json(j.at("scores"));
  r.raw = r.coefficients;
  r.lambda = j.at("lambda").get<double>();
  r.deviance = j.at("deviance").get<double>();
  r.df = j.at("df").get<double>();
  r.aic = j.at("aic").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.iterations = j.at("iterations").get<int>();
  r.skipped_blocks = j.at("skipped_blocks").get<long>();
  r.canonical_ties = j.at("canonical_ties").get<bool>();
  r.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  r.lambda_trace = j.at("lambda_trace").get<std::vector<double>>();
  for (const Json& g : j.at("aic_grid")) r.aic_grid.emplace_back(g.at("lambda").get<double>(), g.at("aic").get<double>());
  return r;
}

inline Json to_json(const Dendrogram& d) {
  Json merges = Json::array();
  for (const Merge& m : d.merges)
    merges.push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}, {"size", m.size}});
  return {{"leaves", d.leaf_labels}, {"merges", merges}};
}

inline Json to_json(const StudyReport& rep) {
  Json cells = Json::array();
  for (const CellReport& c : rep.cells) {
    Json est = Json::array();
    for (const EstimatorSummary& e : c.estimators)
      est.push_back({{"estimator", to_string(e.kind)},
                     {"ari_mean", e.ari.mean},
                     {"ari_se", e.ari.se},
                     {"angle_mean", e.angle.mean},
                     {"angle_se", e.angle.se}});
    cells.push_back({{"n", c.n},
                     {"m", c.m},
                     {"runs", c.runs},
                     {"used", c.used},
                     {"excluded", c.excluded},
                     {"failed", c.failed},
                     {"failures", c.failures},
                     {"estimators", est}});
  }
  return {{"seed", rep.seed}, {"runs", rep.runs}, {"cells", cells}};
}

// One row per (cell, estimator).
inline void write_study_csv(std::ostream& out, const StudyReport& rep) {
  out << "n,m,estimator,runs,used,excluded,failed,ari_mean,ari_se,angle_mean,angle_se\n";
  for (const CellReport& c : rep.cells)
    for (const EstimatorSummary& e : c.estimators)
      out << c.n << ',' << c.m << ',' << to_string(e.kind) << ',' << c.runs << ',' << c.used << ',' << c.excluded
          << ',' << c.failed << ',' << detail::format_double(e.ari.mean) << ',' << detail::format_double(e.ari.se)
          << ',' << detail::format_double(e.angle.mean) << ',' << detail::format_double(e.angle.se) << '\n';
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace ncsde

#pragma once

// CSV datasets and the versioned model file.

#include "vssgp/bounds.hpp"
#include "vssgp/core.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace vssgp {

class IoError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_cell(std::string_view cell, std::size_t line_no, const std::string& path) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw IoError(path + ":" + std::to_string(line_no) + ": bad numeric cell '" + std::string(cell) + "'");
  return v;
}

/// Index of a column named `prefix` followed by a positive integer, else 0.
inline int column_number(std::string_view name, std::string_view prefix) {
  if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) return 0;
  int k = 0;
  const auto [ptr, ec] = std::from_chars(name.data() + prefix.size(), name.data() + name.size(), k);
  return (ec == std::errc() && ptr == name.data() + name.size() && k > 0) ? k : 0;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parsed CSV: the x columns, and the y columns when present.
struct CsvTable {
  Matrix inputs;
  Matrix outputs;  // 0 columns when the file has no y columns
};

/// Read a CSV whose header names columns x1..xQ and y1..yD in any order.
/// When `require_outputs` is false, files without y columns are accepted.
inline CsvTable read_csv_table(std::istream& in, const std::string& path, bool require_outputs) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw IoError(path + ": missing header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto names = detail::split_commas(line);
  std::vector<int> x_of(names.size(), 0), y_of(names.size(), 0);
  int q = 0, d = 0;
  for (std::size_t c = 0; c < names.size(); ++c) {
    x_of[c] = detail::column_number(names[c], "x");
    y_of[c] = detail::column_number(names[c], "y");
    if (!x_of[c] && !y_of[c])
      throw IoError(path + ":" + std::to_string(line_no) + ": header column '" + std::string(names[c]) +
                    "' is not of the form x<i> or y<j>");
    q = std::max(q, x_of[c]);
    d = std::max(d, y_of[c]);
  }
  std::vector<int> seen_x(static_cast<std::size_t>(q) + 1, 0), seen_y(static_cast<std::size_t>(d) + 1, 0);
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (x_of[c]) ++seen_x[static_cast<std::size_t>(x_of[c])];
    if (y_of[c]) ++seen_y[static_cast<std::size_t>(y_of[c])];
  }
  for (int i = 1; i <= q; ++i)
    if (seen_x[static_cast<std::size_t>(i)] != 1)
      throw IoError(path + ": header must name each of x1..x" + std::to_string(q) + " exactly once");
  for (int i = 1; i <= d; ++i)
    if (seen_y[static_cast<std::size_t>(i)] != 1)
      throw IoError(path + ": header must name each of y1..y" + std::to_string(d) + " exactly once");
  if (q == 0) throw IoError(path + ": no input columns");
  if (require_outputs && d == 0) throw IoError(path + ": no output columns");

  std::vector<double> xs, ys;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != names.size())
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(names.size()) +
                    " cells, found " + std::to_string(cells.size()));
    std::vector<double> xr(static_cast<std::size_t>(q)), yr(static_cast<std::size_t>(d));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const double v = detail::parse_cell(cells[c], line_no, path);
      if (x_of[c]) xr[static_cast<std::size_t>(x_of[c] - 1)] = v;
      else yr[static_cast<std::size_t>(y_of[c] - 1)] = v;
    }
    xs.insert(xs.end(), xr.begin(), xr.end());
    ys.insert(ys.end(), yr.begin(), yr.end());
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data rows");
  CsvTable t;
  t.inputs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), rows, q);
  t.outputs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(ys.data(), rows, d);
  return t;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable t = read_csv_table(in, path, true);
  return Dataset(std::move(t.inputs), std::move(t.outputs));
}

/// Input columns only (y columns, if any, are ignored).
inline Matrix load_csv_inputs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_csv_table(in, path, false).inputs;
}

/// Write named column blocks side by side. Each block is (prefix, matrix);
/// columns are named prefix1, prefix2, ...
inline void write_csv_columns(std::ostream& out, const std::vector<std::pair<std::string, const Matrix*>>& blocks) {
  Index rows = -1;
  bool first = true;
  for (const auto& [prefix, m] : blocks) {
    if (rows >= 0 && m->rows() != rows) throw ValidationError("write_csv: blocks have different row counts");
    rows = m->rows();
    for (Index c = 0; c < m->cols(); ++c) {
      out << (first ? "" : ",") << prefix << (c + 1);
      first = false;
    }
  }
  out << '\n';
  for (Index r = 0; r < rows; ++r) {
    first = true;
    for (const auto& [prefix, m] : blocks)
      for (Index c = 0; c < m->cols(); ++c) {
        out << (first ? "" : ",") << detail::format_double((*m)(r, c));
        first = false;
      }
    out << '\n';
  }
}

inline void write_csv(std::ostream& out, const Dataset& data) {
  write_csv_columns(out, {{"x", &data.inputs}, {"y", &data.outputs}});
}

inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_csv(out, data);
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr int kSchemaVersion = 1;

/// Column scales applied before fitting: x / x_scale, y / y_scale.
struct Standardization {
  RowVector x_scale;
  RowVector y_scale;

  static Standardization from_data(const Dataset& data) {
    auto sd = [](const Matrix& m) {
      RowVector s(m.cols());
      for (Index c = 0; c < m.cols(); ++c) {
        const double mean = m.col(c).mean();
        const double var = m.rows() > 1 ? (m.col(c).array() - mean).square().sum() / static_cast<double>(m.rows() - 1) : 0.0;
        s(c) = var > 0.0 ? std::sqrt(var) : 1.0;
      }
      return s;
    };
    return {sd(data.inputs), sd(data.outputs)};
  }

  Matrix scale_inputs(const Matrix& x) const { return x.array().rowwise() / x_scale.array(); }
  Dataset apply(const Dataset& data) const {
    return Dataset(scale_inputs(data.inputs), data.outputs.array().rowwise() / y_scale.array());
  }
};

struct ModelMetadata {
  std::uint64_t seed = 0;
  Index iterations = 0;
  std::string bound_kind = "optimal";
  std::string method = "vssgp";
  std::optional<Standardization> standardization;
};

struct ModelFile {
  KernelSpec spec;
  VariationalState state;
  ModelMetadata metadata;
  /// Closed-form q(A) (means and Sigma-hat); tau is the state's.
  std::optional<CoefficientSolve> solve;
};

namespace detail {

using nlohmann::json;

inline json to_json(const Eigen::Ref<const Matrix>& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json_vec(const Eigen::Ref<const Vector>& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline const json& field(const json& j, const char* key, const std::string& at) {
  if (!j.is_object() || !j.contains(key)) throw IoError("model: missing field " + at + "." + key);
  return j.at(key);
}

inline double number(const json& j, const std::string& at) {
  if (!j.is_number()) throw IoError("model: " + at + " must be a number");
  return j.get<double>();
}

inline Vector vec_from_json(const json& j, const std::string& at) {
  if (!j.is_array()) throw IoError("model: " + at + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = number(j[i], at + "[" + std::to_string(i) + "]");
  return v;
}

inline Matrix mat_from_json(const json& j, const std::string& at) {
  if (!j.is_array()) throw IoError("model: " + at + " must be an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Vector row = vec_from_json(j[static_cast<std::size_t>(r)], at + "[" + std::to_string(r) + "]");
    if (row.size() != cols) throw IoError("model: " + at + " is ragged");
    m.row(r) = row.transpose();
  }
  return m;
}

/// JSON writer that prints every float with 17 significant digits.
inline void emit(const json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent), ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out += "{}";
      return;
    }
    out += "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out += ",\n";
      first = false;
      out += pad + json(it.key()).dump() + ": ";
      emit(it.value(), out, indent + 2);
    }
    out += "\n" + close_pad + "}";
  } else if (j.is_array()) {
    const bool flat = std::none_of(j.begin(), j.end(), [](const json& e) { return e.is_structured(); });
    if (flat) {
      out += "[";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ", ";
        emit(j[i], out, indent);
      }
      out += "]";
      return;
    }
    out += "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out += ",\n";
      out += pad;
      emit(j[i], out, indent + 2);
    }
    out += "\n" + close_pad + "]";
  } else if (j.is_number_float()) {
    out += format_double(j.get<double>());
  } else {
    out += j.dump();
  }
}

}  // namespace detail

inline std::string model_to_string(const ModelFile& m) {
  using detail::json;
  json spec;
  spec["components"] = json::array();
  for (const auto& c : m.spec.components)
    spec["components"].push_back({{"weight", c.weight},
                                  {"lengthscales", detail::to_json_vec(c.lengthscales)},
                                  {"inverse_periods", detail::to_json_vec(c.inverse_periods)}});

  const VariationalState& s = m.state;
  json state;
  state["features_per_component"] = s.features_per_component;
  state["inducing_inputs"] = detail::to_json(s.inducing_inputs);
  state["freq_means"] = detail::to_json(s.freq_means);
  state["freq_vars"] = detail::to_json(s.freq_vars);
  if (const auto* vp = std::get_if<VariationalPhases>(&s.phases))
    state["phases"] = {{"mode", "variational"},
                       {"lower", detail::to_json_vec(vp->lower)},
                       {"upper", detail::to_json_vec(vp->upper)}};
  else
    state["phases"] = {{"mode", "fixed"}, {"values", detail::to_json_vec(std::get<FixedPhases>(s.phases).values)}};
  state["coeff_means"] = detail::to_json(s.coeff_means);
  state["coeff_vars"] = detail::to_json(s.coeff_vars);
  state["noise_precision"] = s.noise_precision;

  json meta = {{"seed", m.metadata.seed},
               {"iterations", m.metadata.iterations},
               {"bound_kind", m.metadata.bound_kind},
               {"method", m.metadata.method}};
  if (m.metadata.standardization)
    meta["standardization"] = {{"x_scale", detail::to_json_vec(m.metadata.standardization->x_scale.transpose())},
                               {"y_scale", detail::to_json_vec(m.metadata.standardization->y_scale.transpose())}};

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kernel_spec"] = std::move(spec);
  doc["variational_state"] = std::move(state);
  doc["metadata"] = std::move(meta);
  if (m.solve)
    doc["optimal_coefficients"] = {{"means", detail::to_json(m.solve->means)},
                                   {"covariance", detail::to_json(m.solve->covariance)}};
  std::string out;
  detail::emit(doc, out, 0);
  out += '\n';
  return out;
}

inline ModelFile model_from_string(const std::string& text) {
  using detail::field;
  using detail::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("model: invalid JSON: ") + e.what());
  }
  const json& version = field(doc, "schema_version", "model");
  if (!version.is_number_integer() || version.get<int>() != kSchemaVersion)
    throw IoError("model: unsupported schema_version " + version.dump());

  ModelFile m;
  const json& comps = field(field(doc, "kernel_spec", "model"), "components", "kernel_spec");
  if (!comps.is_array()) throw IoError("model: kernel_spec.components must be an array");
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const std::string at = "kernel_spec.components[" + std::to_string(i) + "]";
    SMComponent c;
    c.weight = detail::number(field(comps[i], "weight", at), at + ".weight");
    c.lengthscales = detail::vec_from_json(field(comps[i], "lengthscales", at), at + ".lengthscales");
    c.inverse_periods = detail::vec_from_json(field(comps[i], "inverse_periods", at), at + ".inverse_periods");
    m.spec.components.push_back(std::move(c));
  }

  const json& st = field(doc, "variational_state", "model");
  const std::string at = "variational_state";
  VariationalState& s = m.state;
  const json& k = field(st, "features_per_component", at);
  if (!k.is_number_integer()) throw IoError("model: variational_state.features_per_component must be an integer");
  s.features_per_component = k.get<Index>();
  s.inducing_inputs = detail::mat_from_json(field(st, "inducing_inputs", at), at + ".inducing_inputs");
  s.freq_means = detail::mat_from_json(field(st, "freq_means", at), at + ".freq_means");
  s.freq_vars = detail::mat_from_json(field(st, "freq_vars", at), at + ".freq_vars");
  const json& ph = field(st, "phases", at);
  const json& mode = field(ph, "mode", at + ".phases");
  if (mode == "variational")
    s.phases = VariationalPhases{detail::vec_from_json(field(ph, "lower", at + ".phases"), at + ".phases.lower"),
                                 detail::vec_from_json(field(ph, "upper", at + ".phases"), at + ".phases.upper")};
  else if (mode == "fixed")
    s.phases = FixedPhases{detail::vec_from_json(field(ph, "values", at + ".phases"), at + ".phases.values")};
  else
    throw IoError("model: variational_state.phases.mode must be \"variational\" or \"fixed\"");
  s.coeff_means = detail::mat_from_json(field(st, "coeff_means", at), at + ".coeff_means");
  s.coeff_vars = detail::mat_from_json(field(st, "coeff_vars", at), at + ".coeff_vars");
  s.noise_precision = detail::number(field(st, "noise_precision", at), at + ".noise_precision");

  const json& meta = field(doc, "metadata", "model");
  m.metadata.seed = field(meta, "seed", "metadata").get<std::uint64_t>();
  m.metadata.iterations = field(meta, "iterations", "metadata").get<Index>();
  m.metadata.bound_kind = field(meta, "bound_kind", "metadata").get<std::string>();
  bound_type_from_string(m.metadata.bound_kind);  // validates
  if (meta.contains("method")) m.metadata.method = meta.at("method").get<std::string>();
  if (meta.contains("standardization")) {
    const json& sd = meta.at("standardization");
    Standardization z;
    z.x_scale = detail::vec_from_json(field(sd, "x_scale", "metadata.standardization"), "x_scale").transpose();
    z.y_scale = detail::vec_from_json(field(sd, "y_scale", "metadata.standardization"), "y_scale").transpose();
    if ((z.x_scale.array() <= 0.0).any() || (z.y_scale.array() <= 0.0).any())
      throw IoError("model: standardization scales must be > 0");
    m.metadata.standardization = std::move(z);
  }

  try {
    s.validate(m.spec);
  } catch (const ValidationError& e) {
    throw IoError(std::string("model: ") + e.what());
  }
  if (m.metadata.standardization &&
      (m.metadata.standardization->x_scale.size() != s.input_dim() ||
       m.metadata.standardization->y_scale.size() != s.output_dim()))
    throw IoError("model: standardization has the wrong dimensions");

  if (doc.contains("optimal_coefficients")) {
    const json& oc = doc.at("optimal_coefficients");
    CoefficientSolve solve;
    solve.means = detail::mat_from_json(field(oc, "means", "optimal_coefficients"), "optimal_coefficients.means");
    solve.covariance =
        detail::mat_from_json(field(oc, "covariance", "optimal_coefficients"), "optimal_coefficients.covariance");
    solve.noise_precision = s.noise_precision;
    const Index lk = s.num_features();
    if (solve.means.rows() != lk || solve.means.cols() != s.output_dim() || solve.covariance.rows() != lk ||
        solve.covariance.cols() != lk)
      throw IoError("model: optimal_coefficients has the wrong shape");
    m.solve = std::move(solve);
  }
  return m;
}

inline void save_model(const std::string& path, const ModelFile& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << model_to_string(m);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_string(ss.str());
}

}  // namespace vssgp

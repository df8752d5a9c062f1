#include "refprior/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "refprior/errors.hpp"

namespace refprior {

namespace {

std::string trimmed(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Full-token numeric parse, locale independent. Inputs must be finite;
// "inf"/"nan" tokens are treated as non-numeric cells.
bool parse_cell(const std::string& cell, double* out) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, *out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(*out);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) cells.push_back(trimmed(cur));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

Eigen::MatrixXd read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open file: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  std::size_t width = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string body = trimmed(line);
    if (body.empty()) continue;
    std::vector<std::string> cells = split_row(body);
    std::vector<double> row(cells.size());
    bool all_numeric = true;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!parse_cell(cells[j], &row[j])) {
        all_numeric = false;
        break;
      }
    }
    if (!all_numeric) {
      if (header_allowed) {  // first content line may be column names
        header_allowed = false;
        continue;
      }
      throw input_error(path + ":" + std::to_string(line_no) +
                        ": cell is not a number");
    }
    header_allowed = false;
    if (width == 0) width = row.size();
    if (row.size() != width)
      throw input_error(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " columns, got " +
                        std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw input_error(path + ": no data rows");

  Eigen::MatrixXd mat(static_cast<long>(rows.size()), static_cast<long>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j)
      mat(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  return mat;
}

Eigen::VectorXd read_csv_vector(const std::string& path) {
  Eigen::MatrixXd mat = read_csv_matrix(path);
  if (mat.cols() != 1)
    throw input_error(path + ": expected a single column, got " +
                      std::to_string(mat.cols()));
  return mat.col(0);
}

std::string format_numeric(double value) {
  if (std::isnan(value))
    throw consistency_error("refusing to serialize NaN");
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& values) {
  if (static_cast<long>(columns.size()) != values.cols())
    throw consistency_error("csv header width does not match the value matrix");
  std::ostringstream out;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (j) out << ',';
    out << columns[j];
  }
  out << '\n';
  for (long i = 0; i < values.rows(); ++i) {
    for (long j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      out << format_numeric(values(i, j));
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write file: " + path);
  out << content;
  if (!out) throw input_error("write failed: " + path);
}

std::string kernel_spec_to_json(const KernelSpec& spec) {
  nlohmann::json obj;
  obj["family"] = to_string(spec.family);
  if (spec.family == KernelFamily::power_exponential) obj["q"] = spec.q;
  if (spec.family == KernelFamily::rational_quadratic ||
      spec.family == KernelFamily::matern)
    obj["nu"] = spec.nu;
  if (spec.family == KernelFamily::matern)
    obj["parametrization"] =
        spec.parametrization == MaternVariant::hw94 ? "hw94" : "bdos";
  return obj.dump();
}

KernelSpec kernel_spec_from_json(const std::string& text) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("kernel spec is not valid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw input_error("kernel spec must be a JSON object");

  KernelSpec spec;
  bool have_family = false;
  for (const auto& [key, value] : obj.items()) {
    if (key == "family") {
      if (!value.is_string())
        throw input_error("kernel spec field 'family' must be a string");
      spec.family = family_from_string(value.get<std::string>());
      have_family = true;
    } else if (key == "q") {
      if (!value.is_number())
        throw input_error("kernel spec field 'q' must be a number");
      spec.q = value.get<double>();
    } else if (key == "nu") {
      if (!value.is_number())
        throw input_error("kernel spec field 'nu' must be a number");
      spec.nu = value.get<double>();
    } else if (key == "parametrization") {
      std::string tag = value.is_string() ? value.get<std::string>() : "";
      if (tag == "hw94")
        spec.parametrization = MaternVariant::hw94;
      else if (tag == "bdos")
        spec.parametrization = MaternVariant::bdos;
      else
        throw input_error("kernel spec field 'parametrization' must be "
                          "\"hw94\" or \"bdos\"");
    } else {
      throw input_error("unknown kernel spec field: " + key);
    }
  }
  if (!have_family) throw input_error("kernel spec is missing 'family'");
  validate_kernel(spec);
  return spec;
}

int log_verbosity() {
  static const int level = [] {
    const char* raw = std::getenv("REFPRIOR_LOG");
    if (raw == nullptr || *raw == '\0') return 0;
    char* end = nullptr;
    long v = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || v < 0) return 0;
    return static_cast<int>(v > 2 ? 2 : v);
  }();
  return level;
}

void log_note(int level, const std::string& message) {
  if (level > log_verbosity()) return;
  std::fprintf(stderr, "[refprior] %s\n", message.c_str());
}

}  // namespace refprior

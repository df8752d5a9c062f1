#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <string>

#include "refprior/errors.hpp"
#include "refprior/io.hpp"

using namespace refprior;
namespace fs = std::filesystem;

namespace {

// Scratch directory shared by the file-round-trip cases, wiped per test.
struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / "refprior_io_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("csv matrices parse with and without a header") {
  Scratch tmp;
  write_text_file(tmp.file("bare.csv"), "0,1\n2,3.5\n-1,4e-2\n");
  Eigen::MatrixXd bare = read_csv_matrix(tmp.file("bare.csv"));
  REQUIRE(bare.rows() == 3);
  REQUIRE(bare.cols() == 2);
  CHECK(bare(1, 1) == 3.5);
  CHECK(bare(2, 1) == 4e-2);

  write_text_file(tmp.file("named.csv"), "x1,x2\r\n0, 1\n\n 2 ,3.5\n");
  Eigen::MatrixXd named = read_csv_matrix(tmp.file("named.csv"));
  REQUIRE(named.rows() == 2);
  REQUIRE(named.cols() == 2);
  CHECK(named(1, 0) == 2.0);
}

TEST_CASE("csv rejects ragged rows, bad cells and empty files") {
  Scratch tmp;
  write_text_file(tmp.file("ragged.csv"), "1,2\n3\n");
  CHECK_THROWS_AS(read_csv_matrix(tmp.file("ragged.csv")), input_error);

  write_text_file(tmp.file("bad.csv"), "1,2\n3,oops\n");
  CHECK_THROWS_WITH_AS(read_csv_matrix(tmp.file("bad.csv")),
                       doctest::Contains(":2:"), input_error);

  write_text_file(tmp.file("empty.csv"), "just,a,header\n");
  CHECK_THROWS_AS(read_csv_matrix(tmp.file("empty.csv")), input_error);
  CHECK_THROWS_AS(read_csv_matrix(tmp.file("missing.csv")), input_error);
}

TEST_CASE("observation vectors must be a single column") {
  Scratch tmp;
  write_text_file(tmp.file("y.csv"), "y\n0.5\n-2\n7\n");
  Eigen::VectorXd y = read_csv_vector(tmp.file("y.csv"));
  REQUIRE(y.size() == 3);
  CHECK(y(1) == -2.0);

  write_text_file(tmp.file("wide.csv"), "1,2\n3,4\n");
  CHECK_THROWS_AS(read_csv_vector(tmp.file("wide.csv")), input_error);
}

TEST_CASE("numeric tokens round-trip and never contain NaN") {
  CHECK(format_numeric(0.0) == "0");
  CHECK(format_numeric(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_numeric(std::numeric_limits<double>::infinity()) == "inf");
  CHECK_THROWS_AS(format_numeric(std::nan("")), consistency_error);

  const double probes[] = {1.0 / 3.0, -2.718281828459045e-9, 6.02e23,
                           5e-324, -0.1, 123456789.123456789};
  for (double v : probes) {
    std::string token = format_numeric(v);
    CHECK(std::strtod(token.c_str(), nullptr) == v);
  }
}

TEST_CASE("csv writing round-trips through the reader") {
  Scratch tmp;
  Eigen::MatrixXd values(2, 3);
  values << 0.1, -std::numeric_limits<double>::infinity(), 3.0,
      1e-300, 2.5, -7.25;
  // The -inf token is not numeric, so reading it back must fail loudly
  // rather than squash it to a number.
  write_csv(tmp.file("out.csv"), {"a", "b", "c"}, values);
  CHECK_THROWS_AS(read_csv_matrix(tmp.file("out.csv")), input_error);

  Eigen::MatrixXd finite = values;
  finite(0, 1) = -1e308;
  write_csv(tmp.file("finite.csv"), {"a", "b", "c"}, finite);
  Eigen::MatrixXd back = read_csv_matrix(tmp.file("finite.csv"));
  CHECK((back - finite).cwiseAbs().maxCoeff() == 0.0);

  std::string text = read_text_file(tmp.file("finite.csv"));
  CHECK(text.substr(0, 6) == "a,b,c\n");

  CHECK_THROWS_AS(write_csv(tmp.file("w.csv"), {"a"}, finite),
                  consistency_error);
}

TEST_CASE("kernel specs serialize with fixed field names") {
  KernelSpec se;
  se.family = KernelFamily::squared_exponential;
  CHECK(kernel_spec_to_json(se) == "{\"family\":\"squared_exponential\"}");

  KernelSpec mat;
  mat.family = KernelFamily::matern;
  mat.nu = 1.5;
  mat.parametrization = MaternVariant::bdos;
  std::string text = kernel_spec_to_json(mat);
  CHECK(text.find("\"nu\":1.5") != std::string::npos);
  CHECK(text.find("\"parametrization\":\"bdos\"") != std::string::npos);
  CHECK(text.find("\"q\"") == std::string::npos);

  KernelSpec back = kernel_spec_from_json(text);
  CHECK(back.family == KernelFamily::matern);
  CHECK(back.nu == 1.5);
  CHECK(back.parametrization == MaternVariant::bdos);

  KernelSpec pe;
  pe.family = KernelFamily::power_exponential;
  pe.q = 1.3;
  KernelSpec pe_back = kernel_spec_from_json(kernel_spec_to_json(pe));
  CHECK(pe_back.family == KernelFamily::power_exponential);
  CHECK(pe_back.q == 1.3);
}

TEST_CASE("kernel spec parsing rejects malformed input") {
  CHECK_THROWS_AS(kernel_spec_from_json("not json"), input_error);
  CHECK_THROWS_AS(kernel_spec_from_json("[1,2]"), input_error);
  CHECK_THROWS_AS(kernel_spec_from_json("{\"nu\":1.0}"), input_error);
  CHECK_THROWS_AS(kernel_spec_from_json("{\"family\":\"se\",\"typo\":1}"),
                  input_error);
  CHECK_THROWS_AS(
      kernel_spec_from_json("{\"family\":\"matern\",\"parametrization\":\"x\"}"),
      input_error);
  CHECK_THROWS_AS(
      kernel_spec_from_json("{\"family\":\"rational_quadratic\",\"nu\":-1}"),
      parameter_error);

  // Short family aliases parse, canonical names are emitted.
  KernelSpec alias = kernel_spec_from_json("{\"family\":\"se\"}");
  CHECK(kernel_spec_to_json(alias) == "{\"family\":\"squared_exponential\"}");
}

TEST_CASE("logging is gated by the environment verbosity") {
  int level = log_verbosity();
  CHECK(level >= 0);
  CHECK(level <= 2);
  log_note(2, "invisible unless REFPRIOR_LOG=2");
}

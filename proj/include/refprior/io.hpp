#ifndef REFPRIOR_IO_HPP
#define REFPRIOR_IO_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "refprior/kernels.hpp"

namespace refprior {

// Numeric CSV table. The first line is treated as a header when any of its
// cells fails to parse as a number; otherwise it is data. Cells are comma
// separated, surrounding whitespace is ignored, blank lines are skipped.
// Ragged rows or unparsable cells throw input_error naming the line.
Eigen::MatrixXd read_csv_matrix(const std::string& path);

// Single-column variant for observation vectors. A multi-column file is an
// error rather than a silent first-column pick.
Eigen::VectorXd read_csv_vector(const std::string& path);

// One numeric cell of an emitted report: 17 significant digits for finite
// values (round-trip exact), the literal tokens "inf" / "-inf" for
// infinities. NaN throws consistency_error, because a NaN reaching a report
// means an upstream contract was already broken.
std::string format_numeric(double value);

// CSV emission with one header row; every cell goes through format_numeric.
// The column count must match the value matrix.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& values);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Kernel specification as a JSON object with fixed field names:
//   {"family": ..., "q": ..., "nu": ..., "parametrization": ...}
// q appears only for power_exponential, nu only for rational_quadratic and
// matern, parametrization only for matern. Parsing rejects unknown keys and
// out-of-domain parameters.
std::string kernel_spec_to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(const std::string& text);

// Verbosity from the REFPRIOR_LOG environment variable: 0 or unset is
// silent, 1 progress notes, 2 chatty. Read once per process.
int log_verbosity();

// Writes "[refprior] message" to stderr when level <= log_verbosity().
void log_note(int level, const std::string& message);

}  // namespace refprior

#endif  // REFPRIOR_IO_HPP

// Shared types and small utilities used across the rankcore library.

#ifndef RANKCORE_COMMON_HPP
#define RANKCORE_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rankcore {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries file, row and column.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Splits a master seed into independent per-stream seeds (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Shortest decimal text that parses back to the same double.
std::string format_exact(double v);
/// Decimal text with `digits` significant digits.
std::string format_sig(double v, int digits);

/// Writes a dense matrix as comma-separated rows with no header.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
/// Parses a dense numeric CSV. Throws ParseError with row/column on bad cells.
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Writes `contents` to a temp file next to `path` then renames it into place.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

bool all_finite(const Matrix& m);

/// Strict upper triangle of a square matrix, row-major order.
Vector upper_triangle(const Matrix& m);

/// Pearson correlation of two equal-length vectors; NaN when either is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// Tie-averaged ranks (1-based).
std::vector<double> average_ranks(std::span<const double> v);

namespace log {
void set_quiet(bool quiet);
/// Line-delimited JSON record on stderr.
void info(std::string_view stage, std::string_view message);
void warn(std::string_view stage, std::string_view message);
}  // namespace log

}  // namespace rankcore

#endif  // RANKCORE_COMMON_HPP

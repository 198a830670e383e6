// Statistical pairwise interaction (SPI) operators: each maps an N x T sample
// to an N x N functional-connectivity matrix.

#ifndef RANKCORE_SPI_HPP
#define RANKCORE_SPI_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rankcore/common.hpp"
#include "rankcore/dataset.hpp"

namespace rankcore::spi {

enum class Kind {
  covariance,
  precision,
  correlation,
  rank_correlation,
  cross_correlation,
  distance,
  spectral,
  phase,
  information
};

std::string_view kind_name(Kind k);

struct SpiOperator {
  std::string name;
  Kind kind = Kind::correlation;
  std::map<std::string, double> params;

  bool operator==(const SpiOperator&) const = default;
};

using ParamOverrides = std::map<std::string, std::map<std::string, double>>;

struct FcMatrix {
  std::string operator_name;
  std::string sample_id;
  Matrix values;
  /// Set when an entry had to be sanitized (e.g. a zero-variance row).
  bool flagged = false;
  std::vector<std::string> warnings;
};

/// The 20-operator default registry, in a fixed order. Throws on unknown
/// operator names or unknown parameter keys in `overrides`.
std::vector<SpiOperator> registry(const ParamOverrides& overrides = {});

/// Looks an operator up by name in the (overridden) registry.
SpiOperator find_operator(const std::string& name, const ParamOverrides& overrides = {});

/// Subset of the registry in the requested order.
std::vector<SpiOperator> select_operators(const std::vector<std::string>& names,
                                          const ParamOverrides& overrides = {});

/// Minimum series length an operator accepts.
Eigen::Index min_timepoints(const SpiOperator& op);

FcMatrix compute_fc(const SpiOperator& op, const dataset::TimeSeriesSample& x);
FcMatrix compute_fc(const SpiOperator& op, const Matrix& x, const std::string& sample_id = {});

// Individual estimators, exposed for testing.
double kendall_tau_b(std::span<const double> a, std::span<const double> b);

/// Summary of a compute_all run.
struct FcStoreSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::vector<std::string> failures;  // "<operator>/<sample>: reason"
};

struct ComputeOptions {
  bool force = false;
  int jobs = 0;  // 0 = OpenMP default
};

/// Writes `<out>/<operator>/<sample_id>.csv` for every pair plus `<out>/index.json`.
FcStoreSummary compute_all(const dataset::Dataset& d, const std::vector<SpiOperator>& ops,
                           const std::filesystem::path& out, const ComputeOptions& opts = {});

/// Read side of an FC store directory.
class FcStore {
 public:
  struct SampleInfo {
    std::string sample_id;
    std::string subject_id;
    int class_label = 0;
  };

  explicit FcStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& operators() const { return operators_; }
  const std::vector<SampleInfo>& samples() const { return samples_; }
  const SampleInfo& sample(const std::string& id) const;
  bool contains(const std::string& op, const std::string& sample_id) const;
  Matrix load(const std::string& op, const std::string& sample_id) const;

 private:
  std::filesystem::path dir_;
  std::vector<std::string> operators_;
  std::vector<SampleInfo> samples_;
  std::map<std::string, std::size_t> sample_index_;
  std::map<std::string, std::vector<bool>> completed_;
};

std::filesystem::path fc_file(const std::filesystem::path& out, const std::string& op, const std::string& sample_id);

}  // namespace rankcore::spi

#endif  // RANKCORE_SPI_HPP

// Structural Perturbation Score: mean squared Frobenius change of a sample's
// fused attention between consecutive snapshots.

#ifndef RANKCORE_SPS_HPP
#define RANKCORE_SPS_HPP

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rankcore/common.hpp"

namespace rankcore::sps {

struct SpsRecord {
  std::map<std::string, double> scores;
  /// Number of snapshot transitions averaged over.
  int epochs = 0;
  std::string provenance;

  bool operator==(const SpsRecord&) const = default;
};

/// Streaming accumulator. Keeps only the previous snapshot per sample.
class SpsAccumulator {
 public:
  /// Adds one epoch of snapshots. The first call only initializes.
  void update(const std::map<std::string, Matrix>& snapshots);

  /// score = running_sum / (epochs_seen - 1). Needs at least two snapshots.
  SpsRecord finalize() const;

  int epochs_seen() const { return epochs_seen_; }
  const std::map<std::string, double>& running_sums() const { return sums_; }
  /// Per-sample delta of the most recent update (0 after the first).
  const std::map<std::string, double>& last_deltas() const { return last_; }
  double mean_last_delta() const;

 private:
  int epochs_seen_ = 0;
  std::map<std::string, Matrix> previous_;
  std::map<std::string, double> sums_;
  std::map<std::string, double> last_;
};

/// Running means of a delta stream evaluated at each checkpoint length.
std::vector<double> consistency_trace(std::span<const double> deltas, std::span<const std::size_t> checkpoints);

/// `sample_id,sps,epochs` with 12 significant digits.
void write_sps_csv(const SpsRecord& r, const std::filesystem::path& path);
SpsRecord read_sps_csv(const std::filesystem::path& path);

}  // namespace rankcore::sps

#endif  // RANKCORE_SPS_HPP

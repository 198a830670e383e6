// Multivariate time-series datasets: synthetic generation, windowing and
// directory persistence.

#ifndef RANKCORE_DATASET_HPP
#define RANKCORE_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/common.hpp"

namespace rankcore::dataset {

/// One segment: N regions (rows) by T time points (columns).
struct TimeSeriesSample {
  std::string sample_id;
  std::string subject_id;
  int class_label = 0;
  std::string site_id;
  Matrix data;

  Eigen::Index n_regions() const { return data.rows(); }
  Eigen::Index n_timepoints() const { return data.cols(); }
  bool operator==(const TimeSeriesSample& o) const;
};

struct Dataset {
  std::string name;
  nlohmann::json provenance;
  std::vector<TimeSeriesSample> samples;

  std::size_t size() const { return samples.size(); }
  Eigen::Index n_regions() const { return samples.empty() ? 0 : samples.front().n_regions(); }
  const TimeSeriesSample& at(const std::string& sample_id) const;
  std::vector<std::string> subject_ids() const;  // sorted, unique

  /// Checks the sample and dataset invariants; throws Error on violation.
  void validate() const;
  bool operator==(const Dataset& o) const;
};

/// Planted-prototype generator settings.
struct SynthConfig {
  int n_regions = 16;
  int t_total = 210;
  int window_len = 70;
  int stride = 35;
  int n_subjects = 60;
  int n_prototypes = 4;
  double prototype_separation = 0.6;
  double subject_jitter = 0.1;
  double noise_sigma = 0.3;
  double ar_coeff = 0.3;
  /// prototype -> class; empty means prototype % 2.
  std::map<int, int> class_map;
  std::uint64_t seed = 7;

  void validate() const;
  int class_of(int prototype) const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Eigenvalues clipped at `floor`, then rescaled to unit diagonal.
Matrix nearest_correlation_pd(const Matrix& c, double floor = 1e-6);

/// The K block-structured prototype correlation matrices of a config.
std::vector<Matrix> prototype_correlations(const SynthConfig& cfg);

/// Full-length series, one sample per subject (sample_id == subject_id).
Dataset generate_synthetic(const SynthConfig& cfg);

/// Sliding windows; trailing partial windows are dropped.
Dataset window_dataset(const Dataset& raw, int window_len, int stride);

void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace rankcore::dataset

#endif  // RANKCORE_DATASET_HPP

// Core-set selectors: lowest-SPS top-k, density-balanced sampling over the
// stable pool, and the random / k-means baselines.

#ifndef RANKCORE_SELECTION_HPP
#define RANKCORE_SELECTION_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/common.hpp"
#include "rankcore/spi.hpp"
#include "rankcore/sps.hpp"

namespace rankcore::selection {

struct CoreSet {
  std::vector<std::string> sample_ids;
  std::string method;
  double ratio = 0.0;
  nlohmann::json params = nlohmann::json::object();
  std::string provenance;

  nlohmann::json to_json() const;
  static CoreSet from_json(const nlohmann::json& j);
};

void write_coreset(const CoreSet& c, const std::filesystem::path& path);
CoreSet read_coreset(const std::filesystem::path& path);

/// round(ratio * n); throws unless ratio is in (0, 1].
std::size_t coreset_size(double ratio, std::size_t n);

/// Linear-interpolation empirical quantile (R type 7).
double quantile_type7(std::vector<double> values, double q);

/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5), floored at 1e-6.
double silverman_bandwidth(std::span<const double> values);

/// Gaussian KDE at one query point.
double kde_density(std::span<const double> values, double bandwidth, double query);

/// Draws m distinct indices; each draw is proportional to the remaining weights.
std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t m, Rng& rng);

CoreSet select_topk_sps(const sps::SpsRecord& sps, std::size_t m);

struct DensityOptions {
  double beta = 0.2;
  double eps_reg = 1e-8;
  /// Non-positive means Silverman's rule.
  double bandwidth = 0.0;
  std::uint64_t seed = 0;
  /// Lower beta to 1 - m/n when the stable pool would be smaller than m.
  bool shrink_beta_to_fit = false;
};

/// Diagnostics of one density-balanced draw.
struct DensityDiagnostics {
  double beta_used = 0.0;
  double threshold = 0.0;
  double bandwidth = 0.0;
  std::vector<std::string> pool;
  std::vector<double> weights;  // normalized, aligned with pool
};

CoreSet select_density_balanced(const sps::SpsRecord& sps, std::size_t m, const DensityOptions& opts,
                                DensityDiagnostics* diag = nullptr);

CoreSet select_random(std::vector<std::string> ids, std::size_t m, std::uint64_t seed);

/// k-means over the rows of `features`; returns the chosen row indices.
std::vector<std::size_t> kmeans_representatives(const Matrix& features, std::size_t k, std::uint64_t seed);

CoreSet select_kmeans(const Matrix& features, std::span<const std::string> ids, std::size_t k, std::uint64_t seed);
/// Features are the strict upper triangles of the reference operator's FCs.
CoreSet select_kmeans(const spi::FcStore& store, const std::string& reference_op, std::size_t k, std::uint64_t seed);

}  // namespace rankcore::selection

#endif  // RANKCORE_SELECTION_HPP

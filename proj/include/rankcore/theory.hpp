// Constructive and Monte-Carlo checks of the method's formal claims. Every
// validator is deterministic per seed and returns a JSON report carrying a
// boolean "pass" plus the numbers behind it.

#ifndef RANKCORE_THEORY_HPP
#define RANKCORE_THEORY_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/common.hpp"
#include "rankcore/dataset.hpp"
#include "rankcore/encoder.hpp"
#include "rankcore/spi.hpp"

namespace rankcore::theory {

/// Shannon entropy (nats) of a non-negative vector that sums to 1.
double entropy(const Eigen::RowVectorXd& p);

/// H row-stochastic N x N heads whose per-row supports are pairwise disjoint.
/// Each head covers max(1, floor(sparsity * N / H)) columns of every row.
std::vector<Matrix> disjoint_heads(int heads, int n, double sparsity, std::uint64_t seed);

/// Support-union and entropy-inflation checks of uniform head averaging.
nlohmann::json validate_interference(int heads, int n, double sparsity, std::uint64_t seed);
nlohmann::json check_interference(std::span<const Matrix> heads);

struct MixtureModel {
  std::vector<Matrix> prototypes;
  std::vector<double> weights;

  void validate() const;
  /// Squared Frobenius distance between prototypes k and l.
  double distance(std::size_t k, std::size_t l) const;
  /// sum_{k,l} w_k w_l D_kl.
  double expected_delta() const;
  double gini() const;
  std::pair<double, double> gini_bounds() const;
};

/// Random K-prototype model with N x N prototypes and Dirichlet(1) weights.
MixtureModel random_mixture(int k, int n, std::uint64_t seed);

nlohmann::json validate_mixture(const MixtureModel& model, std::size_t trials, std::uint64_t seed);

struct ScoreDist {
  enum class Family { uniform, normal };
  Family family = Family::uniform;
  double a = 0.0;  // lower bound or mean
  double b = 1.0;  // upper bound or sd

  static ScoreDist uniform(double lo, double hi) { return {Family::uniform, lo, hi}; }
  static ScoreDist normal(double mean, double sd) { return {Family::normal, mean, sd}; }
  void validate() const;
  double cdf(double x) const;
  double sample(Rng& rng) const;
  double support_lo() const;
  double support_hi() const;
};

struct TwoClusterModel {
  double pi_p = 0.5;
  ScoreDist f_p;
  ScoreDist f_q;
  double ratio = 0.5;

  void validate() const;
  double mixture_cdf(double t) const { return pi_p * f_p.cdf(t) + (1.0 - pi_p) * f_q.cdf(t); }
};

/// Bisection on pi_p F_p(t) + pi_q F_q(t) = ratio.
double solve_tau(const TwoClusterModel& m);

nlohmann::json validate_topk_bias(const TwoClusterModel& m, std::span<const std::size_t> n_grid, std::size_t trials,
                                  std::uint64_t seed);

/// Greedy farthest-point net: number of centers needed so every point lies
/// within `radius` of one (an upper bound on the covering number).
std::size_t greedy_cover_size(std::span<const Matrix> pool, double radius);

/// True when every pool point is within eps of a selected point.
bool is_eps_cover(std::span<const Matrix> pool, std::span<const std::size_t> selected, double eps);

/// `scores` are the SPS values of the pool; sampling uses the density-balanced
/// weights of the selection module.
nlohmann::json validate_epsilon_coverage(std::span<const Matrix> pool, std::span<const double> scores, double eps,
                                         double delta, std::size_t trials, std::uint64_t seed,
                                         double eps_reg = 1e-8);

/// Two tight clusters of N x N matrices with SPS scores around distinct levels.
struct ClusterPool {
  std::vector<Matrix> points;
  std::vector<double> scores;
  double intra_diameter = 0.0;
};
ClusterPool two_cluster_pool(std::size_t per_cluster_a, std::size_t per_cluster_b, int n, std::uint64_t seed);

using PoolFunction = std::function<double(const Matrix&)>;

/// |E_P f - E_{P o proj^-1} f| against lipschitz * eps, computed exactly.
nlohmann::json validate_discrepancy(std::span<const Matrix> pool, std::span<const double> probabilities,
                                    std::span<const std::size_t> projection, const PoolFunction& f, double lipschitz,
                                    double eps);

/// Stationary positive streams with known means.
struct StreamSpec {
  enum class Kind { iid_uniform, ar1_lognormal, two_prototype, constant };
  Kind kind = Kind::iid_uniform;
  double param = 0.0;  // constant value / AR coefficient
  std::string name() const;
  double analytic_mean() const;
  std::vector<double> generate(std::size_t length, std::uint64_t seed) const;
};

nlohmann::json validate_sps_consistency(std::span<const StreamSpec> streams, std::span<const std::size_t> l_grid,
                                        std::size_t replications, std::uint64_t seed);

nlohmann::json validate_universal(const dataset::Dataset& d, std::span<const spi::SpiOperator> ops,
                                  const encoder::FitConfig& cfg);

/// Runs the named validators ("all" for every one) with desk-scale defaults.
nlohmann::json run_validators(const std::string& which, std::uint64_t seed);

}  // namespace rankcore::theory

#endif  // RANKCORE_THEORY_HPP

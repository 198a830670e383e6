#include "doctest.h"
#include "rankcore/spi.hpp"
#include "rankcore/theory.hpp"
#include "test_util.hpp"

using namespace rankcore;
using namespace rankcore::theory;

namespace {

// Heads whose rows are one-hot on column (i + h) mod n.
std::vector<Matrix> one_hot_heads(int heads, int n) {
  std::vector<Matrix> out;
  for (int h = 0; h < heads; ++h) {
    Matrix m = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) m(i, (i + h) % n) = 1.0;
    out.push_back(m);
  }
  return out;
}

MixtureModel two_point(double w0, double w1) {
  MixtureModel m;
  m.prototypes = {Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  m.prototypes[1](0, 0) = 2.0;
  m.weights = {w0, w1};
  return m;
}

}  // namespace

TEST_CASE("two one-hot heads average to ln 2") {
  const auto heads = one_hot_heads(2, 5);
  const auto r = check_interference(heads);
  CHECK(r["avg_entropy"].get<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r["min_head_entropy"].get<double>() == 0.0);
  CHECK(r["entropy_inflation_ok"].get<bool>());
  CHECK(r["support_union_ok"].get<bool>());
}

TEST_CASE("a single head is skipped") {
  const auto r = check_interference(one_hot_heads(1, 4));
  CHECK(r["skipped"].get<bool>());
  CHECK(r["note"].get<std::string>().find("identical heads") != std::string::npos);
}

TEST_CASE("random disjoint heads satisfy both checks") {
  for (int h : {2, 4, 8})
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto heads = disjoint_heads(h, 32, 0.5, s);
      // Oracle: supports really are disjoint and rows stochastic.
      for (Eigen::Index r = 0; r < 32; ++r)
        for (Eigen::Index c = 0; c < 32; ++c) {
          int owners = 0;
          for (const auto& m : heads) owners += m(r, c) > 0.0;
          CHECK(owners <= 1);
        }
      for (const auto& m : heads) CHECK((m.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
      const auto r = validate_interference(h, 32, 0.5, s);
      CHECK(r["pass"].get<bool>());
    }
  CHECK_THROWS_AS(disjoint_heads(8, 4, 1.0, 0), Error);
  CHECK_THROWS_AS(validate_interference(3, 2, 0.5, 0), Error);
}

TEST_CASE("mixture: isotropic two-point model") {
  const auto m = two_point(0.5, 0.5);
  CHECK(m.expected_delta() == 2.0);
  CHECK(m.gini() == 0.5);
  const auto r = validate_mixture(m, 10000, 3);
  CHECK(r["analytic_value"].get<double>() == 2.0);
  CHECK(r["pass"].get<bool>());
  const double se = r["standard_error"].get<double>();
  CHECK(se > 0.0);
  CHECK(std::abs(r["empirical_mean_delta"].get<double>() - 2.0) <= 4.0 * se);
}

TEST_CASE("mixture: pure archetype is exactly zero") {
  const auto r = validate_mixture(two_point(1.0, 0.0), 1000, 1);
  CHECK(r["analytic_value"].get<double>() == 0.0);
  CHECK(r["empirical_mean_delta"].get<double>() == 0.0);
  CHECK(r["pass"].get<bool>());
}

TEST_CASE("mixture: K=3 analytic value inside the Gini bounds") {
  // Oracle: double sum over ordered pairs, computed here independently.
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto m = random_mixture(3, 4, s);
    double expect = 0.0, dmin = 1e300, dmax = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      sq += m.weights[k] * m.weights[k];
      for (std::size_t l = 0; l < 3; ++l) {
        if (k == l) continue;
        const double d = (m.prototypes[k] - m.prototypes[l]).squaredNorm();
        expect += m.weights[k] * m.weights[l] * d;
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
    }
    CHECK(m.expected_delta() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(dmin * (1 - sq) <= expect * (1 + 1e-12));
    CHECK(expect <= dmax * (1 - sq) * (1 + 1e-12));
    CHECK(validate_mixture(m, 2000, s)["bounds_ok"].get<bool>());
  }
}

TEST_CASE("mixture: invalid models") {
  auto m = two_point(0.5, 0.5);
  m.prototypes[1] = m.prototypes[0];
  CHECK_THROWS_AS(validate_mixture(m, 1000, 0), Error);
  CHECK_THROWS_AS(validate_mixture(two_point(0.6, 0.6), 1000, 0), Error);
  CHECK_THROWS_AS(validate_mixture(two_point(0.5, 0.5), 999, 0), Error);
}

TEST_CASE("solve_tau") {
  const TwoClusterModel m{0.5, ScoreDist::uniform(0.0, 1.0), ScoreDist::uniform(0.5, 1.5), 0.5};
  const double tau = solve_tau(m);
  CHECK(std::abs(tau - 0.75) < 1e-9);
  CHECK(std::abs(m.mixture_cdf(tau) - 0.5) < 1e-12);

  // Equal laws: the common quantile.
  const TwoClusterModel same{0.3, ScoreDist::uniform(2.0, 4.0), ScoreDist::uniform(2.0, 4.0), 0.25};
  CHECK(std::abs(solve_tau(same) - 2.5) < 1e-9);
  const TwoClusterModel normal{0.5, ScoreDist::normal(1.0, 2.0), ScoreDist::normal(1.0, 2.0), 0.5};
  CHECK(std::abs(solve_tau(normal) - 1.0) < 1e-9);

  // Small ratios approach the infimum of the support.
  double prev = 1e300;
  for (double rho : {0.1, 0.01, 0.001, 1e-6}) {
    const double t = solve_tau({0.5, ScoreDist::uniform(0.0, 1.0), ScoreDist::uniform(0.5, 1.5), rho});
    CHECK(t < prev);
    prev = t;
  }
  CHECK(prev < 1e-5);
  CHECK(prev >= 0.0);

  CHECK_THROWS_AS(solve_tau({0.5, ScoreDist::uniform(1.0, 1.0), ScoreDist::uniform(0.0, 1.0), 0.5}), Error);
  CHECK_THROWS_AS(solve_tau({1.0, ScoreDist::uniform(0.0, 1.0), ScoreDist::uniform(0.0, 1.0), 0.5}), Error);
}

TEST_CASE("top-k bias on the uniform example") {
  const TwoClusterModel m{0.5, ScoreDist::uniform(0.0, 1.0), ScoreDist::uniform(0.5, 1.5), 0.5};
  const std::size_t grid[] = {1000, 10000};
  const auto r = validate_topk_bias(m, grid, 100, 5);
  CHECK(r["limit"].get<double>() == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(r["delta"].get<double>() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(r["cdf_gap"].get<double>() == doctest::Approx(0.5).epsilon(1e-9));
  const auto& last = r["per_n"].back();
  CHECK(std::abs(last["pi_hat_mean"].get<double>() - 0.75) < 0.01);
  CHECK(std::abs(last["delta_k_mean"].get<double>() - 0.5) < 0.02);
  CHECK(r["concentrating"].get<bool>());
}

TEST_CASE("top-k without separation has no bias") {
  const TwoClusterModel m{0.4, ScoreDist::normal(0.0, 1.0), ScoreDist::normal(0.0, 1.0), 0.3};
  const std::size_t grid[] = {2000};
  const auto r = validate_topk_bias(m, grid, 200, 9);
  CHECK(r["hypothesis_violated"].get<bool>());
  CHECK(r["delta"].get<double>() == doctest::Approx(0.0).epsilon(1e-9));
  const auto& row = r["per_n"][0];
  // Hypergeometric fraction: mean pi_p with sd well under 0.02 at k = 600.
  CHECK(std::abs(row["pi_hat_mean"].get<double>() - 0.4) < 4.0 * row["pi_hat_std"].get<double>() / std::sqrt(200.0));
}

TEST_CASE("greedy cover and cover predicate") {
  std::vector<Matrix> pool;
  for (int i = 0; i < 5; ++i) pool.push_back(Matrix::Constant(1, 1, i));
  CHECK(greedy_cover_size(pool, 10.0) == 1);
  CHECK(greedy_cover_size(pool, 0.5) == 5);
  CHECK(greedy_cover_size(pool, 1.0) <= 3);
  const std::vector<std::size_t> ends = {0, 4};
  CHECK_FALSE(is_eps_cover(pool, ends, 1.0));
  CHECK(is_eps_cover(pool, ends, 2.0));
}

TEST_CASE("coverage on the two-cluster pool") {
  const auto pool = two_cluster_pool(30, 10, 6, 7);
  const auto r = validate_epsilon_coverage(pool.points, pool.scores, pool.intra_diameter, 0.1, 200, 7);
  CHECK(r["N_eps"].get<std::size_t>() == 2);
  CHECK(r["empirical_coverage"].get<double>() >= 0.9 - 3.0 * std::sqrt(0.09 / 200.0));
  CHECK(r["pass"].get<bool>());
  // Selecting everything always covers.
  const auto& curve = r["curve"];
  CHECK(curve.back()["m"].get<std::size_t>() == 40);
  CHECK(curve.back()["coverage"].get<double>() == 1.0);
}

TEST_CASE("coverage with a radius beyond the diameter") {
  const auto pool = two_cluster_pool(5, 5, 3, 2);
  const auto r = validate_epsilon_coverage(pool.points, pool.scores, 100.0, 0.1, 50, 2);
  CHECK(r["N_eps"].get<std::size_t>() == 1);
  for (const auto& row : r["curve"]) CHECK(row["coverage"].get<double>() == 1.0);
  CHECK_THROWS_AS(validate_epsilon_coverage(pool.points, pool.scores, 0.0, 0.1, 50, 2), Error);
}

TEST_CASE("discrepancy") {
  const auto pool = two_cluster_pool(6, 6, 3, 4);
  const std::size_t n = pool.points.size();
  const std::vector<double> probs(n, 1.0 / static_cast<double>(n));
  const Matrix anchor = Matrix::Constant(3, 3, 0.4);
  const PoolFunction dist = [&](const Matrix& a) { return (a - anchor).norm(); };

  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  CHECK(validate_discrepancy(pool.points, probs, identity, dist, 1.0, 0.0)["discrepancy"].get<double>() == 0.0);

  std::vector<std::size_t> proj(n);
  for (std::size_t i = 0; i < n; ++i) proj[i] = i < 6 ? 5 : 6;
  const double eps = pool.intra_diameter;
  const auto constant = validate_discrepancy(pool.points, probs, proj, [](const Matrix&) { return 3.0; }, 0.0, eps);
  CHECK(constant["discrepancy"].get<double>() == 0.0);
  CHECK(constant["pass"].get<bool>());

  const auto r = validate_discrepancy(pool.points, probs, proj, dist, 1.0, eps);
  double e_full = 0.0, e_proj = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    e_full += probs[i] * dist(pool.points[i]);
    e_proj += probs[i] * dist(pool.points[proj[i]]);
  }
  CHECK(r["discrepancy"].get<double>() == doctest::Approx(std::abs(e_full - e_proj)).epsilon(1e-14));
  CHECK(r["discrepancy"].get<double>() <= eps);
  CHECK(r["pass"].get<bool>());

  // Projecting across clusters violates the radius.
  proj[0] = 11;
  CHECK_THROWS_AS(validate_discrepancy(pool.points, probs, proj, dist, 1.0, eps), Error);
}

TEST_CASE("consistency streams") {
  const StreamSpec streams[] = {{StreamSpec::Kind::iid_uniform, 0.0},
                                {StreamSpec::Kind::ar1_lognormal, 0.5},
                                {StreamSpec::Kind::two_prototype, 0.0},
                                {StreamSpec::Kind::constant, 0.37}};
  const std::size_t grid[] = {10, 100, 1000, 10000};
  const auto r = validate_sps_consistency(streams, grid, 20, 8);
  CHECK(r["pass"].get<bool>());
  CHECK(r["streams"][0]["analytic_mean"].get<double>() == 1.0);
  CHECK(r["streams"][2]["analytic_mean"].get<double>() == 2.0);
  for (double v : r["streams"][3]["running_mean"].get<std::vector<double>>()) CHECK(v == 0.37);
  CHECK(r["streams"][0]["final_relative_error"].get<double>() < 0.05);
}

TEST_CASE("universal validator table") {
  const auto d = testutil::small_dataset(8, 3, 6);
  const auto ops = spi::select_operators({"pearson", "cov_empirical", "spearman", "pdist_euclidean"});
  encoder::FitConfig cfg;
  cfg.max_epochs = 3;
  const auto r = validate_universal(d, ops, cfg);
  REQUIRE(r["table"].size() == 4);
  for (const auto& row : r["table"]) {
    CHECK(row.contains("mse_start"));
    CHECK(row.contains("mse_end"));
    CHECK(row.contains("mse_test"));
    CHECK(row["mse_end"].get<double>() >= 0.0);
  }
  const auto three = spi::select_operators({"pearson", "cov_empirical", "spearman"});
  CHECK_THROWS_AS(validate_universal(d, three, cfg), Error);
}

TEST_CASE("validators are deterministic per seed") {
  CHECK(run_validators("mixture", 4).dump() == run_validators("mixture", 4).dump());
  CHECK(run_validators("discrepancy", 4).dump() == run_validators("discrepancy", 4).dump());
  CHECK_THROWS_AS(run_validators("nonsense", 0), Error);
}

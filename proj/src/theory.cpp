#include "rankcore/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rankcore/kernels.hpp"
#include "rankcore/selection.hpp"
#include "rankcore/sps.hpp"

namespace rankcore::theory {

double entropy(const Eigen::RowVectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  return h;
}

std::vector<Matrix> disjoint_heads(int heads, int n, double sparsity, std::uint64_t seed) {
  if (heads < 1 || n < 1) throw Error("interference: heads and n must be >= 1");
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw Error("interference: sparsity must be in (0, 1]");
  const int width = std::max(1, static_cast<int>(std::floor(sparsity * n / heads)));
  if (width * heads > n) throw Error("interference: cannot fit " + std::to_string(heads) + " disjoint supports in " +
                                     std::to_string(n) + " columns");
  Rng rng(derive_seed(seed, 31));
  std::uniform_real_distribution<double> mass(0.1, 1.0);
  std::vector<Matrix> out(static_cast<std::size_t>(heads), Matrix::Zero(n, n));
  std::vector<int> cols(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    for (int h = 0; h < heads; ++h) {
      auto& m = out[static_cast<std::size_t>(h)];
      for (int c = 0; c < width; ++c) m(r, cols[static_cast<std::size_t>(h * width + c)]) = mass(rng);
      m.row(r) /= m.row(r).sum();
    }
  }
  return out;
}

nlohmann::json check_interference(std::span<const Matrix> heads) {
  nlohmann::json rep = {{"heads", heads.size()}};
  if (heads.empty()) throw Error("interference: no heads");
  const Eigen::Index n = heads[0].rows();
  rep["n"] = n;
  if (heads.size() < 2) {
    rep["skipped"] = true;
    rep["note"] = "identical heads: a single head leaves nothing to average";
    rep["pass"] = true;
    return rep;
  }
  Matrix mean = Matrix::Zero(n, heads[0].cols());
  for (const auto& h : heads) mean += h;
  mean /= static_cast<double>(heads.size());

  bool support_ok = true, inflation_ok = true;
  double min_head = std::numeric_limits<double>::infinity();
  double avg = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    double row_min = std::numeric_limits<double>::infinity();
    for (const auto& h : heads) row_min = std::min(row_min, entropy(h.row(r)));
    for (Eigen::Index c = 0; c < mean.cols(); ++c) {
      bool any = false;
      for (const auto& h : heads) any |= h(r, c) > 0.0;
      support_ok &= (mean(r, c) > 0.0) == any;
    }
    const double fused = entropy(mean.row(r));
    inflation_ok &= fused > row_min;
    min_head = std::min(min_head, row_min);
    avg += fused;
  }
  rep["support_union_ok"] = support_ok;
  rep["entropy_inflation_ok"] = inflation_ok;
  rep["min_head_entropy"] = min_head;
  rep["avg_entropy"] = avg / static_cast<double>(n);
  rep["skipped"] = false;
  rep["pass"] = support_ok && inflation_ok;
  return rep;
}

nlohmann::json validate_interference(int heads, int n, double sparsity, std::uint64_t seed) {
  if (heads < 1) throw Error("interference: heads must be >= 1");
  if (n < heads) throw Error("interference: n must be >= heads");
  auto rep = check_interference(disjoint_heads(heads, n, sparsity, seed));
  rep["seed"] = seed;
  rep["sparsity"] = sparsity;
  return rep;
}

void MixtureModel::validate() const {
  if (prototypes.empty() || prototypes.size() != weights.size()) throw Error("mixture: prototype/weight mismatch");
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("mixture: negative weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("mixture: weights must sum to 1");
  for (std::size_t k = 0; k < prototypes.size(); ++k)
    for (std::size_t l = k + 1; l < prototypes.size(); ++l)
      if (!(distance(k, l) > 0.0)) throw Error("mixture: degenerate prototypes (D_kl = 0)");
}

double MixtureModel::distance(std::size_t k, std::size_t l) const {
  return (prototypes.at(k) - prototypes.at(l)).squaredNorm();
}

double MixtureModel::expected_delta() const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k)
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (k != l) s += weights[k] * weights[l] * distance(k, l);
  return s;
}

double MixtureModel::gini() const {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return 1.0 - s;
}

std::pair<double, double> MixtureModel::gini_bounds() const {
  if (prototypes.size() < 2) return {0.0, 0.0};
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < prototypes.size(); ++k)
    for (std::size_t l = k + 1; l < prototypes.size(); ++l) {
      lo = std::min(lo, distance(k, l));
      hi = std::max(hi, distance(k, l));
    }
  return {lo * gini(), hi * gini()};
}

MixtureModel random_mixture(int k, int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 41));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  MixtureModel m;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    Matrix p(n, n);
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = normal(rng);
    m.prototypes.push_back(p);
    m.weights.push_back(expo(rng));
    total += m.weights.back();
  }
  for (double& w : m.weights) w /= total;
  return m;
}

nlohmann::json validate_mixture(const MixtureModel& model, std::size_t trials, std::uint64_t seed) {
  model.validate();
  if (trials < 1000) throw Error("mixture: need at least 1000 trials");
  Rng rng(derive_seed(seed, 42));
  std::discrete_distribution<std::size_t> pick(model.weights.begin(), model.weights.end());
  std::vector<double> deltas(trials);
  std::size_t prev = pick(rng);
  for (auto& d : deltas) {
    const std::size_t cur = pick(rng);
    d = (model.prototypes[cur] - model.prototypes[prev]).squaredNorm();
    prev = cur;
  }
  const auto n = static_cast<double>(trials);
  const double mean = std::accumulate(deltas.begin(), deltas.end(), 0.0) / n;
  double g0 = 0.0, g1 = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    g0 += (deltas[i] - mean) * (deltas[i] - mean);
    if (i + 1 < trials) g1 += (deltas[i] - mean) * (deltas[i + 1] - mean);
  }
  g0 /= n;
  g1 /= n;
  // Consecutive deltas share a draw, so the series is 1-dependent.
  const double se = std::sqrt(std::max(g0 + 2.0 * g1, 0.0) / n);
  const double analytic = model.expected_delta();
  const auto [lo, hi] = model.gini_bounds();
  const bool mean_ok = std::abs(mean - analytic) <= 4.0 * se + 1e-12 * std::max(1.0, analytic);
  const double slack = 1e-12 * std::max(1.0, hi);
  const bool bounds_ok = lo - slack <= analytic && analytic <= hi + slack;
  return {{"k", model.prototypes.size()},
          {"trials", trials},
          {"seed", seed},
          {"empirical_mean_delta", mean},
          {"standard_error", se},
          {"analytic_value", analytic},
          {"gini", model.gini()},
          {"bounds", {lo, hi}},
          {"mean_within_4se", mean_ok},
          {"bounds_ok", bounds_ok},
          {"pass", mean_ok && bounds_ok}};
}

void ScoreDist::validate() const {
  if (family == Family::uniform && !(b > a)) throw Error("uniform score law needs hi > lo");
  if (family == Family::normal && !(b > 0.0)) throw Error("normal score law needs sd > 0");
}

double ScoreDist::cdf(double x) const {
  if (family == Family::uniform) return std::clamp((x - a) / (b - a), 0.0, 1.0);
  return 0.5 * std::erfc(-(x - a) / (b * std::sqrt(2.0)));
}

double ScoreDist::sample(Rng& rng) const {
  if (family == Family::uniform) return std::uniform_real_distribution<double>(a, b)(rng);
  return std::normal_distribution<double>(a, b)(rng);
}

double ScoreDist::support_lo() const { return family == Family::uniform ? a : a - 40.0 * b; }
double ScoreDist::support_hi() const { return family == Family::uniform ? b : a + 40.0 * b; }

void TwoClusterModel::validate() const {
  if (!(pi_p > 0.0 && pi_p < 1.0)) throw Error("two-cluster: pi_p must be in (0, 1)");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("two-cluster: ratio must be in (0, 1)");
  f_p.validate();
  f_q.validate();
}

double solve_tau(const TwoClusterModel& m) {
  m.validate();
  double lo = std::min(m.f_p.support_lo(), m.f_q.support_lo());
  double hi = std::max(m.f_p.support_hi(), m.f_q.support_hi());
  if (!(m.mixture_cdf(lo) <= m.ratio && m.mixture_cdf(hi) >= m.ratio)) throw Error("solve_tau: no bracketing interval");
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    mid = 0.5 * (lo + hi);
    const double r = m.mixture_cdf(mid) - m.ratio;
    if (std::abs(r) < 1e-12 && hi - lo < 1e-9) break;
    if (r < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid))) break;
  }
  return mid;
}

nlohmann::json validate_topk_bias(const TwoClusterModel& m, std::span<const std::size_t> n_grid, std::size_t trials,
                                  std::uint64_t seed) {
  m.validate();
  if (n_grid.empty() || trials < 2) throw Error("topk: need a non-empty grid and >= 2 trials");
  const double tau = solve_tau(m);
  const double gap = m.f_p.cdf(tau) - m.f_q.cdf(tau);
  const double limit = m.pi_p * m.f_p.cdf(tau) / m.ratio;
  const double delta = limit - m.pi_p;

  nlohmann::json per_n = nlohmann::json::array();
  std::vector<double> stds;
  double final_mean = 0.0, final_se = 0.0, final_gap_mean = 0.0;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const std::size_t n = n_grid[g];
    const auto n_p = static_cast<std::size_t>(std::lround(m.pi_p * static_cast<double>(n)));
    const auto k = static_cast<std::size_t>(std::floor(m.ratio * static_cast<double>(n)));
    if (k < 1 || n_p > n) throw Error("topk: population too small for the ratio");
    std::vector<double> fractions(trials);
#pragma omp parallel for schedule(dynamic)
    for (long t = 0; t < static_cast<long>(trials); ++t) {
      Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(g) << 32) | static_cast<std::uint64_t>(t)));
      std::vector<std::pair<double, bool>> draws(n);
      for (std::size_t i = 0; i < n; ++i) {
        const bool is_p = i < n_p;
        draws[i] = {is_p ? m.f_p.sample(rng) : m.f_q.sample(rng), is_p};
      }
      std::nth_element(draws.begin(), draws.begin() + static_cast<std::ptrdiff_t>(k - 1), draws.end());
      std::size_t count = 0;
      for (std::size_t i = 0; i < k; ++i) count += draws[i].second;
      fractions[static_cast<std::size_t>(t)] = static_cast<double>(count) / static_cast<double>(k);
    }
    const double mean = std::accumulate(fractions.begin(), fractions.end(), 0.0) / static_cast<double>(trials);
    double ss = 0.0, gap_sum = 0.0;
    for (double f : fractions) {
      ss += (f - mean) * (f - mean);
      gap_sum += 2.0 * std::abs(f - m.pi_p);
    }
    const double sd = std::sqrt(ss / static_cast<double>(trials - 1));
    stds.push_back(sd);
    const double binom_se = std::sqrt(std::max(limit * (1.0 - limit), 1e-300) / static_cast<double>(k));
    final_mean = mean;
    final_se = binom_se / std::sqrt(static_cast<double>(trials));
    final_gap_mean = gap_sum / static_cast<double>(trials);
    per_n.push_back({{"n", n},
                     {"k", k},
                     {"pi_hat_mean", mean},
                     {"pi_hat_std", sd},
                     {"delta_k_mean", final_gap_mean},
                     {"binomial_se", binom_se}});
  }

  nlohmann::json rep = {{"pi_p", m.pi_p},   {"ratio", m.ratio}, {"tau", tau},        {"cdf_gap", gap},
                        {"limit", limit},   {"delta", delta},   {"trials", trials}, {"seed", seed},
                        {"per_n", per_n}};
  if (!(gap > 0.0)) {
    rep["hypothesis_violated"] = true;
    rep["note"] = "F_p(tau) - F_q(tau) <= 0: the bias claim does not apply";
    rep["pass"] = true;
    return rep;
  }
  bool concentrating = true;
  for (std::size_t i = 1; i < stds.size(); ++i) concentrating &= stds[i] < stds[i - 1];
  const bool limit_ok = std::abs(final_mean - limit) <= 3.0 * final_se;
  const bool gap_ok = std::abs(final_gap_mean - 2.0 * delta) <= 6.0 * final_se;
  rep["hypothesis_violated"] = false;
  rep["concentrating"] = concentrating;
  rep["limit_within_3se"] = limit_ok;
  rep["delta_k_within_tolerance"] = gap_ok;
  rep["pass"] = concentrating && limit_ok && gap_ok;
  return rep;
}

std::size_t greedy_cover_size(std::span<const Matrix> pool, double radius) {
  if (pool.empty()) return 0;
  std::vector<double> dist(pool.size(), std::numeric_limits<double>::infinity());
  std::size_t centers = 0;
  std::size_t next = 0;
  while (true) {
    ++centers;
    for (std::size_t i = 0; i < pool.size(); ++i) dist[i] = std::min(dist[i], (pool[i] - pool[next]).norm());
    next = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    if (dist[next] <= radius) return centers;
  }
}

bool is_eps_cover(std::span<const Matrix> pool, std::span<const std::size_t> selected, double eps) {
  for (const auto& p : pool) {
    bool hit = false;
    for (auto s : selected)
      if ((p - pool[s]).norm() <= eps) {
        hit = true;
        break;
      }
    if (!hit) return false;
  }
  return true;
}

namespace {

double cover_rate(std::span<const Matrix> pool, std::span<const double> weights, std::size_t m, double eps,
                  std::size_t trials, std::uint64_t seed) {
  std::vector<char> ok(trials, 0);
#pragma omp parallel for schedule(dynamic)
  for (long t = 0; t < static_cast<long>(trials); ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const auto picks = selection::weighted_sample_without_replacement(weights, m, rng);
    ok[static_cast<std::size_t>(t)] = is_eps_cover(pool, picks, eps);
  }
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(trials);
}

}  // namespace

nlohmann::json validate_epsilon_coverage(std::span<const Matrix> pool, std::span<const double> scores, double eps,
                                         double delta, std::size_t trials, std::uint64_t seed, double eps_reg) {
  const std::size_t n = pool.size();
  if (n < 2 || scores.size() != n) throw Error("coverage: need >= 2 pool points with one score each");
  if (!(eps > 0.0) || !(delta > 0.0 && delta < 1.0)) throw Error("coverage: need eps > 0 and delta in (0, 1)");
  if (trials < 10) throw Error("coverage: need at least 10 trials");

  const double h = selection::silverman_bandwidth(scores);
  const auto density = kernels::kde_evaluate(scores, h, scores);
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = 1.0 / (density[i] + eps_reg);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  const double rho_min = *std::min_element(density.begin(), density.end());
  const double rho_max = *std::max_element(density.begin(), density.end());

  const std::size_t n_eps = greedy_cover_size(pool, eps);
  const double factor = static_cast<double>(n) * (rho_max + eps_reg) / (rho_min + eps_reg);
  const double m_real = factor * (std::log(static_cast<double>(n_eps)) + std::log(1.0 / delta));
  const auto m_bound = static_cast<std::size_t>(std::ceil(m_real));
  const bool vacuous = m_bound > n;
  const std::size_t m_eval = std::min(m_bound, n);

  const double rate = cover_rate(pool, weights, m_eval, eps, trials, derive_seed(seed, 51));
  const double se = std::sqrt(delta * (1.0 - delta) / static_cast<double>(trials));
  const bool bound_ok = rate >= 1.0 - delta - 3.0 * se;

  // Per-draw form of the argument: with balls of radius eps/2 every ball hit
  // implies an eps-cover, so P(fail) <= N_{eps/2} (1 - w_min)^m for each m.
  const std::size_t n_half = greedy_cover_size(pool, 0.5 * eps);
  const double w_min = (rho_min + eps_reg) / (static_cast<double>(n) * (rho_max + eps_reg));
  nlohmann::json curve = nlohmann::json::array();
  bool curve_ok = true;
  for (std::size_t m = 1; m <= n; ++m) {
    const double r = cover_rate(pool, weights, m, eps, trials, derive_seed(seed, 1000 + m));
    const double union_bound = std::min(1.0, static_cast<double>(n_half) * std::pow(1.0 - w_min, static_cast<double>(m)));
    const double tol = 3.0 * std::sqrt(union_bound * (1.0 - union_bound) / static_cast<double>(trials));
    const bool ok = 1.0 - r <= union_bound + tol + 1e-12;
    curve_ok &= ok;
    curve.push_back({{"m", m}, {"coverage", r}, {"failure_bound", union_bound}, {"ok", ok}});
  }
  return {{"n", n},
          {"eps", eps},
          {"delta", delta},
          {"trials", trials},
          {"seed", seed},
          {"bandwidth", h},
          {"rho_min", rho_min},
          {"rho_max", rho_max},
          {"N_eps", n_eps},
          {"N_eps_half", n_half},
          {"m_bound", m_bound},
          {"vacuous", vacuous},
          {"m_evaluated", m_eval},
          {"empirical_coverage", rate},
          {"coverage_ok", bound_ok},
          {"curve", curve},
          {"curve_ok", curve_ok},
          {"pass", bound_ok && curve_ok}};
}

ClusterPool two_cluster_pool(std::size_t per_cluster_a, std::size_t per_cluster_b, int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 61));
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  std::normal_distribution<double> noise(0.0, 1.0);
  ClusterPool p;
  const Matrix centers[2] = {Matrix::Zero(n, n), Matrix::Constant(n, n, 1.0)};
  const std::size_t counts[2] = {per_cluster_a, per_cluster_b};
  const double levels[2][2] = {{1.0, 0.05}, {5.0, 0.3}};
  std::vector<int> label;
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Matrix m = centers[c];
      for (Eigen::Index j = 0; j < m.size(); ++j) m(j) += jitter(rng);
      p.points.push_back(m);
      p.scores.push_back(levels[c][0] + levels[c][1] * noise(rng));
      label.push_back(c);
    }
  for (std::size_t i = 0; i < p.points.size(); ++i)
    for (std::size_t j = i + 1; j < p.points.size(); ++j)
      if (label[i] == label[j]) p.intra_diameter = std::max(p.intra_diameter, (p.points[i] - p.points[j]).norm());
  return p;
}

nlohmann::json validate_discrepancy(std::span<const Matrix> pool, std::span<const double> probabilities,
                                    std::span<const std::size_t> projection, const PoolFunction& f, double lipschitz,
                                    double eps) {
  const std::size_t n = pool.size();
  if (probabilities.size() != n || projection.size() != n) throw Error("discrepancy: size mismatch");
  if (!(lipschitz >= 0.0) || !(eps >= 0.0)) throw Error("discrepancy: need L >= 0 and eps >= 0");
  double total = 0.0;
  double max_move = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(probabilities[i] >= 0.0)) throw Error("discrepancy: negative probability");
    total += probabilities[i];
    if (projection[i] >= n) throw Error("discrepancy: projection outside the pool");
    const double d = (pool[i] - pool[projection[i]]).norm();
    if (d > eps) throw Error("discrepancy: projection moves point " + std::to_string(i) + " by " + format_sig(d, 6) +
                             " > eps");
    max_move = std::max(max_move, d);
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("discrepancy: probabilities must sum to 1");
  double e_p = 0.0, e_proj = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    e_p += probabilities[i] * f(pool[i]);
    e_proj += probabilities[i] * f(pool[projection[i]]);
  }
  const double disc = std::abs(e_p - e_proj);
  const double bound = lipschitz * eps;
  return {{"n", n},
          {"expectation_full", e_p},
          {"expectation_projected", e_proj},
          {"discrepancy", disc},
          {"max_projection_distance", max_move},
          {"bound", bound},
          {"pass", disc <= bound * (1.0 + 1e-12) + 1e-15}};
}

std::string StreamSpec::name() const {
  switch (kind) {
    case Kind::iid_uniform: return "iid_uniform_0_2";
    case Kind::ar1_lognormal: return "ar1_lognormal";
    case Kind::two_prototype: return "two_prototype";
    default: return "constant";
  }
}

namespace {
constexpr double kLogSd = 0.5;
constexpr double kPrototypeDistance = 4.0;
}  // namespace

double StreamSpec::analytic_mean() const {
  switch (kind) {
    case Kind::iid_uniform: return 1.0;
    case Kind::ar1_lognormal: return std::exp(0.5 * kLogSd * kLogSd);
    case Kind::two_prototype: return 0.5 * kPrototypeDistance;
    default: return param;
  }
}

std::vector<double> StreamSpec::generate(std::size_t length, std::uint64_t seed) const {
  Rng rng(derive_seed(seed, 71));
  std::vector<double> out(length);
  switch (kind) {
    case Kind::iid_uniform: {
      std::uniform_real_distribution<double> u(0.0, 2.0);
      for (auto& x : out) x = u(rng);
      break;
    }
    case Kind::ar1_lognormal: {
      if (!(std::abs(param) < 1.0)) throw Error("stream: AR coefficient must be in (-1, 1)");
      std::normal_distribution<double> z(0.0, 1.0);
      const double innov = kLogSd * std::sqrt(1.0 - param * param);
      double u = kLogSd * z(rng);
      for (auto& x : out) {
        x = std::exp(u);
        u = param * u + innov * z(rng);
      }
      break;
    }
    case Kind::two_prototype: {
      std::bernoulli_distribution coin(0.5);
      bool prev = coin(rng);
      for (auto& x : out) {
        const bool cur = coin(rng);
        x = cur != prev ? kPrototypeDistance : 0.0;
        prev = cur;
      }
      break;
    }
    default:
      std::fill(out.begin(), out.end(), param);
  }
  return out;
}

nlohmann::json validate_sps_consistency(std::span<const StreamSpec> streams, std::span<const std::size_t> l_grid,
                                        std::size_t replications, std::uint64_t seed) {
  if (l_grid.empty() || replications < 2) throw Error("consistency: need a grid and >= 2 replications");
  const std::size_t max_l = *std::max_element(l_grid.begin(), l_grid.end());
  nlohmann::json rows = nlohmann::json::array();
  bool all_ok = true;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& spec = streams[s];
    const double truth = spec.analytic_mean();
    const auto main = sps::consistency_trace(spec.generate(max_l, derive_seed(seed, s)), l_grid);
    std::vector<double> sq(l_grid.size(), 0.0);
    for (std::size_t r = 0; r < replications; ++r) {
      const auto tr = sps::consistency_trace(spec.generate(max_l, derive_seed(seed, 1000 * (s + 1) + r)), l_grid);
      for (std::size_t i = 0; i < tr.size(); ++i) sq[i] += (tr[i] - truth) * (tr[i] - truth);
    }
    std::vector<double> rms(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) rms[i] = std::sqrt(sq[i] / static_cast<double>(replications));
    bool ok;
    if (spec.kind == StreamSpec::Kind::constant) {
      ok = std::all_of(main.begin(), main.end(), [&](double v) { return v == truth; });
    } else {
      bool shrinking = true;
      for (std::size_t i = 1; i < rms.size(); ++i) shrinking &= rms[i] < rms[i - 1];
      ok = shrinking && std::abs(main.back() - truth) < 0.05 * std::abs(truth);
    }
    all_ok &= ok;
    rows.push_back({{"stream", spec.name()},
                    {"analytic_mean", truth},
                    {"l_grid", l_grid},
                    {"running_mean", main},
                    {"rms_error", rms},
                    {"final_relative_error", std::abs(main.back() - truth) / std::max(std::abs(truth), 1e-300)},
                    {"pass", ok}});
  }
  return {{"replications", replications}, {"seed", seed}, {"streams", rows}, {"pass", all_ok}};
}

nlohmann::json validate_universal(const dataset::Dataset& d, std::span<const spi::SpiOperator> ops,
                                  const encoder::FitConfig& cfg) {
  if (ops.size() < 4) throw Error("universal: need at least 4 operators");
  nlohmann::json table = nlohmann::json::array();
  std::size_t decreasing = 0, halved = 0, generalizing = 0;
  for (const auto& op : ops) {
    const auto rep = encoder::fit_to_target(d, op, cfg);
    const bool dec = rep.train_mse_end < rep.train_mse_start;
    const bool half = rep.train_mse_end <= 0.5 * rep.train_mse_start;
    const bool gen = std::abs(rep.test_mse - rep.train_mse_end) <= 0.25 * rep.train_mse_end;
    decreasing += dec;
    halved += half;
    generalizing += gen;
    table.push_back({{"operator", op.name},
                     {"kind", std::string(spi::kind_name(op.kind))},
                     {"mse_start", rep.train_mse_start},
                     {"mse_end", rep.train_mse_end},
                     {"mse_test", rep.test_mse},
                     {"mse_test_raw", rep.test_mse_raw},
                     {"epochs", rep.epochs_run},
                     {"decreased", dec},
                     {"halved", half},
                     {"test_within_25pct", gen},
                     {"status", dec ? "ok" : "optimization shortfall"}});
  }
  const std::size_t need_half = std::min<std::size_t>(6, ops.size());
  return {{"fit", cfg.to_json()},
          {"table", table},
          {"decreased", decreasing},
          {"halved", halved},
          {"test_within_25pct", generalizing},
          {"pass", decreasing == ops.size() && halved >= need_half && generalizing == ops.size()}};
}

nlohmann::json run_validators(const std::string& which, std::uint64_t seed) {
  static const std::vector<std::string> names = {"interference", "mixture",     "topk",     "coverage",
                                                 "discrepancy",  "consistency", "universal"};
  if (which != "all" && std::find(names.begin(), names.end(), which) == names.end())
    throw Error("unknown validator '" + which + "'");
  nlohmann::json out = nlohmann::json::object();
  bool pass = true;
  auto want = [&](const std::string& n) { return which == "all" || which == n; };

  if (want("interference")) {
    nlohmann::json runs = nlohmann::json::array();
    bool ok = true;
    for (int h : {2, 4, 8})
      for (std::uint64_t s = 0; s < 20; ++s) {
        auto r = validate_interference(h, 32, 0.5, derive_seed(seed, s));
        ok &= r["pass"].get<bool>();
        runs.push_back(r);
      }
    out["interference"] = {{"runs", runs}, {"pass", ok}};
  }
  if (want("mixture")) {
    MixtureModel m;
    m.prototypes = {Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
    m.prototypes[1](0, 0) = 2.0;  // D = 4
    m.weights = {0.5, 0.5};
    auto base = validate_mixture(m, 10000, seed);
    nlohmann::json randoms = nlohmann::json::array();
    bool ok = base["pass"].get<bool>();
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto r = validate_mixture(random_mixture(3, 6, derive_seed(seed, 100 + s)), 10000, derive_seed(seed, 200 + s));
      ok &= r["bounds_ok"].get<bool>();
      randoms.push_back(r);
    }
    out["mixture"] = {{"isotropic", base}, {"random_k3", randoms}, {"pass", ok}};
  }
  if (want("topk")) {
    TwoClusterModel m{0.5, ScoreDist::uniform(0.0, 1.0), ScoreDist::uniform(0.5, 1.5), 0.5};
    const std::size_t grid[] = {1000, 10000, 100000};
    out["topk"] = validate_topk_bias(m, grid, 200, seed);
  }
  if (want("coverage")) {
    const auto pool = two_cluster_pool(30, 10, 6, seed);
    out["coverage"] = validate_epsilon_coverage(pool.points, pool.scores, pool.intra_diameter, 0.1, 1000, seed);
  }
  if (want("discrepancy")) {
    const auto pool = two_cluster_pool(20, 20, 4, seed);
    const double eps = pool.intra_diameter;
    std::vector<double> probs(pool.points.size());
    Rng rng(derive_seed(seed, 81));
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (auto& p : probs) p = u(rng);
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    for (auto& p : probs) p /= total;
    // Project every point to the first member of its cluster.
    std::vector<std::size_t> proj(pool.points.size());
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = i < 20 ? 0 : 20;
    const Matrix anchor = Matrix::Constant(4, 4, 0.3);
    auto r = validate_discrepancy(pool.points, probs, proj, [&](const Matrix& a) { return (a - anchor).norm(); }, 1.0,
                                  eps);
    out["discrepancy"] = r;
  }
  if (want("consistency")) {
    const StreamSpec streams[] = {{StreamSpec::Kind::iid_uniform, 0.0},
                                  {StreamSpec::Kind::ar1_lognormal, 0.5},
                                  {StreamSpec::Kind::two_prototype, 0.0},
                                  {StreamSpec::Kind::constant, 0.37}};
    const std::size_t grid[] = {10, 100, 1000, 10000};
    out["consistency"] = validate_sps_consistency(streams, grid, 50, seed);
  }
  if (want("universal")) {
    // Generalization to held-out subjects needs more subjects than the
    // 60-subject default: at 60 the test MSE sits 2-3x above train.
    dataset::SynthConfig sc;
    sc.n_subjects = 600;
    sc.seed = seed;
    const auto d = dataset::window_dataset(dataset::generate_synthetic(sc), sc.window_len, sc.stride);
    const auto ops = spi::select_operators({"pearson", "cov_empirical", "spearman", "pdist_euclidean", "cohmag_mean",
                                            "plv_mean", "mi_gaussian", "xcorr_max"});
    encoder::FitConfig fc;
    fc.seed = seed;
    out["universal"] = validate_universal(d, ops, fc);
    out["universal"]["dataset"] = {{"subjects", sc.n_subjects}, {"samples", d.size()}};
  }
  for (auto& [k, v] : out.items()) pass &= v["pass"].get<bool>();
  out["pass"] = pass;
  return out;
}

}  // namespace rankcore::theory

#include "rankcore/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "rankcore/kernels.hpp"

namespace rankcore::selection {

nlohmann::json CoreSet::to_json() const {
  return {{"method", method}, {"ratio", ratio}, {"params", params}, {"provenance", provenance},
          {"sample_ids", sample_ids}};
}

CoreSet CoreSet::from_json(const nlohmann::json& j) {
  CoreSet c;
  try {
    c.method = j.at("method").get<std::string>();
    c.ratio = j.at("ratio").get<double>();
    c.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    c.params = j.value("params", nlohmann::json::object());
    c.provenance = j.value("provenance", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("coreset: ") + e.what());
  }
  if (std::set<std::string>(c.sample_ids.begin(), c.sample_ids.end()).size() != c.sample_ids.size())
    throw ParseError("coreset: duplicate sample ids");
  return c;
}

void write_coreset(const CoreSet& c, const std::filesystem::path& path) { atomic_write(path, c.to_json().dump(2) + "\n"); }

CoreSet read_coreset(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return CoreSet::from_json(j);
}

std::size_t coreset_size(double ratio, std::size_t n) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("ratio must be in (0, 1]");
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
}

double quantile_type7(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile of empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double silverman_bandwidth(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 2) throw Error("bandwidth needs at least 2 values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  std::vector<double> copy(values.begin(), values.end());
  const double iqr = quantile_type7(copy, 0.75) - quantile_type7(copy, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;  // IQR collapses on heavily tied data
  return std::max(0.9 * spread * std::pow(n, -0.2), 1e-6);
}

double kde_density(std::span<const double> values, double bandwidth, double query) {
  const double q[] = {query};
  return kernels::serial::kde_evaluate(values, bandwidth, q).front();
}

std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t m, Rng& rng) {
  if (m > weights.size()) throw Error("cannot draw " + std::to_string(m) + " from a pool of " +
                                      std::to_string(weights.size()));
  std::vector<double> w(weights.begin(), weights.end());
  for (double x : w)
    if (!(x >= 0.0) || !std::isfinite(x)) throw Error("sampling weights must be finite and >= 0");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t draw = 0; draw < m; ++draw) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::size_t pick = w.size();
    if (total > 0.0) {
      double u = unif(rng) * total;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        pick = i;
        if (u < w[i]) break;
        u -= w[i];
      }
    }
    if (pick == w.size()) {
      // Remaining mass is zero: fall back to uniform over undrawn items.
      std::vector<std::size_t> left;
      for (std::size_t i = 0; i < w.size(); ++i)
        if (std::find(out.begin(), out.end(), i) == out.end()) left.push_back(i);
      pick = left[std::uniform_int_distribution<std::size_t>(0, left.size() - 1)(rng)];
    }
    out.push_back(pick);
    w[pick] = 0.0;
  }
  return out;
}

namespace {

std::vector<std::pair<std::string, double>> sorted_by_score(const sps::SpsRecord& s) {
  std::vector<std::pair<std::string, double>> v(s.scores.begin(), s.scores.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  return v;
}

double ratio_of(std::size_t m, std::size_t n) { return n ? static_cast<double>(m) / static_cast<double>(n) : 0.0; }

}  // namespace

CoreSet select_topk_sps(const sps::SpsRecord& sps, std::size_t m) {
  if (m > sps.scores.size())
    throw Error("select: m=" + std::to_string(m) + " exceeds pool of " + std::to_string(sps.scores.size()));
  // The map iterates ids lexicographically, so stable sort breaks ties by id.
  const auto order = sorted_by_score(sps);
  CoreSet c;
  c.method = "sclcs";
  c.ratio = ratio_of(m, sps.scores.size());
  c.params = {{"m", m}};
  c.provenance = sps.provenance;
  for (std::size_t i = 0; i < m; ++i) c.sample_ids.push_back(order[i].first);
  return c;
}

CoreSet select_density_balanced(const sps::SpsRecord& sps, std::size_t m, const DensityOptions& opts,
                                DensityDiagnostics* diag) {
  const std::size_t n = sps.scores.size();
  if (n == 0) throw Error("select: empty SPS record");
  if (!(opts.beta >= 0.0 && opts.beta < 1.0)) throw Error("select: beta must be in [0, 1)");
  if (!(opts.eps_reg > 0.0)) throw Error("select: eps_reg must be > 0");
  if (m > n) throw Error("select: m=" + std::to_string(m) + " exceeds dataset of " + std::to_string(n));

  std::vector<double> all;
  for (const auto& [id, s] : sps.scores) all.push_back(s);

  auto pool_for = [&](double beta, double& threshold) {
    threshold = quantile_type7(all, 1.0 - beta);
    std::vector<std::string> pool;
    for (const auto& [id, s] : sps.scores)
      if (s <= threshold) pool.push_back(id);
    return pool;
  };

  double beta = opts.beta;
  double threshold = 0.0;
  auto pool = pool_for(beta, threshold);
  if (pool.size() < m && opts.shrink_beta_to_fit) {
    beta = std::min(beta, 1.0 - ratio_of(m, n));
    pool = pool_for(beta, threshold);
    if (pool.size() < m) {
      beta = 0.0;
      pool = pool_for(beta, threshold);
    }
  }
  if (pool.empty()) throw Error("select: stable pool is empty");
  if (m > pool.size())
    throw Error("select: m=" + std::to_string(m) + " exceeds the stable pool of " + std::to_string(pool.size()) +
                " (beta=" + format_sig(beta, 6) + ")");

  std::vector<double> values;
  for (const auto& id : pool) values.push_back(sps.scores.at(id));
  double h = opts.bandwidth;
  if (!(h > 0.0)) h = values.size() >= 2 ? silverman_bandwidth(values) : 1e-6;
  const auto density = kernels::kde_evaluate(values, h, values);
  std::vector<double> weights(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) weights[i] = 1.0 / (density[i] + opts.eps_reg);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;

  Rng rng(derive_seed(opts.seed, 11));
  const auto picks = weighted_sample_without_replacement(weights, m, rng);
  CoreSet c;
  c.method = "sclcs-dense";
  c.ratio = ratio_of(m, n);
  c.params = {{"m", m}, {"beta", opts.beta}, {"beta_used", beta}, {"eps_reg", opts.eps_reg}, {"bandwidth", h},
              {"seed", opts.seed}};
  c.provenance = sps.provenance;
  for (auto i : picks) c.sample_ids.push_back(pool[i]);
  if (diag) *diag = {beta, threshold, h, pool, weights};
  return c;
}

CoreSet select_random(std::vector<std::string> ids, std::size_t m, std::uint64_t seed) {
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw Error("select: duplicate ids");
  if (m > ids.size()) throw Error("select: m=" + std::to_string(m) + " exceeds pool of " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, 12));
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  CoreSet c;
  c.method = "random";
  c.ratio = ratio_of(m, ids.size());
  c.params = {{"m", m}, {"seed", seed}};
  c.sample_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m));
  return c;
}

std::vector<std::size_t> kmeans_representatives(const Matrix& features, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k < 1) throw Error("kmeans: k must be >= 1");
  {
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::RowVectorXd r = features.row(static_cast<Eigen::Index>(i));
      distinct.emplace(r.data(), r.data() + r.size());
    }
    if (k > distinct.size())
      throw Error("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(distinct.size()) + " distinct points");
  }
  const auto row = [&](std::size_t i) { return features.row(static_cast<Eigen::Index>(i)); };
  Rng rng(derive_seed(seed, 13));

  // k-means++ seeding.
  Matrix centers(static_cast<Eigen::Index>(k), features.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  centers.row(0) = row(first);
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (row(i) - centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      if (u < d2[i]) break;
      u -= d2[i];
    }
    centers.row(static_cast<Eigen::Index>(c)) = row(pick);
  }

  std::vector<std::size_t> assign(n, 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 50; ++iter) {
    double inertia = 0.0;
    std::vector<double> best_d(n);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
      best_d[i] = best;
      inertia += best;
    }
    Matrix sums = Matrix::Zero(centers.rows(), centers.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += row(i);
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      } else {
        // Empty cluster: move it onto the point farthest from its center.
        const auto far = static_cast<std::size_t>(std::max_element(best_d.begin(), best_d.end()) - best_d.begin());
        centers.row(static_cast<Eigen::Index>(c)) = row(far);
        best_d[far] = 0.0;
      }
    }
    if (std::isfinite(prev_inertia) && std::abs(prev_inertia - inertia) <= 1e-6 * std::max(prev_inertia, 1e-300)) break;
    prev_inertia = inertia;
  }

  std::vector<std::size_t> chosen;
  std::vector<bool> used(n, false);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::pair<double, std::size_t>> by_dist;
    for (std::size_t i = 0; i < n; ++i)
      by_dist.emplace_back((row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm(), i);
    std::sort(by_dist.begin(), by_dist.end());
    for (const auto& [d, i] : by_dist)
      if (!used[i]) {
        used[i] = true;
        chosen.push_back(i);
        break;
      }
  }
  return chosen;
}

CoreSet select_kmeans(const Matrix& features, std::span<const std::string> ids, std::size_t k, std::uint64_t seed) {
  if (static_cast<std::size_t>(features.rows()) != ids.size()) throw Error("kmeans: feature/id count mismatch");
  CoreSet c;
  c.method = "kmeans";
  c.ratio = ratio_of(k, ids.size());
  c.params = {{"k", k}, {"seed", seed}};
  for (auto i : kmeans_representatives(features, k, seed)) c.sample_ids.push_back(ids[i]);
  return c;
}

CoreSet select_kmeans(const spi::FcStore& store, const std::string& reference_op, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<Vector> rows;
  for (const auto& s : store.samples()) {
    if (!store.contains(reference_op, s.sample_id))
      throw Error("kmeans: reference FC " + reference_op + " missing for " + s.sample_id);
    ids.push_back(s.sample_id);
    rows.push_back(upper_triangle(store.load(reference_op, s.sample_id)));
  }
  if (rows.empty()) throw Error("kmeans: empty FC store");
  Matrix features(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  auto c = select_kmeans(features, ids, k, seed);
  c.params["reference_op"] = reference_op;
  return c;
}

}  // namespace rankcore::selection

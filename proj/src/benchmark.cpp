#include "rankcore/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace rankcore::benchmark {

std::string task_name(Task t) { return t == Task::fingerprint ? "fingerprint" : "diagnosis"; }

Task parse_task(const std::string& s) {
  if (s == "fingerprint") return Task::fingerprint;
  if (s == "diagnosis") return Task::diagnosis;
  throw Error("unknown task '" + s + "' (expected fingerprint or diagnosis)");
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 3) throw Error("spearman: need at least 3 observations");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double r = pearson(rx, ry);
  if (std::isnan(r)) throw Error("spearman: constant input");
  return r;
}

DiscriminabilityResult discriminability(std::span<const Matrix> fcs, std::span<const std::string> classes,
                                        const DiscriminabilityOptions& opts) {
  const std::size_t n = fcs.size();
  if (classes.size() != n) throw Error("discriminability: fc/class count mismatch");
  if (n < 3) throw Error("discriminability: need at least 3 samples");
  if (std::set<std::string>(classes.begin(), classes.end()).size() < 2)
    throw Error("discriminability: fewer than 2 classes present");

  Matrix features(static_cast<Eigen::Index>(n), upper_triangle(fcs[0]).size());
  for (std::size_t i = 0; i < n; ++i) {
    const Vector u = upper_triangle(fcs[i]);
    if (u.size() != features.cols()) throw Error("discriminability: FC shapes differ");
    features.row(static_cast<Eigen::Index>(i)) = u.transpose();
  }

  std::vector<kernels::Pair> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  DiscriminabilityResult res;
  if (opts.pair_cap > 0 && pairs.size() > opts.pair_cap) {
    Rng rng(derive_seed(opts.seed, 21));
    for (std::size_t i = 0; i < opts.pair_cap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pairs.size() - 1);
      std::swap(pairs[i], pairs[pick(rng)]);
    }
    pairs.resize(opts.pair_cap);
    std::sort(pairs.begin(), pairs.end());
    res.subsampled = true;
  }

  const auto sims = kernels::pair_similarities(features, pairs, opts.exec);
  std::vector<double> kept, same;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (std::isnan(sims[k])) {
      ++res.pairs_dropped;
      continue;
    }
    // Rounded so that equal similarities tie despite last-bit noise.
    kept.push_back(std::round(sims[k] * 1e12) / 1e12);
    same.push_back(classes[pairs[k].first] == classes[pairs[k].second] ? 1.0 : 0.0);
  }
  if (2 * res.pairs_dropped > pairs.size())
    throw Error("discriminability: more than half of the pairs involve zero-variance FC vectors");
  const double within = std::accumulate(same.begin(), same.end(), 0.0);
  if (within == 0.0 || within == static_cast<double>(same.size()))
    throw Error("discriminability: pairs are all within-class or all between-class");
  res.pairs_used = kept.size();
  res.score = spearman_rho(kept, same);
  return res;
}

std::map<std::string, int> Ranking::rank_of() const {
  std::map<std::string, int> out;
  for (const auto& e : entries) out[e.op] = e.rank;
  return out;
}

nlohmann::json Ranking::to_json() const {
  nlohmann::json es = nlohmann::json::array();
  for (const auto& e : entries) es.push_back({{"operator", e.op}, {"score", e.score}, {"rank", e.rank}});
  return {{"task", task_name(task)}, {"sample_count", sample_count}, {"entries", es}, {"provenance", provenance}};
}

Ranking Ranking::from_json(const nlohmann::json& j) {
  Ranking r;
  try {
    r.task = parse_task(j.at("task").get<std::string>());
    r.sample_count = j.value("sample_count", std::size_t{0});
    for (const auto& e : j.at("entries"))
      r.entries.push_back({e.at("operator").get<std::string>(), e.at("score").get<double>(), e.at("rank").get<int>()});
    r.provenance = j.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ranking: ") + e.what());
  }
  return r;
}

void write_ranking(const Ranking& r, const std::filesystem::path& path) { atomic_write(path, r.to_json().dump(2) + "\n"); }

Ranking read_ranking(const std::filesystem::path& path) {
  try {
    return Ranking::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Ranking make_ranking(Task task, std::map<std::string, double> scores) {
  Ranking r;
  r.task = task;
  for (const auto& [op, s] : scores) r.entries.push_back({op, s, 0});
  // Map order is lexicographic, so the stable sort keeps name order on ties.
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const RankEntry& a, const RankEntry& b) { return a.score > b.score; });
  for (std::size_t i = 0; i < r.entries.size(); ++i) r.entries[i].rank = static_cast<int>(i + 1);
  return r;
}

Ranking rank_spis(const spi::FcStore& store, std::span<const std::string> sample_ids, Task task,
                  const DiscriminabilityOptions& opts) {
  // Store order makes the ranking independent of the subset's listing order.
  std::vector<std::string> ids;
  if (sample_ids.empty()) {
    for (const auto& s : store.samples()) ids.push_back(s.sample_id);
  } else {
    const std::set<std::string> wanted(sample_ids.begin(), sample_ids.end());
    if (wanted.size() != sample_ids.size()) throw Error("rank: duplicate sample ids in subset");
    for (const auto& id : wanted) store.sample(id);
    for (const auto& s : store.samples())
      if (wanted.count(s.sample_id)) ids.push_back(s.sample_id);
  }
  std::vector<std::string> classes;
  for (const auto& id : ids) {
    const auto& info = store.sample(id);
    classes.push_back(task == Task::fingerprint ? info.subject_id : std::to_string(info.class_label));
  }
  std::map<std::string, double> scores;
  nlohmann::json dropped = nlohmann::json::object();
  bool subsampled = false;
  for (const auto& op : store.operators()) {
    std::vector<Matrix> fcs;
    for (const auto& id : ids) {
      if (!store.contains(op, id)) throw Error("rank: missing FC " + op + "/" + id);
      fcs.push_back(store.load(op, id));
    }
    const auto r = discriminability(fcs, classes, opts);
    scores[op] = r.score;
    subsampled |= r.subsampled;
    if (r.pairs_dropped) dropped[op] = r.pairs_dropped;
  }
  auto ranking = make_ranking(task, std::move(scores));
  ranking.sample_count = ids.size();
  ranking.provenance = {{"pair_cap", opts.pair_cap},
                        {"seed", opts.seed},
                        {"subsampled", subsampled},
                        {"dropped_pairs", dropped},
                        {"similarity", "pearson"}};
  return ranking;
}

double ndcg_at_k(const Ranking& reference, const Ranking& candidate, std::size_t k, Gain gain) {
  const auto ref = reference.rank_of();
  const std::size_t n = ref.size();
  if (candidate.entries.size() != n) throw Error("ndcg: operator sets differ");
  for (const auto& e : candidate.entries)
    if (!ref.count(e.op)) throw Error("ndcg: operator '" + e.op + "' missing from the reference");
  if (k < 1 || k > n) throw Error("ndcg: k must be in [1, n]");
  auto g = [&](double rel) { return gain == Gain::linear ? rel : std::exp2(rel) - 1.0; };
  std::vector<double> rels;
  for (const auto& [op, r] : ref) rels.push_back(static_cast<double>(n) - r);
  std::sort(rels.begin(), rels.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double disc = std::log2(static_cast<double>(i) + 2.0);
    dcg += g(static_cast<double>(n) - ref.at(candidate.entries[i].op)) / disc;
    idcg += g(rels[i]) / disc;
  }
  if (idcg <= 0.0) throw Error("ndcg: ideal DCG is zero");
  return dcg / idcg;
}

CellStats cell_stats(std::vector<double> values) {
  CellStats c;
  if (values.empty()) return c;
  const auto n = static_cast<double>(values.size());
  c.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - c.mean) * (v - c.mean);
  c.std = std::sqrt(ss / n);
  c.values = std::move(values);
  return c;
}

std::string ratio_label(double ratio) { return format_exact(ratio); }

nlohmann::json ConsistencyReport::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [method, by_k] : cells)
    for (const auto& [k, by_ratio] : by_k)
      for (const auto& [ratio, c] : by_ratio)
        out[method][k][ratio] = {{"mean", c.mean}, {"std", c.std}, {"per_seed", c.values}};
  return out;
}

ConsistencyReport consistency_report(const Ranking& truth, std::span<const RunRecord> runs,
                                     std::span<const std::size_t> ks) {
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;
  for (const auto& run : runs)
    for (auto k : ks) {
      const auto kk = std::min(k, truth.entries.size());
      acc[run.method]["ndcg@" + std::to_string(k)][ratio_label(run.ratio)].push_back(
          ndcg_at_k(truth, run.ranking, kk));
    }
  ConsistencyReport rep;
  for (auto& [m, by_k] : acc)
    for (auto& [k, by_r] : by_k)
      for (auto& [r, v] : by_r) rep.cells[m][k][r] = cell_stats(std::move(v));
  return rep;
}

}  // namespace rankcore::benchmark

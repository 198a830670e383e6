#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "rankcore/benchmark.hpp"
#include "test_util.hpp"

using namespace rankcore;
using namespace rankcore::benchmark;

namespace {

// Symmetric 3x3 matrix whose strict upper triangle is (u0, u1, u2).
Matrix from_upper(double u0, double u1, double u2) {
  Matrix m = Matrix::Identity(3, 3);
  m(0, 1) = m(1, 0) = u0;
  m(0, 2) = m(2, 0) = u1;
  m(1, 2) = m(2, 1) = u2;
  return m;
}

// Independent rank helper: average ranks by brute-force counting.
std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double brute_discriminability(const std::vector<Matrix>& fcs, const std::vector<std::string>& cls) {
  std::vector<double> sims, same;
  for (std::size_t i = 0; i < fcs.size(); ++i)
    for (std::size_t j = i + 1; j < fcs.size(); ++j) {
      std::vector<double> a, b;
      for (Eigen::Index r = 0; r < fcs[i].rows(); ++r)
        for (Eigen::Index c = r + 1; c < fcs[i].cols(); ++c) {
          a.push_back(fcs[i](r, c));
          b.push_back(fcs[j](r, c));
        }
      sims.push_back(brute_pearson(a, b));
      same.push_back(cls[i] == cls[j] ? 1.0 : 0.0);
    }
  return brute_pearson(brute_ranks(sims), brute_ranks(same));
}

Ranking ranking_of(const std::vector<std::string>& order) {
  Ranking r;
  for (std::size_t i = 0; i < order.size(); ++i)
    r.entries.push_back({order[i], static_cast<double>(order.size() - i), static_cast<int>(i + 1)});
  return r;
}

// Direct formula: rel = n - reference rank, discount log2(position + 1).
double direct_ndcg(const std::vector<std::string>& ref, const std::vector<std::string>& cand, std::size_t k) {
  const std::size_t n = ref.size();
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t pos = 1; pos <= k; ++pos) {
    const auto ref_rank = static_cast<std::size_t>(std::find(ref.begin(), ref.end(), cand[pos - 1]) - ref.begin()) + 1;
    const double disc = std::log2(static_cast<double>(pos) + 1.0);
    dcg += static_cast<double>(n - ref_rank) / disc;
    idcg += static_cast<double>(n - pos) / disc;
  }
  return dcg / idcg;
}

}  // namespace

TEST_CASE("spearman examples") {
  const std::vector<double> x = {1, 2, 3, 4}, y = {1, 3, 2, 4}, rev = {4, 3, 2, 1}, flat = {2, 2, 2, 2};
  CHECK(spearman_rho(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman_rho(x, rev) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman_rho(x, y) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK_THROWS_AS(spearman_rho(x, flat), Error);
}

TEST_CASE("perfectly separated classes score one, anti-aligned score minus one") {
  const Matrix a = from_upper(1, 0, -1), b = from_upper(1, -2, 1);  // uncorrelated upper triangles
  const std::vector<Matrix> aligned = {a, a, a, b, b, b};
  const std::vector<std::string> cls = {"x", "x", "x", "y", "y", "y"};
  CHECK(discriminability(aligned, cls).score == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<Matrix> anti = {a, from_upper(-1, 0, 1), b, from_upper(-1, 2, -1)};
  const std::vector<std::string> cls2 = {"x", "x", "y", "y"};
  CHECK(discriminability(anti, cls2).score == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("discriminability matches a brute-force oracle") {
  // 6 samples give 15 pairs.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<Matrix> fcs;
    const std::vector<std::string> cls = {"a", "b", "a", "c", "b", "a"};
    for (int i = 0; i < 6; ++i) {
      Matrix m = testutil::random_matrix(5, 5, seed * 10 + static_cast<std::uint64_t>(i));
      fcs.push_back(m + m.transpose());
    }
    const auto r = discriminability(fcs, cls);
    CHECK(r.pairs_used == 15);
    CHECK_FALSE(r.subsampled);
    CHECK(r.score == doctest::Approx(brute_discriminability(fcs, cls)).epsilon(1e-12));
    for (auto exec : {kernels::Exec::serial, kernels::Exec::parallel})
      CHECK(discriminability(fcs, cls, {.pair_cap = 20000, .seed = 0, .exec = exec}).score == r.score);
  }
}

TEST_CASE("shuffled labels give a null score") {
  Rng rng(12);
  std::vector<Matrix> fcs;
  for (int i = 0; i < 80; ++i) {
    const Matrix m = testutil::random_matrix(8, 8, 1000 + static_cast<std::uint64_t>(i));
    fcs.push_back(m + m.transpose());
  }
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> cls;
    for (int i = 0; i < 80; ++i) cls.push_back("c" + std::to_string(i % 8));
    std::shuffle(cls.begin(), cls.end(), rng);
    CHECK(std::abs(discriminability(fcs, cls).score) < 0.1);
  }
}

TEST_CASE("pair cap, dropped pairs and errors") {
  std::vector<Matrix> fcs;
  std::vector<std::string> cls;
  for (int i = 0; i < 30; ++i) {
    const Matrix m = testutil::random_matrix(4, 4, static_cast<std::uint64_t>(i));
    fcs.push_back(m + m.transpose());
    cls.push_back(i % 2 ? "odd" : "even");
  }
  const auto capped = discriminability(fcs, cls, {.pair_cap = 100, .seed = 3});
  CHECK(capped.subsampled);
  CHECK(capped.pairs_used == 100);
  CHECK(capped.score == discriminability(fcs, cls, {.pair_cap = 100, .seed = 3}).score);

  fcs[0] = Matrix::Identity(4, 4);  // constant upper triangle
  const auto dropped = discriminability(fcs, cls);
  CHECK(dropped.pairs_dropped == 29);
  CHECK(std::isfinite(dropped.score));

  const std::vector<std::string> one(30, "same");
  CHECK_THROWS_AS(discriminability(fcs, one), Error);
  std::vector<std::string> distinct;
  for (int i = 0; i < 30; ++i) distinct.push_back(std::to_string(i));
  CHECK_THROWS_AS(discriminability(fcs, distinct), Error);
  for (auto& m : fcs) m = Matrix::Identity(4, 4);
  CHECK_THROWS_AS(discriminability(fcs, cls), Error);
}

TEST_CASE("rank_spis puts the informative operator first") {
  testutil::TempDir dir("rank");
  std::vector<std::string> ids, subjects;
  std::vector<int> classes;
  std::vector<std::vector<Matrix>> fcs(2);
  const Matrix proto[2] = {testutil::random_matrix(6, 6, 1), testutil::random_matrix(6, 6, 2)};
  for (int i = 0; i < 24; ++i) {
    ids.push_back("w" + std::to_string(100 + i));
    subjects.push_back("sub" + std::to_string(i / 3));
    classes.push_back((i / 3) % 2);
    Matrix signal = proto[classes.back()] + 0.2 * testutil::random_matrix(6, 6, 50 + static_cast<std::uint64_t>(i));
    Matrix noise = testutil::random_matrix(6, 6, 900 + static_cast<std::uint64_t>(i));
    fcs[0].push_back(signal + signal.transpose());
    fcs[1].push_back(noise + noise.transpose());
  }
  testutil::write_store(dir.path(), {"zz_informative", "aa_noise"}, ids, subjects, classes, fcs);
  const spi::FcStore store(dir.path());

  const auto r = rank_spis(store, {}, Task::diagnosis);
  CHECK(r.entries[0].op == "zz_informative");
  CHECK(r.sample_count == 24);
  const auto again = rank_spis(store, {}, Task::diagnosis);
  CHECK(again.to_json() == r.to_json());

  const std::vector<std::string> one_class = {ids[0], ids[1], ids[2], ids[6], ids[7]};
  CHECK_THROWS_AS(rank_spis(store, one_class, Task::diagnosis), Error);
  const std::vector<std::string> unknown = {ids[0], "nope"};
  CHECK_THROWS_AS(rank_spis(store, unknown, Task::fingerprint), Error);
  const std::vector<std::string> dup = {ids[0], ids[0], ids[3]};
  CHECK_THROWS_AS(rank_spis(store, dup, Task::fingerprint), Error);

  // Subset order does not matter.
  std::vector<std::string> sub(ids.begin(), ids.begin() + 12), rev(sub.rbegin(), sub.rend());
  CHECK(rank_spis(store, sub, Task::fingerprint).to_json() == rank_spis(store, rev, Task::fingerprint).to_json());
}

TEST_CASE("make_ranking orders by score with name ties") {
  const auto r = make_ranking(Task::fingerprint, {{"b", 0.5}, {"a", 0.5}, {"c", 0.9}});
  CHECK(r.entries[0].op == "c");
  CHECK(r.entries[1].op == "a");
  CHECK(r.entries[2].op == "b");
  CHECK(r.entries[2].rank == 3);
  testutil::TempDir dir("rk");
  write_ranking(r, dir / "r.json");
  CHECK(read_ranking(dir / "r.json").to_json() == r.to_json());
  const auto j = nlohmann::json::parse(read_file(dir / "r.json"));
  for (const char* key : {"task", "sample_count", "entries", "provenance"}) CHECK(j.contains(key));
  CHECK(j["entries"][0].contains("operator"));
}

TEST_CASE("ndcg examples") {
  const auto ref = ranking_of({"a", "b", "c"});
  CHECK(ndcg_at_k(ref, ref, 3) == 1.0);
  // Reversed: DCG = 0 + 1/log2(3) + 2/2, IDCG = 2 + 1/log2(3) + 0.
  const double expected = (1 / std::log2(3.0) + 1.0) / (2.0 + 1 / std::log2(3.0));
  CHECK(ndcg_at_k(ref, ranking_of({"c", "b", "a"}), 3) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(ndcg_at_k(ref, ranking_of({"c", "b", "a"}), 3) == doctest::Approx(0.6199).epsilon(1e-4));
  CHECK(ndcg_at_k(ref, ranking_of({"b", "a", "c"}), 1) == 0.5);
  CHECK_THROWS_AS(ndcg_at_k(ref, ranking_of({"a", "b", "d"}), 2), Error);
  CHECK_THROWS_AS(ndcg_at_k(ref, ref, 0), Error);
  CHECK_THROWS_AS(ndcg_at_k(ref, ref, 4), Error);
  CHECK(ndcg_at_k(ref, ranking_of({"b", "a", "c"}), 2, Gain::exponential) ==
        doctest::Approx((1.0 + 3.0 / std::log2(3.0)) / (3.0 + 1.0 / std::log2(3.0))));
}

TEST_CASE("ndcg equals the direct formula on every permutation") {
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<std::string> ops;
    for (std::size_t i = 0; i < n; ++i) ops.push_back(std::string(1, static_cast<char>('p' + i)));
    const auto ref = ranking_of(ops);
    auto perm = ops;
    std::sort(perm.begin(), perm.end());
    do {
      const auto cand = ranking_of(perm);
      for (std::size_t k = 1; k <= n; ++k) {
        const double v = ndcg_at_k(ref, cand, k);
        CHECK(v == direct_ndcg(ops, perm, k));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK((ndcg_at_k(ref, cand, n) == 1.0) == (perm == ops));
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST_CASE("ndcg is invariant to relabeling") {
  const auto ref = ranking_of({"a", "b", "c", "d"});
  const auto cand = ranking_of({"c", "a", "d", "b"});
  const auto ref2 = ranking_of({"w", "x", "y", "z"});
  const auto cand2 = ranking_of({"y", "w", "z", "x"});
  for (std::size_t k = 1; k <= 4; ++k) CHECK(ndcg_at_k(ref, cand, k) == ndcg_at_k(ref2, cand2, k));
}

TEST_CASE("report statistics") {
  const auto c = cell_stats({0.6, 0.8});
  CHECK(c.mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(c.std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(cell_stats({0.3}).std == 0.0);

  const auto truth = ranking_of({"a", "b", "c", "d", "e", "f"});
  const std::vector<RunRecord> runs = {{"random", 1.0, truth}, {"random", 1.0, truth}, {"sclcs", 0.1, ranking_of({"b", "a", "c", "d", "e", "f"})}};
  const std::vector<std::size_t> ks = {5, 10};
  const auto rep = consistency_report(truth, runs, ks);
  for (const auto& [k, by_ratio] : rep.cells.at("random")) {
    CHECK(by_ratio.at(ratio_label(1.0)).mean == 1.0);
    CHECK(by_ratio.at(ratio_label(1.0)).std == 0.0);
  }
  CHECK(rep.cells.at("sclcs").at("ndcg@5").at(ratio_label(0.1)).mean < 1.0);
  const auto j = rep.to_json();
  CHECK(j["random"]["ndcg@5"][ratio_label(1.0)]["mean"] == 1.0);
}

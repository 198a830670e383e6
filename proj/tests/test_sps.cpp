#include "doctest.h"
#include "rankcore/sps.hpp"
#include "test_util.hpp"

using namespace rankcore;
using namespace rankcore::sps;

namespace {

using Snapshots = std::map<std::string, Matrix>;

// Batch oracle: keeps every snapshot and sums the transitions afterwards.
std::map<std::string, double> batch_sps(const std::vector<Snapshots>& epochs) {
  std::map<std::string, double> out;
  for (const auto& [id, m] : epochs.front()) {
    double sum = 0.0;
    for (std::size_t e = 1; e < epochs.size(); ++e) sum += (epochs[e].at(id) - epochs[e - 1].at(id)).squaredNorm();
    out[id] = sum / static_cast<double>(epochs.size() - 1);
  }
  return out;
}

std::vector<Snapshots> random_epochs(int l, int m, std::uint64_t seed) {
  std::vector<Snapshots> out;
  for (int e = 0; e < l; ++e) {
    Snapshots s;
    for (int i = 0; i < m; ++i)
      s["s" + std::to_string(i)] = testutil::random_matrix(4, 4, seed + static_cast<std::uint64_t>(e * 100 + i));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("identical snapshots accumulate nothing") {
  SpsAccumulator acc;
  const Snapshots s = {{"a", Matrix::Identity(3, 3)}};
  for (int e = 0; e < 10; ++e) acc.update(s);
  CHECK(acc.running_sums().at("a") == 0.0);
  CHECK(acc.finalize().scores.at("a") == 0.0);
}

TEST_CASE("alternating snapshots") {
  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  b(0, 0) = 2.0;  // squared Frobenius distance 4
  SpsAccumulator acc;
  for (int e = 0; e < 5; ++e) acc.update({{"x", e % 2 ? b : a}, {"frozen", a}});
  CHECK(acc.running_sums().at("x") == 16.0);
  const auto r = acc.finalize();
  CHECK(r.scores.at("x") == 4.0);
  CHECK(r.epochs == 4);
  CHECK(r.scores.at("frozen") < r.scores.at("x"));
  CHECK(acc.last_deltas().at("x") == 4.0);
  CHECK(acc.mean_last_delta() == 2.0);
}

TEST_CASE("degenerate and drifting inputs") {
  SpsAccumulator acc;
  acc.update({{"a", Matrix::Zero(2, 2)}});
  CHECK(acc.running_sums().at("a") == 0.0);
  CHECK_THROWS_AS(acc.finalize(), Error);
  CHECK_THROWS_AS(acc.update({{"b", Matrix::Zero(2, 2)}}), Error);
  CHECK_THROWS_AS(acc.update({{"a", Matrix::Zero(3, 3)}}), Error);
  CHECK_THROWS_AS(acc.update({{"a", Matrix::Zero(2, 2)}, {"b", Matrix::Zero(2, 2)}}), Error);
}

TEST_CASE("streaming equals the batch oracle exactly") {
  const auto epochs = random_epochs(10, 5, 1);
  SpsAccumulator acc;
  for (const auto& s : epochs) acc.update(s);
  CHECK(acc.finalize().scores == batch_sps(epochs));
}

TEST_CASE("scores scale quadratically") {
  const auto epochs = random_epochs(6, 3, 7);
  const double c = 2.5;
  std::vector<Snapshots> scaled;
  for (const auto& s : epochs) {
    Snapshots t;
    for (const auto& [id, m] : s) t[id] = epochs.front().at(id) + c * (m - epochs.front().at(id));
    scaled.push_back(std::move(t));
  }
  SpsAccumulator a, b;
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    a.update(epochs[e]);
    b.update(scaled[e]);
  }
  const auto ra = a.finalize(), rb = b.finalize();
  for (const auto& [id, s] : ra.scores) CHECK(rb.scores.at(id) == doctest::Approx(c * c * s).epsilon(1e-12));
}

TEST_CASE("consistency trace") {
  Rng rng(2024);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> stream(10000);
  for (auto& v : stream) v = u(rng);
  const std::vector<std::size_t> cps = {100, 1000, 10000};
  const auto means = consistency_trace(stream, cps);
  REQUIRE(means.size() == 3);
  CHECK(std::abs(means[2] - 1.0) < 0.05);

  const std::vector<double> constant(500, 0.375);
  for (double m : consistency_trace(constant, std::vector<std::size_t>{1, 7, 500})) CHECK(m == 0.375);
  CHECK_THROWS_AS(consistency_trace(std::vector<double>{}, cps), Error);
  CHECK_THROWS_AS(consistency_trace(constant, std::vector<std::size_t>{501}), Error);
}

TEST_CASE("two-prototype stream approaches its analytic mean") {
  // Draws alternate between two prototypes at squared distance D = 4 with equal weights: E[delta] = 4 * (1 - 0.5) = 2.
  Rng rng(11);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> stream;
  bool prev = coin(rng);
  for (int e = 0; e < 20000; ++e) {
    const bool cur = coin(rng);
    stream.push_back(cur == prev ? 0.0 : 4.0);
    prev = cur;
  }
  const auto m = consistency_trace(stream, std::vector<std::size_t>{20000});
  CHECK(std::abs(m[0] - 2.0) < 0.1);
}

TEST_CASE("csv round-trip") {
  testutil::TempDir dir("sps");
  SpsRecord r;
  r.scores = {{"a#0", 0.125}, {"b#1", 1.0 / 3.0}};
  r.epochs = 12;
  write_sps_csv(r, dir / "sps.csv");
  CHECK(read_file(dir / "sps.csv").rfind("sample_id,sps,epochs\n", 0) == 0);
  const auto back = read_sps_csv(dir / "sps.csv");
  CHECK(back.epochs == 12);
  CHECK(back.scores.at("a#0") == 0.125);
  CHECK(back.scores.at("b#1") == doctest::Approx(1.0 / 3.0).epsilon(1e-11));
  atomic_write(dir / "bad.csv", "sample_id,sps,epochs\na,-1,3\n");
  CHECK_THROWS_AS(read_sps_csv(dir / "bad.csv"), ParseError);
}

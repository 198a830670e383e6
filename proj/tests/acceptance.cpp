// Acceptance run: one PASS/FAIL line per criterion. `acceptance 3 8` runs a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>

#include "rankcore/benchmark.hpp"
#include "rankcore/encoder.hpp"
#include "rankcore/kernels.hpp"
#include "rankcore/pipeline.hpp"
#include "rankcore/sps.hpp"
#include "rankcore/theory.hpp"
#include "rankcore/training.hpp"
#include "test_util.hpp"

using namespace rankcore;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Contrastive loss of the encoder's pooled outputs as a function of the parameters.
double composite_loss(const encoder::EncoderParams& p, const std::vector<Matrix>& xs,
                      const std::vector<std::string>& subjects) {
  std::vector<Vector> z;
  for (const auto& x : xs) z.push_back(encoder::forward(p, x, false).pooled);
  return training::contrastive_loss(z, subjects, 0.2, true).loss;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  double worst_enc = 0.0, worst_loss = 0.0, worst_chain = 0.0;
  const std::vector<std::string> subjects = {"a", "a", "b", "b"};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = encoder::init_params(12, 2, 3, 3, 3, seed);
    p.fusion_logits = testutil::random_vector(2, seed + 77);
    std::vector<Matrix> xs;
    for (std::uint64_t i = 0; i < 4; ++i) xs.push_back(testutil::random_matrix(5, 12, seed * 10 + i + 100));

    // Encoder against a random linear probe of (pooled, fused).
    const Vector gz = testutil::random_vector(3, seed + 200);
    const Matrix ga = testutil::random_matrix(5, 5, seed + 300);
    const auto probe = [&](const encoder::EncoderParams& q) {
      const auto o = encoder::forward(q, xs[0], false);
      return gz.dot(o.pooled) + (ga.array() * o.fused.array()).sum();
    };
    const auto g = encoder::backward(p, encoder::forward(p, xs[0]), gz, &ga);

    // Loss against its embeddings.
    std::vector<Vector> z;
    for (const auto& x : xs) z.push_back(encoder::forward(p, x, false).pooled);
    const auto lr = training::contrastive_loss(z, subjects, 0.2, true);
    for (std::size_t i = 0; i < z.size(); ++i)
      for (Eigen::Index k = 0; k < z[i].size(); ++k) {
        const double orig = z[i](k);
        z[i](k) = orig + h;
        const double up = training::contrastive_loss(z, subjects, 0.2, true).loss;
        z[i](k) = orig - h;
        const double down = training::contrastive_loss(z, subjects, 0.2, true).loss;
        z[i](k) = orig;
        worst_loss = std::max(worst_loss, testutil::rel_err(lr.grads[i](k), (up - down) / (2 * h)));
      }

    // Full chain: loss through the encoder to every parameter.
    std::vector<const Matrix*> ptr;
    for (const auto& x : xs) ptr.push_back(&x);
    const auto outs = kernels::serial::forward_batch(p, ptr, true);
    const auto chain = kernels::serial::gradient_sum(p, outs, lr.grads, {});

    auto q = p;
    auto qb = q.buffers();
    const auto gb = g.buffers(), cb = chain.buffers();
    for (std::size_t b = 0; b < qb.size(); ++b)
      for (std::size_t i = 0; i < qb[b].size(); ++i) {
        const double orig = qb[b][i];
        qb[b][i] = orig + h;
        const double pu = probe(q), lu = composite_loss(q, xs, subjects);
        qb[b][i] = orig - h;
        const double pd = probe(q), ld = composite_loss(q, xs, subjects);
        qb[b][i] = orig;
        worst_enc = std::max(worst_enc, testutil::rel_err(gb[b][i], (pu - pd) / (2 * h)));
        worst_chain = std::max(worst_chain, testutil::rel_err(cb[b][i], (lu - ld) / (2 * h)));
      }
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_enc, worst_loss, worst_chain});
  return {worst < 1e-4 && secs < 30.0,
          "max rel err encoder " + format_sig(worst_enc, 3) + ", loss " + format_sig(worst_loss, 3) + ", chained " +
              format_sig(worst_chain, 3) + "; " + format_sig(secs, 3) + " s"};
}

Outcome structure() {
  double worst_row = 0.0, min_entry = 0.0, worst_alpha = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto p = encoder::init_params(10, 3, 4, 4, 4, s);
    p.fusion_logits = testutil::random_vector(3, s + 500, 3.0);
    const auto out = encoder::forward(p, testutil::random_matrix(6, 10, s + 1000, 1.0 + static_cast<double>(s % 5)));
    std::vector<const Matrix*> mats = {&out.fused};
    for (const auto& a : out.per_head) mats.push_back(&a);
    for (const auto* a : mats) {
      worst_row = std::max(worst_row, (a->rowwise().sum().array() - 1.0).abs().maxCoeff());
      min_entry = std::min(min_entry, a->minCoeff());
    }
    const Vector alpha = p.fusion_weights();
    worst_alpha = std::max(worst_alpha, std::abs(alpha.sum() - 1.0));
    min_entry = std::min(min_entry, alpha.minCoeff());
  }
  return {worst_row <= 1e-9 && min_entry >= 0.0 && worst_alpha <= 1e-12,
          "max |row sum - 1| " + format_sig(worst_row, 3) + ", min entry " + format_sig(min_entry, 3) +
              ", max |sum alpha - 1| " + format_sig(worst_alpha, 3)};
}

Outcome interference() {
  const auto r = theory::run_validators("interference", 0)["interference"];
  std::set<int> heads;
  std::size_t runs = 0;
  for (const auto& run : r["runs"]) {
    heads.insert(run["heads"].get<int>());
    runs += !run["skipped"].get<bool>();
  }
  return {r["pass"].get<bool>() && runs == 60 && heads == std::set<int>{2, 4, 8},
          std::to_string(runs) + " runs over H in {2,4,8} x 20 seeds"};
}

Outcome mixture() {
  const auto r = theory::run_validators("mixture", 0)["mixture"];
  const auto& iso = r["isotropic"];
  std::size_t bounded = 0;
  for (const auto& m : r["random_k3"]) bounded += m["bounds_ok"].get<bool>();
  const double mean = iso["empirical_mean_delta"].get<double>(), se = iso["standard_error"].get<double>();
  const bool ok = iso["trials"].get<std::size_t>() == 10000 && iso["analytic_value"].get<double>() == 2.0 &&
                  std::abs(mean - 2.0) <= 4.0 * se && bounded == 10;
  return {ok, "mean " + format_sig(mean, 5) + " vs 2 (SE " + format_sig(se, 3) + "); Gini bounds " +
                  std::to_string(bounded) + "/10"};
}

Outcome topk() {
  const auto t0 = Clock::now();
  const auto r = theory::run_validators("topk", 0)["topk"];
  const double secs = seconds_since(t0);
  const auto& last = r["per_n"].back();
  const double trials = r["trials"].get<double>();
  const double se = last["binomial_se"].get<double>() / std::sqrt(trials);
  const double pi_hat = last["pi_hat_mean"].get<double>();
  const bool ok = last["n"].get<std::size_t>() == 100000 && std::abs(r["limit"].get<double>() - 0.75) < 1e-9 &&
                  std::abs(r["delta"].get<double>() - 0.25) < 1e-9 && std::abs(pi_hat - 0.75) <= 3.0 * se &&
                  r["delta_k_within_tolerance"].get<bool>() && r["pass"].get<bool>() && secs < 60.0;
  return {ok, "pi_hat " + format_sig(pi_hat, 6) + " vs 0.75 (3 SE = " + format_sig(3 * se, 3) + "), Delta_k " +
                  format_sig(last["delta_k_mean"].get<double>(), 5) + " vs 0.5; " + format_sig(secs, 3) + " s"};
}

Outcome consistency() {
  Rng rng(derive_seed(0, 90));
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> stream(10000);
  for (auto& v : stream) v = u(rng);
  const double mean = sps::consistency_trace(stream, std::vector<std::size_t>{10000})[0];

  // Batch oracle on L = 10 epochs, M = 5 samples.
  std::vector<std::map<std::string, Matrix>> epochs(10);
  for (std::size_t e = 0; e < 10; ++e)
    for (int i = 0; i < 5; ++i)
      epochs[e]["s" + std::to_string(i)] = testutil::random_matrix(4, 4, 7000 + e * 10 + static_cast<std::uint64_t>(i));
  sps::SpsAccumulator acc;
  for (const auto& s : epochs) acc.update(s);
  const auto streamed = acc.finalize().scores;
  bool exact = true;
  for (const auto& [id, m] : epochs.front()) {
    double sum = 0.0;
    for (std::size_t e = 1; e < epochs.size(); ++e) sum += (epochs[e].at(id) - epochs[e - 1].at(id)).squaredNorm();
    exact &= streamed.at(id) == sum / 9.0;
  }
  return {std::abs(mean - 1.0) < 0.05 && exact,
          "running mean " + format_sig(mean, 5) + " at L=10^4; streaming " + (exact ? "==" : "!=") + " batch oracle"};
}

Outcome coverage_discrepancy() {
  const auto r = theory::run_validators("coverage", 0)["coverage"];
  const auto d = theory::run_validators("discrepancy", 0)["discrepancy"];
  const double delta = r["delta"].get<double>();
  const double se = std::sqrt(delta * (1 - delta) / r["trials"].get<double>());
  const double cov = r["empirical_coverage"].get<double>();
  const double disc = d["discrepancy"].get<double>(), bound = d["bound"].get<double>();
  return {cov >= 1.0 - delta - 3.0 * se && r["pass"].get<bool>() && disc <= bound && d["pass"].get<bool>(),
          "coverage " + format_sig(cov, 4) + " at m=" + std::to_string(r["m_evaluated"].get<std::size_t>()) +
              (r["vacuous"].get<bool>() ? " (bound vacuous, capped at n)" : "") + "; discrepancy " +
              format_sig(disc, 4) + " <= " + format_sig(bound, 4)};
}

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

benchmark::Ranking ranking_of(const std::vector<std::string>& order) {
  benchmark::Ranking r;
  for (std::size_t i = 0; i < order.size(); ++i)
    r.entries.push_back({order[i], static_cast<double>(order.size() - i), static_cast<int>(i + 1)});
  return r;
}

Outcome ndcg() {
  std::size_t checked = 0, mismatched = 0, identity_bad = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<std::string> ops;
    for (std::size_t i = 0; i < n; ++i) ops.push_back("op" + std::to_string(i));
    const auto ref = ranking_of(ops);
    auto perm = ops;
    do {
      const auto cand = ranking_of(perm);
      for (std::size_t k = 1; k <= n; ++k) {
        ++checked;
        const double v = benchmark::ndcg_at_k(ref, cand, k);
        mismatched += v != direct_ndcg(ops, perm, k);
        if (perm == ops) identity_bad += v != 1.0;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return {mismatched == 0 && identity_bad == 0,
          std::to_string(checked) + " (permutation, k) cases, " + std::to_string(mismatched) + " mismatches"};
}

Outcome universal() {
  const auto t0 = Clock::now();
  const auto r = theory::run_validators("universal", 0)["universal"];
  const double secs = seconds_since(t0);
  const auto n_ops = r["table"].size();
  const auto dec = r["decreased"].get<std::size_t>(), half = r["halved"].get<std::size_t>(),
             gen = r["test_within_25pct"].get<std::size_t>();
  return {n_ops >= 8 && dec == n_ops && half >= 6 && gen == n_ops && secs < 900.0,
          std::to_string(n_ops) + " operators: " + std::to_string(dec) + " decreased, " + std::to_string(half) +
              " halved, " + std::to_string(gen) + " test within 25%; " + format_sig(secs, 4) + " s"};
}

pipeline::PipelineConfig default_experiment(const std::filesystem::path& out) {
  pipeline::PipelineConfig cfg;
  cfg.out_dir = out;
  cfg.cache_dir = out / "cache";
  cfg.seeds = {0, 1, 2, 3, 4};
  return cfg;
}

std::filesystem::path scratch_root() {
  static const auto root = [] {
    auto p = std::filesystem::temp_directory_path() / ("rankcore-acceptance-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
  }();
  return root;
}

// The first default-experiment run is shared by criteria 10 and 11.
const nlohmann::json& first_report(double* secs = nullptr) {
  static double elapsed = 0.0;
  static const nlohmann::json report = [] {
    const auto t0 = Clock::now();
    auto r = pipeline::run_pipeline(default_experiment(scratch_root() / "run1")).report;
    elapsed = seconds_since(t0);
    return r;
  }();
  if (secs) *secs = elapsed;
  return report;
}

Outcome directional() {
  double secs = 0.0;
  const auto& r = first_report(&secs);
  const auto label = benchmark::ratio_label(0.1);
  auto cell = [&](const char* task, const char* method) {
    return r["tasks"][task]["methods"][method]["ndcg@10"][label]["mean"].get<double>();
  };
  const double dx_dense = cell("diagnosis", "sclcs-dense"), dx_rand = cell("diagnosis", "random");
  const double fp_sclcs = cell("fingerprint", "sclcs"), fp_rand = cell("fingerprint", "random");
  const auto n_ops = r["operators"].size();
  const auto subjects = r["dataset"]["subjects"].get<std::size_t>();
  const bool ok = dx_dense > dx_rand - 0.05 && fp_sclcs > fp_rand - 0.05 && n_ops == 20 && subjects == 60 &&
                  r["config"]["seeds"].size() == 5 && secs < 1800.0;
  return {ok, "diagnosis sclcs-dense " + format_sig(dx_dense, 4) + " vs random " + format_sig(dx_rand, 4) +
                  "; fingerprint sclcs " + format_sig(fp_sclcs, 4) + " vs random " + format_sig(fp_rand, 4) + "; " +
                  format_sig(secs, 4) + " s"};
}

Outcome determinism() {
  first_report();
  const auto a = read_file(scratch_root() / "run1" / "report.json");
  const auto r2 = pipeline::run_pipeline(default_experiment(scratch_root() / "run2"));
  const auto b = read_file(r2.report_path);
  std::size_t hits = 0;
  for (const auto& [stage, hit] : r2.cache_hits) hits += hit;
  return {a == b && hits == 0, "independent run with a fresh cache: reports " + std::string(a == b ? "" : "NOT ") +
                                   "byte-identical (" + std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  log::set_quiet(true);
  ::unsetenv("RANKCORE_CACHE");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"attention structure", structure},
      {"multi-head interference", interference},
      {"prototype mixture", mixture},
      {"top-k selection bias", topk},
      {"sps consistency", consistency},
      {"coverage and discrepancy", coverage_discrepancy},
      {"ndcg oracle", ndcg},
      {"universal approximation", universal},
      {"end-to-end direction", directional},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  std::filesystem::remove_all(scratch_root(), ec);
  return failed == 0 ? 0 : 1;
}

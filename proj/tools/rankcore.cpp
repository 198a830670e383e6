// rankcore command-line driver.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rankcore/benchmark.hpp"
#include "rankcore/dataset.hpp"
#include "rankcore/encoder.hpp"
#include "rankcore/kernels.hpp"
#include "rankcore/pipeline.hpp"
#include "rankcore/selection.hpp"
#include "rankcore/spi.hpp"
#include "rankcore/sps.hpp"
#include "rankcore/theory.hpp"
#include "rankcore/training.hpp"

namespace fs = std::filesystem;
using namespace rankcore;

namespace {

struct Globals {
  int jobs = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& j) { atomic_write(p, j.dump(2) + "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rankcore: ranking-preserving core-sets for pairwise-interaction benchmarks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--jobs", g.jobs, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
  app.add_flag("--quiet", g.quiet, "Suppress JSON log lines on stderr");
  app.fallthrough();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_config, gen_out;
  bool gen_raw = false;
  gen->add_option("--config", gen_config, "SynthConfig JSON (defaults when omitted)");
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_flag("--raw", gen_raw, "Keep full-length series (no windowing)");

  // spi
  auto* spi_cmd = app.add_subcommand("spi", "Compute FC matrices for every (operator, sample)");
  std::string spi_data, spi_out, spi_ops, spi_params;
  bool spi_force = false;
  spi_cmd->add_option("--data", spi_data)->required();
  spi_cmd->add_option("--out", spi_out)->required();
  spi_cmd->add_option("--ops", spi_ops, "Comma-separated operator names (default: all)");
  spi_cmd->add_option("--params", spi_params, "JSON {operator: {param: value}} overrides");
  spi_cmd->add_flag("--force", spi_force, "Recompute existing files");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the fused attention to an operator's FC");
  std::string fit_data, fit_target, fit_out, fit_config;
  fit->add_option("--data", fit_data)->required();
  fit->add_option("--target", fit_target)->required();
  fit->add_option("--out", fit_out)->required();
  fit->add_option("--config", fit_config, "FitConfig JSON");

  // train
  auto* train = app.add_subcommand("train", "Contrastive training with SPS tracking");
  std::string train_data, train_out, train_config;
  int train_epochs = -1;
  double train_lr = -1.0;
  train->add_option("--data", train_data)->required();
  train->add_option("--out", train_out)->required();
  train->add_option("--config", train_config, "TrainConfig JSON");
  train->add_option("--epochs", train_epochs);
  train->add_option("--lr", train_lr);

  // select
  auto* sel = app.add_subcommand("select", "Build a core-set");
  std::string sel_method, sel_sps, sel_out, sel_fc, sel_ref = "pearson";
  double sel_ratio = 0.1, sel_beta = 0.2;
  sel->add_option("--method", sel_method)->required()->check(CLI::IsMember({"sclcs", "sclcs-dense", "random", "kmeans"}));
  sel->add_option("--sps", sel_sps, "sps.csv (sample universe for every method)")->required();
  sel->add_option("--ratio", sel_ratio);
  sel->add_option("--beta", sel_beta);
  sel->add_option("--fc", sel_fc, "FC store (kmeans)");
  sel->add_option("--reference-op", sel_ref, "FC operator used as k-means features");
  sel->add_option("--out", sel_out)->required();

  // rank
  auto* rank = app.add_subcommand("rank", "Rank operators by discriminability");
  std::string rank_fc, rank_subset, rank_task = "fingerprint", rank_out;
  bool rank_full = false;
  std::size_t rank_cap = 20000;
  rank->add_option("--fc", rank_fc)->required();
  auto* subset_opt = rank->add_option("--subset", rank_subset, "coreset.json");
  auto* full_opt = rank->add_flag("--full", rank_full, "Use every sample");
  subset_opt->excludes(full_opt);
  rank->add_option("--task", rank_task)->check(CLI::IsMember({"fingerprint", "diagnosis"}));
  rank->add_option("--pair-cap", rank_cap);
  rank->add_option("--out", rank_out)->required();

  // report
  auto* report = app.add_subcommand("report", "nDCG agreement of run rankings with a reference");
  std::string rep_truth, rep_runs, rep_out, rep_ks = "5,10,20";
  report->add_option("--truth", rep_truth)->required();
  report->add_option("--runs", rep_runs, "Comma-separated ranking files written by `rank --subset`")->required();
  report->add_option("--ks", rep_ks);
  report->add_option("--out", rep_out)->required();

  // validate
  auto* val = app.add_subcommand("validate", "Run the theory validators");
  std::string val_which = "all", val_out;
  val->add_option("--which", val_which)
      ->check(CLI::IsMember(
          {"interference", "mixture", "topk", "coverage", "discrepancy", "consistency", "universal", "all"}));
  val->add_option("--out", val_out)->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run the full experiment grid");
  std::string pipe_config, pipe_out;
  bool pipe_validate = false;
  pipe->add_option("--config", pipe_config, "PipelineConfig JSON");
  pipe->add_option("--out", pipe_out, "Output directory (overrides the config)");
  pipe->add_flag("--validate", pipe_validate, "Also run every theory validator");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;
  log::set_quiet(g.quiet);
  kernels::set_max_threads(g.jobs);

  try {
    if (*gen) {
      dataset::SynthConfig sc = gen_config.empty() ? dataset::SynthConfig{} : dataset::SynthConfig::from_json(read_json(gen_config));
      if (g.seed_set) sc.seed = g.seed;
      sc.validate();
      auto d = dataset::generate_synthetic(sc);
      if (!gen_raw) d = dataset::window_dataset(d, sc.window_len, sc.stride);
      dataset::save_dataset(d, gen_out);
      std::cout << "wrote " << d.size() << " samples (" << d.subject_ids().size() << " subjects) to " << gen_out << "\n";
    } else if (*spi_cmd) {
      spi::ParamOverrides overrides;
      if (!spi_params.empty()) overrides = read_json(spi_params).get<spi::ParamOverrides>();
      const auto names = split_list(spi_ops);
      const auto ops = names.empty() ? spi::registry(overrides) : spi::select_operators(names, overrides);
      const auto d = dataset::load_dataset(spi_data);
      const auto s = spi::compute_all(d, ops, spi_out, {spi_force, g.jobs});
      std::cout << "computed " << s.computed << ", skipped " << s.skipped << ", failed " << s.failed << "\n";
      for (const auto& f : s.failures) std::cout << "  " << f << "\n";
      return s.failed ? 1 : 0;
    } else if (*fit) {
      auto cfg = fit_config.empty() ? encoder::FitConfig{} : encoder::FitConfig::from_json(read_json(fit_config));
      if (g.seed_set) cfg.seed = g.seed;
      const auto d = dataset::load_dataset(fit_data);
      const auto rep = encoder::fit_to_target(d, spi::find_operator(fit_target), cfg);
      write_json(fit_out, rep.to_json());
      std::cout << fit_target << ": train MSE " << rep.train_mse_start << " -> " << rep.train_mse_end << ", test "
                << rep.test_mse << "\n";
    } else if (*train) {
      auto cfg = train_config.empty() ? training::TrainConfig{} : training::TrainConfig::from_json(read_json(train_config));
      if (g.seed_set) cfg.seed = g.seed;
      if (train_epochs > 0) cfg.epochs = train_epochs;
      if (train_lr >= 0.0) cfg.adam.lr = train_lr;
      const auto d = dataset::load_dataset(train_data);
      const auto r = training::train(d, cfg);
      const fs::path out(train_out);
      encoder::save_params(r.params, out / "params.bin");
      sps::write_sps_csv(r.sps, out / "sps.csv");
      training::write_trace_csv(r.trace, out / "trace.csv");
      std::cout << "loss " << r.trace.initial_loss << " -> " << r.trace.epochs.back().loss << " over " << cfg.epochs
                << " epochs; SPS for " << r.sps.scores.size() << " samples\n";
    } else if (*sel) {
      const auto rec = sps::read_sps_csv(sel_sps);
      const auto m = std::max<std::size_t>(1, selection::coreset_size(sel_ratio, rec.scores.size()));
      selection::CoreSet c;
      if (sel_method == "sclcs") {
        c = selection::select_topk_sps(rec, m);
      } else if (sel_method == "sclcs-dense") {
        selection::DensityOptions o;
        o.beta = sel_beta;
        o.seed = g.seed;
        c = selection::select_density_balanced(rec, m, o);
      } else if (sel_method == "random") {
        std::vector<std::string> ids;
        for (const auto& [id, s] : rec.scores) ids.push_back(id);
        c = selection::select_random(ids, m, g.seed);
      } else {
        if (sel_fc.empty()) throw Error("select: --fc is required for kmeans");
        c = selection::select_kmeans(spi::FcStore(sel_fc), sel_ref, m, g.seed);
      }
      c.ratio = sel_ratio;
      selection::write_coreset(c, sel_out);
      std::cout << c.method << ": " << c.sample_ids.size() << " samples -> " << sel_out << "\n";
    } else if (*rank) {
      if (!rank_full && rank_subset.empty()) throw Error("rank: pass --subset <coreset.json> or --full");
      const spi::FcStore store(rank_fc);
      benchmark::DiscriminabilityOptions o;
      o.pair_cap = rank_cap;
      o.seed = g.seed;
      std::vector<std::string> ids;
      nlohmann::json extra = nlohmann::json::object();
      if (!rank_full) {
        const auto c = selection::read_coreset(rank_subset);
        ids = c.sample_ids;
        extra = {{"method", c.method}, {"ratio", c.ratio}};
      }
      const auto r = benchmark::rank_spis(store, ids, benchmark::parse_task(rank_task), o);
      auto j = r.to_json();
      j.update(extra);
      write_json(rank_out, j);
      for (const auto& e : r.entries) std::cout << e.rank << "\t" << e.op << "\t" << e.score << "\n";
    } else if (*report) {
      const auto truth = benchmark::read_ranking(rep_truth);
      std::vector<benchmark::RunRecord> runs;
      for (const auto& f : split_list(rep_runs)) {
        const auto j = read_json(f);
        runs.push_back({j.value("method", std::string("run")), j.value("ratio", 1.0), benchmark::Ranking::from_json(j)});
      }
      std::vector<std::size_t> ks;
      for (const auto& k : split_list(rep_ks)) ks.push_back(static_cast<std::size_t>(std::stoul(k)));
      const auto rep = benchmark::consistency_report(truth, runs, ks);
      const nlohmann::json out = {{"conventions", {{"ndcg_gain", "linear: rel = n_operators - reference_rank"},
                                                   {"std", "population (divide by number of runs)"}}},
                                  {"task", benchmark::task_name(truth.task)},
                                  {"methods", rep.to_json()}};
      write_json(rep_out, out);
      std::cout << out["methods"].dump(2) << "\n";
    } else if (*val) {
      const auto rep = theory::run_validators(val_which, g.seed);
      write_json(val_out, rep);
      for (const auto& [name, r] : rep.items())
        if (r.is_object()) std::cout << (r["pass"].get<bool>() ? "PASS " : "FAIL ") << name << "\n";
      return rep["pass"].get<bool>() ? 0 : 2;
    } else if (*pipe) {
      auto cfg = pipe_config.empty() ? pipeline::PipelineConfig{} : pipeline::PipelineConfig::from_json(read_json(pipe_config));
      if (!pipe_out.empty()) cfg.out_dir = pipe_out;
      if (g.seed_set) cfg.seeds = {g.seed};
      if (g.jobs) cfg.jobs = g.jobs;
      const auto res = pipeline::run_pipeline(cfg);
      for (const auto& [stage, hit] : res.cache_hits)
        std::cout << stage << ": " << (hit ? "cache hit" : "computed") << "\n";
      for (const auto& [task, t] : res.report["tasks"].items())
        for (const auto& [method, by_k] : t["methods"].items())
          for (const auto& [k, by_r] : by_k.items())
            for (const auto& [r, c] : by_r.items())
              std::printf("%-12s %-12s %-8s ratio %-5s %.4f +- %.4f\n", task.c_str(), method.c_str(), k.c_str(),
                          r.c_str(), c["mean"].get<double>(), c["std"].get<double>());
      std::cout << "report: " << res.report_path.string() << "\n";
      if (pipe_validate) {
        const auto rep = theory::run_validators("all", cfg.seeds.front());
        write_json(cfg.out_dir / "validation.json", rep);
        if (!rep["pass"].get<bool>()) {
          std::cerr << "validation failed; see " << (cfg.out_dir / "validation.json").string() << "\n";
          return 2;
        }
      }
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

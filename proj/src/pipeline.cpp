#include "rankcore/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include "rankcore/selection.hpp"
#include "rankcore/spi.hpp"
#include "rankcore/sps.hpp"

namespace rankcore::pipeline {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
  synth.validate();
  train.validate();
  if (seeds.empty()) throw Error("pipeline: need at least one seed");
  if (ratios.empty()) throw Error("pipeline: need at least one ratio");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw Error("pipeline: ratios must be in (0, 1]");
  static const std::set<std::string> known = {"sclcs", "sclcs-dense", "random", "kmeans"};
  if (methods.empty()) throw Error("pipeline: need at least one method");
  for (const auto& m : methods)
    if (!known.count(m)) throw Error("pipeline: unknown method '" + m + "'");
  if (tasks.empty() || ks.empty()) throw Error("pipeline: need at least one task and one k");
  for (auto k : ks)
    if (k < 1) throw Error("pipeline: k must be >= 1");
  if (!(beta >= 0.0 && beta < 1.0)) throw Error("pipeline: beta must be in [0, 1)");
  if (!operators.empty()) spi::select_operators(operators);
}

nlohmann::json PipelineConfig::to_json() const {
  auto tr = train.to_json();
  tr.erase("seed");
  nlohmann::json task_names = nlohmann::json::array();
  for (auto t : tasks) task_names.push_back(benchmark::task_name(t));
  return {{"synth", synth.to_json()}, {"train", tr},       {"operators", operators}, {"methods", methods},
          {"ratios", ratios},         {"seeds", seeds},    {"tasks", task_names},    {"ks", ks},
          {"beta", beta},             {"pair_cap", pair_cap}, {"reference_op", reference_op}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"].get<std::string>();
    if (j.contains("synth")) c.synth = dataset::SynthConfig::from_json(j["synth"]);
    if (j.contains("train")) c.train = training::TrainConfig::from_json(j["train"]);
    c.operators = j.value("operators", c.operators);
    c.methods = j.value("methods", c.methods);
    c.ratios = j.value("ratios", c.ratios);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j["tasks"]) c.tasks.push_back(benchmark::parse_task(t.get<std::string>()));
    }
    c.ks = j.value("ks", c.ks);
    c.beta = j.value("beta", c.beta);
    c.pair_cap = j.value("pair_cap", c.pair_cap);
    c.reference_op = j.value("reference_op", c.reference_op);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

fs::path resolve_cache_dir(const PipelineConfig& cfg) {
  if (const char* env = std::getenv("RANKCORE_CACHE"); env && *env) return env;
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  return cfg.out_dir / "cache";
}

namespace {

std::string key_of(const nlohmann::json& j) { return sha256_hex(j.dump()).substr(0, 16); }

template <typename F>
auto in_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error("[" + stage + "] " + e.what());
  }
}

selection::CoreSet choose(const std::string& method, const sps::SpsRecord& sps, const spi::FcStore& store,
                          const PipelineConfig& cfg, double ratio, std::uint64_t seed) {
  const std::size_t n = sps.scores.size();
  const std::size_t m = std::max<std::size_t>(1, selection::coreset_size(ratio, n));
  selection::CoreSet c;
  if (method == "sclcs") {
    c = selection::select_topk_sps(sps, m);
  } else if (method == "sclcs-dense") {
    selection::DensityOptions o;
    o.beta = cfg.beta;
    o.seed = seed;
    o.shrink_beta_to_fit = true;
    c = selection::select_density_balanced(sps, m, o);
  } else if (method == "random") {
    std::vector<std::string> ids;
    for (const auto& [id, s] : sps.scores) ids.push_back(id);
    c = selection::select_random(ids, m, seed);
  } else {
    c = selection::select_kmeans(store, cfg.reference_op, m, seed);
  }
  c.ratio = ratio;
  return c;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const fs::path cache = resolve_cache_dir(cfg);
  fs::create_directories(cache);
  PipelineResult result;
  const auto ops = cfg.operators.empty() ? spi::registry() : spi::select_operators(cfg.operators);
  std::vector<std::string> op_names;
  for (const auto& o : ops) op_names.push_back(o.name);
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "kmeans") != cfg.methods.end() &&
      std::find(op_names.begin(), op_names.end(), cfg.reference_op) == op_names.end())
    throw Error("[config] kmeans reference operator '" + cfg.reference_op + "' is not in the operator list");

  // gen
  const std::string data_key = key_of({{"stage", "gen"}, {"synth", cfg.synth.to_json()}});
  const fs::path data_dir = cache / ("data-" + data_key);
  const auto data = in_stage("gen", [&] {
    if (fs::exists(data_dir / "manifest.json")) {
      result.cache_hits["gen"] = true;
      return dataset::load_dataset(data_dir);
    }
    result.cache_hits["gen"] = false;
    auto d = dataset::window_dataset(dataset::generate_synthetic(cfg.synth), cfg.synth.window_len, cfg.synth.stride);
    dataset::save_dataset(d, data_dir);
    return d;
  });
  log::info("gen", std::string(result.cache_hits["gen"] ? "cache hit" : "generated") + " " + data_dir.string());

  // spi
  nlohmann::json op_json = nlohmann::json::array();
  for (const auto& o : ops) op_json.push_back({{"name", o.name}, {"params", o.params}});
  const std::string fc_key = key_of({{"stage", "spi"}, {"data", data_key}, {"ops", op_json}});
  const fs::path fc_dir = cache / ("fc-" + fc_key);
  in_stage("spi", [&] {
    bool complete = fs::exists(fc_dir / "index.json");
    if (complete) {
      spi::FcStore probe(fc_dir);
      for (const auto& o : ops)
        for (const auto& s : data.samples) complete &= probe.contains(o.name, s.sample_id);
    }
    result.cache_hits["spi"] = complete;
    if (!complete) {
      spi::ComputeOptions opts;
      opts.jobs = cfg.jobs;
      const auto summary = spi::compute_all(data, ops, fc_dir, opts);
      if (summary.failed) throw Error(std::to_string(summary.failed) + " FC computations failed, first: " +
                                      summary.failures.front());
    }
    return 0;
  });
  const spi::FcStore store(fc_dir);
  log::info("spi", std::string(result.cache_hits["spi"] ? "cache hit" : "computed") + " " + fc_dir.string());

  benchmark::DiscriminabilityOptions dopts;
  dopts.pair_cap = cfg.pair_cap;

  // truth rankings
  std::map<benchmark::Task, benchmark::Ranking> truth;
  result.cache_hits["truth"] = true;
  in_stage("truth", [&] {
    for (auto task : cfg.tasks) {
      const fs::path p =
          cache / ("truth-" + key_of({{"fc", fc_key}, {"task", benchmark::task_name(task)}, {"pair_cap", cfg.pair_cap}}) +
                   ".json");
      if (fs::exists(p)) {
        truth[task] = benchmark::read_ranking(p);
      } else {
        result.cache_hits["truth"] = false;
        truth[task] = benchmark::rank_spis(store, {}, task, dopts);
        benchmark::write_ranking(truth[task], p);
      }
    }
    return 0;
  });

  // train + evaluate per seed
  nlohmann::json seed_info = nlohmann::json::object();
  // task -> method -> "ndcg@k" -> ratio -> values across seeds
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>>> cells;
  std::map<std::string, std::map<std::string, std::map<std::string, int>>> undefined;
  result.cache_hits["train"] = true;
  result.cache_hits["evaluate"] = true;
  for (auto seed : cfg.seeds) {
    auto tcfg = cfg.train;
    tcfg.seed = seed;
    const std::string train_key = key_of({{"stage", "train"}, {"data", data_key}, {"train", tcfg.to_json()}});
    const fs::path train_dir = cache / ("train-" + train_key);
    const auto sps_record = in_stage("train", [&] {
      if (!fs::exists(train_dir / "sps.csv")) {
        result.cache_hits["train"] = false;
        const auto tr = training::train(data, tcfg);
        encoder::save_params(tr.params, train_dir / "params.bin");
        training::write_trace_csv(tr.trace, train_dir / "trace.csv");
        atomic_write(train_dir / "summary.json",
                     nlohmann::json{{"initial_loss", tr.trace.initial_loss},
                                    {"final_loss", tr.trace.epochs.back().loss}}
                             .dump(2) +
                         "\n");
        sps::write_sps_csv(tr.sps, train_dir / "sps.csv");
      }
      // Always read back so cached and fresh runs select from identical values.
      auto rec = sps::read_sps_csv(train_dir / "sps.csv");
      rec.provenance = "train-" + train_key;
      return rec;
    });
    seed_info[std::to_string(seed)] = nlohmann::json::parse(read_file(train_dir / "summary.json"));
    log::info("train", "seed " + std::to_string(seed) + " sps ready");

    nlohmann::json eval_key_json = {{"stage", "evaluate"}, {"fc", fc_key},          {"train", train_key},
                                    {"seed", seed},        {"config", cfg.to_json()}};
    eval_key_json["config"].erase("seeds");
    const fs::path eval_path = cache / ("eval-" + key_of(eval_key_json) + ".json");
    const nlohmann::json eval = in_stage("evaluate", [&] {
      if (fs::exists(eval_path)) return nlohmann::json::parse(read_file(eval_path));
      result.cache_hits["evaluate"] = false;
      nlohmann::json runs = nlohmann::json::array();
      for (const auto& method : cfg.methods)
        for (double ratio : cfg.ratios) {
          const auto core = choose(method, sps_record, store, cfg, ratio, seed);
          nlohmann::json run = {{"method", method}, {"ratio", ratio}, {"coreset", core.to_json()}};
          for (auto task : cfg.tasks) {
            const auto tn = benchmark::task_name(task);
            nlohmann::json scores = nlohmann::json::object();
            try {
              const auto r = benchmark::rank_spis(store, core.sample_ids, task, dopts);
              for (auto k : cfg.ks) {
                const auto kk = std::min(k, r.entries.size());
                scores["ndcg@" + std::to_string(k)] = benchmark::ndcg_at_k(truth.at(task), r, kk);
              }
              run["tasks"][tn] = {{"defined", true}, {"ndcg", scores}};
            } catch (const Error& e) {
              for (auto k : cfg.ks) scores["ndcg@" + std::to_string(k)] = 0.0;
              run["tasks"][tn] = {{"defined", false}, {"reason", e.what()}, {"ndcg", scores}};
            }
          }
          runs.push_back(run);
        }
      nlohmann::json out = {{"runs", runs}};
      atomic_write(eval_path, out.dump(2) + "\n");
      return out;
    });
    for (const auto& run : eval["runs"]) {
      const auto method = run["method"].get<std::string>();
      const auto ratio = benchmark::ratio_label(run["ratio"].get<double>());
      for (const auto& [tn, tr] : run["tasks"].items()) {
        for (const auto& [k, v] : tr["ndcg"].items()) cells[tn][method][k][ratio].push_back(v.get<double>());
        if (!tr["defined"].get<bool>()) ++undefined[tn][method][ratio];
      }
    }
    log::info("evaluate", "seed " + std::to_string(seed) + " done");
  }

  nlohmann::json tasks = nlohmann::json::object();
  for (auto task : cfg.tasks) {
    const auto tn = benchmark::task_name(task);
    nlohmann::json methods = nlohmann::json::object();
    for (auto& [method, by_k] : cells[tn])
      for (auto& [k, by_r] : by_k)
        for (auto& [r, v] : by_r) {
          const auto c = benchmark::cell_stats(v);
          methods[method][k][r] = {{"mean", c.mean}, {"std", c.std}, {"per_seed", c.values}};
        }
    nlohmann::json undef = nlohmann::json::object();
    for (auto& [method, by_r] : undefined[tn])
      for (auto& [r, n] : by_r) undef[method][r] = n;
    tasks[tn] = {{"truth", truth.at(task).to_json()}, {"methods", methods}, {"undefined_rankings", undef}};
  }
  result.report = {{"schema", "rankcore-report/1"},
                   {"conventions",
                    {{"ndcg_gain", "linear: rel = n_operators - reference_rank"},
                     {"ndcg_scale", "fraction in [0, 1]"},
                     {"std", "population (divide by number of seeds)"},
                     {"k_above_operator_count", "clamped to the operator count"},
                     {"undefined_ranking", "a core-set without both pair types scores nDCG 0"}}},
                   {"config", cfg.to_json()},
                   {"dataset",
                    {{"samples", data.size()},
                     {"subjects", data.subject_ids().size()},
                     {"n_regions", data.n_regions()},
                     {"key", data_key}}},
                   {"operators", op_names},
                   {"training", seed_info},
                   {"tasks", tasks}};
  fs::create_directories(cfg.out_dir);
  result.report_path = cfg.out_dir / "report.json";
  atomic_write(result.report_path, result.report.dump(2) + "\n");
  return result;
}

}  // namespace rankcore::pipeline

// End-to-end experiment: generate, compute FCs, train per seed, select
// core-sets, rank operators and score ranking agreement. Stage outputs are
// cached under content hashes of their inputs.

#ifndef RANKCORE_PIPELINE_HPP
#define RANKCORE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/benchmark.hpp"
#include "rankcore/dataset.hpp"
#include "rankcore/training.hpp"

namespace rankcore::pipeline {

struct PipelineConfig {
  std::filesystem::path out_dir = "rankcore-out";
  /// Empty means $RANKCORE_CACHE, else <out_dir>/cache.
  std::filesystem::path cache_dir;
  dataset::SynthConfig synth;
  training::TrainConfig train;
  std::vector<std::string> operators;  // empty = full registry
  std::vector<std::string> methods = {"sclcs", "sclcs-dense", "random", "kmeans"};
  std::vector<double> ratios = {0.1, 0.3, 0.5};
  std::vector<std::uint64_t> seeds = {0};
  std::vector<benchmark::Task> tasks = {benchmark::Task::fingerprint, benchmark::Task::diagnosis};
  std::vector<std::size_t> ks = {5, 10, 20};
  double beta = 0.2;
  std::size_t pair_cap = 20000;
  std::string reference_op = "pearson";
  int jobs = 0;

  void validate() const;
  /// Everything except paths; this is what the report and cache keys see.
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

struct PipelineResult {
  nlohmann::json report;
  /// stage name -> true when every unit of the stage came from the cache.
  std::map<std::string, bool> cache_hits;
  std::filesystem::path report_path;
};

std::filesystem::path resolve_cache_dir(const PipelineConfig& cfg);

/// Runs every stage and writes <out_dir>/report.json. Throws Error with the
/// failing stage's name in the message.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace rankcore::pipeline

#endif  // RANKCORE_PIPELINE_HPP

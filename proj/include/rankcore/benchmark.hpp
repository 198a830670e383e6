// Operator discriminability, operator rankings over a sample subset, and
// nDCG agreement between rankings.

#ifndef RANKCORE_BENCHMARK_HPP
#define RANKCORE_BENCHMARK_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/common.hpp"
#include "rankcore/kernels.hpp"
#include "rankcore/spi.hpp"

namespace rankcore::benchmark {

enum class Task { fingerprint, diagnosis };
std::string task_name(Task t);
Task parse_task(const std::string& s);

/// Pearson correlation of tie-averaged ranks. Throws on constant input.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct DiscriminabilityOptions {
  std::size_t pair_cap = 20000;
  std::uint64_t seed = 0;
  kernels::Exec exec = kernels::Exec::parallel;
};

struct DiscriminabilityResult {
  double score = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_dropped = 0;  // zero-variance FC vectors
  bool subsampled = false;
};

/// Spearman correlation between pairwise FC similarity and the same-class
/// indicator. `fcs[i]` belongs to class `classes[i]`.
DiscriminabilityResult discriminability(std::span<const Matrix> fcs, std::span<const std::string> classes,
                                        const DiscriminabilityOptions& opts = {});

struct RankEntry {
  std::string op;
  double score = 0.0;
  int rank = 0;
};

struct Ranking {
  Task task = Task::fingerprint;
  std::vector<RankEntry> entries;
  std::size_t sample_count = 0;
  nlohmann::json provenance = nlohmann::json::object();

  /// 1-based rank of every operator.
  std::map<std::string, int> rank_of() const;
  nlohmann::json to_json() const;
  static Ranking from_json(const nlohmann::json& j);
};

void write_ranking(const Ranking& r, const std::filesystem::path& path);
Ranking read_ranking(const std::filesystem::path& path);

/// Sorts by score descending, ties by operator name, and assigns ranks 1..n.
Ranking make_ranking(Task task, std::map<std::string, double> scores);

/// Ranks the store's operators on a sample subset (empty = all samples).
Ranking rank_spis(const spi::FcStore& store, std::span<const std::string> sample_ids, Task task,
                  const DiscriminabilityOptions& opts = {});

enum class Gain { linear, exponential };

/// DCG@k of the candidate order with relevance n - rank_reference, over the
/// ideal DCG@k.
double ndcg_at_k(const Ranking& reference, const Ranking& candidate, std::size_t k, Gain gain = Gain::linear);

struct CellStats {
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> values;
};

struct RunRecord {
  std::string method;
  double ratio = 0.0;
  Ranking ranking;
};

/// method -> "ndcg@k" -> ratio label -> stats.
struct ConsistencyReport {
  std::map<std::string, std::map<std::string, std::map<std::string, CellStats>>> cells;
  nlohmann::json to_json() const;
};

CellStats cell_stats(std::vector<double> values);
std::string ratio_label(double ratio);

ConsistencyReport consistency_report(const Ranking& truth, std::span<const RunRecord> runs,
                                     std::span<const std::size_t> ks);

}  // namespace rankcore::benchmark

#endif  // RANKCORE_BENCHMARK_HPP

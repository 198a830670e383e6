// Identity-supervised contrastive training with Adam. Every epoch the fused
// attention of every sample is snapshotted into an SPS accumulator.

#ifndef RANKCORE_TRAINING_HPP
#define RANKCORE_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/dataset.hpp"
#include "rankcore/encoder.hpp"
#include "rankcore/sps.hpp"

namespace rankcore::training {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  AdamConfig adam;
  double temperature = 0.2;
  /// Standard InfoNCE when true; false reproduces a negatives-only denominator.
  bool include_positive_in_denominator = true;
  int snapshot_every = 1;
  std::uint64_t seed = 0;
  encoder::EncoderDims dims;  // n_features is taken from the data

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<Vector> grads;  // d loss / d embedding, one per input
  std::size_t positive_pairs = 0;
};

/// Mean over ordered same-subject pairs (i, j) of
///   -log( exp(cos(z_i, z_j)/tau) / D_ij ),
/// D_ij = sum over other-subject k of exp(cos(z_i, z_k)/tau), plus the
/// positive's own term when include_positive is set.
ContrastiveResult contrastive_loss(std::span<const Vector> embeddings, std::span<const std::string> subject_ids,
                                   double temperature, bool include_positive);

struct AdamState {
  encoder::EncoderGrads m;
  encoder::EncoderGrads v;
  long step = 0;

  static AdamState zeros_like(const encoder::EncoderParams& p);
  bool operator==(const AdamState& o) const;
};

/// One bias-corrected Adam update on a flat buffer at step t (1-based).
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 long t, const AdamConfig& cfg);

/// Increments the step, updates every tensor and bumps params.generation.
/// Throws (leaving params and state untouched) on a non-finite gradient.
void adam_step(encoder::EncoderParams& p, const encoder::EncoderGrads& g, AdamState& s, const AdamConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;        // evaluation-mode loss over the full dataset
  double batch_loss = 0.0;  // mean of the minibatch losses
  double mean_perturbation = 0.0;
};

struct TrainTrace {
  double initial_loss = 0.0;
  std::vector<EpochStats> epochs;
};

struct TrainResult {
  encoder::EncoderParams params;
  sps::SpsRecord sps;
  TrainTrace trace;
};

/// Subject-stratified batches: every batch holds at least two segments of
/// each of its subjects and at least two subjects.
std::vector<std::vector<std::size_t>> make_batches(const dataset::Dataset& d, int batch_size, Rng& rng);

/// Full-dataset forward in evaluation mode: fused matrices and the loss.
struct Evaluation {
  std::map<std::string, Matrix> fused;
  double loss = 0.0;
};
Evaluation evaluate(const encoder::EncoderParams& p, const dataset::Dataset& d, const TrainConfig& cfg);

TrainResult train(const dataset::Dataset& d, const TrainConfig& cfg);

void write_trace_csv(const TrainTrace& t, const std::filesystem::path& path);

}  // namespace rankcore::training

#endif  // RANKCORE_TRAINING_HPP

// Adaptive multi-head attention encoder.
//
// Regions are tokens with T features. Each head h forms
//   A_h = softmax_rows(X Wq_h (X Wk_h)^T / sqrt(d))
// and the heads are fused with simplex weights alpha = softmax(a):
//   A = sum_h alpha_h A_h.
// Node embeddings are Z = (A X Wv) Wo and the pooled embedding z is the
// column mean of Z. Single block: no feed-forward, norm or positional terms.

#ifndef RANKCORE_ENCODER_HPP
#define RANKCORE_ENCODER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankcore/common.hpp"
#include "rankcore/dataset.hpp"
#include "rankcore/spi.hpp"

namespace rankcore::encoder {

struct EncoderDims {
  int n_features = 0;  // T
  int heads = 4;       // H
  int head_dim = 32;   // d
  int value_dim = 32;  // d_v
  int out_dim = 32;    // d_out

  bool operator==(const EncoderDims&) const = default;
};

/// The trainable tensors, in checkpoint declaration order.
struct EncoderTensors {
  std::vector<Matrix> w_query;  // H x (T x d)
  std::vector<Matrix> w_key;    // H x (T x d)
  Vector fusion_logits;         // H
  Matrix w_value;               // T x d_v
  Matrix w_out;                 // d_v x d_out

  std::vector<std::span<double>> buffers();
  std::vector<std::span<const double>> buffers() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  void set_zero();
  EncoderTensors& operator+=(const EncoderTensors& o);
  EncoderTensors& operator*=(double s);
};

struct EncoderParams : EncoderTensors {
  EncoderDims dims;
  /// Bumped on every in-place update; forward caches record it.
  std::uint64_t generation = 0;

  Vector fusion_weights() const;
  double scale() const { return 1.0 / std::sqrt(static_cast<double>(dims.head_dim)); }
  bool operator==(const EncoderParams& o) const;
};

struct EncoderGrads : EncoderTensors {
  static EncoderGrads zeros_like(const EncoderParams& p);
};

struct ForwardCache {
  bool valid = false;
  std::uint64_t generation = 0;
  Matrix x;
  std::vector<Matrix> queries;
  std::vector<Matrix> keys;
  Vector alpha;
  Matrix values;  // X Wv
  Matrix mixed;   // A X Wv
};

struct EncoderOutput {
  Matrix fused;                  // A, N x N row-stochastic
  std::vector<Matrix> per_head;  // A_h
  Matrix node_embeddings;        // Z, N x d_out
  Vector pooled;                 // z
  ForwardCache cache;
};

EncoderParams init_params(int n_features, int heads, int head_dim, int value_dim, int out_dim, std::uint64_t seed);
EncoderParams init_params(const EncoderDims& dims, std::uint64_t seed);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

EncoderOutput forward(const EncoderParams& p, const Matrix& x, bool keep_cache = true);
EncoderOutput forward(const EncoderParams& p, const dataset::TimeSeriesSample& x, bool keep_cache = true);

/// Exact gradients of <grad_pooled, z> + <grad_fused, A>. Either term may be
/// absent (empty vector / nullptr). Throws if the cache is missing or stale.
EncoderGrads backward(const EncoderParams& p, const EncoderOutput& out, const Vector& grad_pooled,
                      const Matrix* grad_fused = nullptr);

/// Binary checkpoint: "RCEN1", u32 {H, T, d, d_v, d_out}, then row-major
/// little-endian doubles for Wq[0..H), Wk[0..H), a, Wv, Wo.
void save_params(const EncoderParams& p, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

/// Supervised fit of the fused attention to an FC operator's output.
struct FitConfig {
  int heads = 4;
  int head_dim = 32;
  int max_epochs = 150;
  int batch_size = 16;
  double lr = 1e-2;
  int patience = 10;
  double train_frac = 0.7;
  double val_frac = 0.1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static FitConfig from_json(const nlohmann::json& j);
};

struct FitReport {
  std::string target;
  double train_mse_start = 0.0;
  double train_mse_end = 0.0;
  double val_mse_best = 0.0;
  double test_mse = 0.0;
  /// Test MSE after mapping A back through each target row's shift and scale.
  double test_mse_raw = 0.0;
  int epochs_run = 0;
  bool stopped_early = false;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::vector<double> train_curve;
  std::vector<double> val_curve;

  nlohmann::json to_json() const;
};

/// Row map used for targets: subtract the row minimum, divide by the row sum
/// (uniform when the shifted row sums to zero).
Matrix row_normalize_target(const Matrix& fc);

/// MSE((A + A^T)/2, (B + B^T)/2) over all N^2 entries.
double symmetric_mse(const Matrix& a, const Matrix& b);

using TargetFn = std::function<Matrix(const dataset::TimeSeriesSample&)>;

FitReport fit_to_target(const dataset::Dataset& d, const spi::SpiOperator& target_op, const FitConfig& cfg);
FitReport fit_to_target(const dataset::Dataset& d, const TargetFn& target, const std::string& target_name,
                        const FitConfig& cfg);

}  // namespace rankcore::encoder

#endif  // RANKCORE_ENCODER_HPP

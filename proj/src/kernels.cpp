#include "rankcore/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <exception>
#include <numbers>

namespace rankcore::kernels {

namespace {

std::atomic<int> g_max_threads{0};

int team_size() {
  const int cap = g_max_threads.load();
  return cap > 0 ? cap : omp_get_max_threads();
}

void check_gradient_spans(std::size_t n, std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused) {
  if (!grad_pooled.empty() && grad_pooled.size() != n) throw Error("gradient_sum: grad_pooled count mismatch");
  if (!grad_fused.empty() && grad_fused.size() != n) throw Error("gradient_sum: grad_fused count mismatch");
}

const Vector& empty_vector() {
  static const Vector v;
  return v;
}

// Runs body(i) for i in [0, n) on the OpenMP team; rethrows the first error.
template <typename Body>
void parallel_for(long n, Body body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(team_size())
  for (long i = 0; i < n; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(rankcore_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void set_max_threads(int threads) { g_max_threads = threads; }
int max_threads() { return team_size(); }

namespace serial {

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache) {
  std::vector<encoder::EncoderOutput> outs;
  outs.reserve(xs.size());
  for (const Matrix* x : xs) outs.push_back(encoder::forward(p, *x, keep_cache));
  return outs;
}

encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused) {
  check_gradient_spans(outs.size(), grad_pooled, grad_fused);
  auto total = encoder::EncoderGrads::zeros_like(p);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const Vector& gz = grad_pooled.empty() ? empty_vector() : grad_pooled[i];
    const Matrix* ga = grad_fused.empty() ? nullptr : &grad_fused[i];
    total += encoder::backward(p, outs[i], gz, ga);
  }
  return total;
}

std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  const auto cols = static_cast<std::size_t>(features.cols());
  std::vector<double> a(cols), b(cols);
  for (const auto& [i, j] : pairs) {
    for (std::size_t k = 0; k < cols; ++k) {
      a[k] = features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      b[k] = features(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    }
    out.push_back(pearson(a, b));
  }
  return out;
}

std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries) {
  if (values.empty()) throw Error("kde: no values");
  if (!(bandwidth > 0.0)) throw Error("kde: bandwidth must be > 0");
  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out;
  out.reserve(queries.size());
  for (double q : queries) {
    double s = 0.0;
    for (double v : values) {
      const double u = (q - v) / bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    out.push_back(norm * s);
  }
  return out;
}

std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs) {
  std::vector<spi::FcMatrix> out;
  out.reserve(xs.size());
  for (const Matrix* x : xs) out.push_back(spi::compute_fc(op, *x));
  return out;
}

}  // namespace serial

namespace omp {

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache) {
  std::vector<encoder::EncoderOutput> outs(xs.size());
  parallel_for(static_cast<long>(xs.size()), [&](std::size_t i) { outs[i] = encoder::forward(p, *xs[i], keep_cache); });
  return outs;
}

encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused) {
  check_gradient_spans(outs.size(), grad_pooled, grad_fused);
  std::vector<encoder::EncoderGrads> per_sample(outs.size());
  parallel_for(static_cast<long>(outs.size()), [&](std::size_t i) {
    const Vector& gz = grad_pooled.empty() ? empty_vector() : grad_pooled[i];
    const Matrix* ga = grad_fused.empty() ? nullptr : &grad_fused[i];
    per_sample[i] = encoder::backward(p, outs[i], gz, ga);
  });
  auto total = encoder::EncoderGrads::zeros_like(p);
  for (const auto& g : per_sample) total += g;
  return total;
}

std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs) {
  // Standardize rows once; similarity becomes a dot product.
  const Eigen::Index rows = features.rows();
  Matrix z = features.colwise() - features.rowwise().mean();
  std::vector<bool> constant(static_cast<std::size_t>(rows), false);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double norm = z.row(i).norm();
    if (norm > 0.0) {
      z.row(i) /= norm;
    } else {
      constant[static_cast<std::size_t>(i)] = true;
    }
  }
  std::vector<double> out(pairs.size());
  parallel_for(static_cast<long>(pairs.size()), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    if (constant[i] || constant[j]) {
      out[k] = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    out[k] = std::clamp(z.row(static_cast<Eigen::Index>(i)).dot(z.row(static_cast<Eigen::Index>(j))), -1.0, 1.0);
  });
  return out;
}

std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries) {
  if (values.empty()) throw Error("kde: no values");
  if (!(bandwidth > 0.0)) throw Error("kde: bandwidth must be > 0");
  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(queries.size());
  parallel_for(static_cast<long>(queries.size()), [&](std::size_t k) {
    double s = 0.0;
    for (double v : values) {
      const double u = (queries[k] - v) / bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    out[k] = norm * s;
  });
  return out;
}

std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs) {
  std::vector<spi::FcMatrix> out(xs.size());
  parallel_for(static_cast<long>(xs.size()), [&](std::size_t i) { out[i] = spi::compute_fc(op, *xs[i]); });
  return out;
}

}  // namespace omp

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache, Exec exec) {
  return exec == Exec::serial ? serial::forward_batch(p, xs, keep_cache) : omp::forward_batch(p, xs, keep_cache);
}

encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused, Exec exec) {
  return exec == Exec::serial ? serial::gradient_sum(p, outs, grad_pooled, grad_fused)
                              : omp::gradient_sum(p, outs, grad_pooled, grad_fused);
}

std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs, Exec exec) {
  return exec == Exec::serial ? serial::pair_similarities(features, pairs) : omp::pair_similarities(features, pairs);
}

std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries,
                                 Exec exec) {
  return exec == Exec::serial ? serial::kde_evaluate(values, bandwidth, queries)
                              : omp::kde_evaluate(values, bandwidth, queries);
}

std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs, Exec exec) {
  return exec == Exec::serial ? serial::fc_batch(op, xs) : omp::fc_batch(op, xs);
}

}  // namespace rankcore::kernels

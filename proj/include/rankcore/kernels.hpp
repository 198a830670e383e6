// Data-parallel kernels. Each kernel has a serial reference implementation
// (kernels::serial) and an OpenMP implementation (kernels::omp). The OpenMP
// versions write into preallocated per-item slots and reduce in index order,
// so their results do not depend on the thread count.

#ifndef RANKCORE_KERNELS_HPP
#define RANKCORE_KERNELS_HPP

#include <span>
#include <utility>
#include <vector>

#include "rankcore/common.hpp"
#include "rankcore/encoder.hpp"
#include "rankcore/spi.hpp"

namespace rankcore::kernels {

enum class Exec { serial, parallel };

using Pair = std::pair<std::size_t, std::size_t>;

/// Caps the OpenMP team size used by the parallel kernels (0 = runtime default).
void set_max_threads(int threads);
int max_threads();

namespace serial {

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache);

/// Sum of per-sample gradients. `grad_pooled` / `grad_fused` may be empty.
encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused);

/// Pearson correlation between rows a and b of `features` for each pair
/// (NaN for zero-variance rows).
std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs);

/// Gaussian KDE of `values` with bandwidth h at each query point.
std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries);

std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs);

}  // namespace serial

namespace omp {

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache);
encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused);
std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs);
std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries);
std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs);

}  // namespace omp

std::vector<encoder::EncoderOutput> forward_batch(const encoder::EncoderParams& p, std::span<const Matrix* const> xs,
                                                  bool keep_cache, Exec exec = Exec::parallel);
encoder::EncoderGrads gradient_sum(const encoder::EncoderParams& p, std::span<const encoder::EncoderOutput> outs,
                                   std::span<const Vector> grad_pooled, std::span<const Matrix> grad_fused,
                                   Exec exec = Exec::parallel);
std::vector<double> pair_similarities(const Matrix& features, std::span<const Pair> pairs,
                                      Exec exec = Exec::parallel);
std::vector<double> kde_evaluate(std::span<const double> values, double bandwidth, std::span<const double> queries,
                                 Exec exec = Exec::parallel);
std::vector<spi::FcMatrix> fc_batch(const spi::SpiOperator& op, std::span<const Matrix* const> xs,
                                    Exec exec = Exec::parallel);

}  // namespace rankcore::kernels

#endif  // RANKCORE_KERNELS_HPP

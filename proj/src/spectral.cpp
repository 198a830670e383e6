#include "rankcore/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace rankcore::spectral {

namespace {

// FFTW plan creation is not thread-safe; execution on new arrays is.
class PlanCache {
 public:
  fftw_plan get(int n, bool inverse) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(n, inverse);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<fftw_complex> scratch_in(static_cast<std::size_t>(n)), scratch_out(static_cast<std::size_t>(n));
    fftw_plan p = fftw_plan_dft_1d(n, scratch_in.data(), scratch_out.data(),
                                   inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw Error("fftw plan creation failed for n=" + std::to_string(n));
    plans_.emplace(key, p);
    return p;
  }
  ~PlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mutex_;
  std::map<std::pair<int, bool>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace

std::vector<Complex> fft(const std::vector<Complex>& in, bool inverse) {
  const int n = static_cast<int>(in.size());
  if (n == 0) return {};
  fftw_plan p = plan_cache().get(n, inverse);
  std::vector<Complex> input = in;
  std::vector<Complex> out(in.size());
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(input.data()), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

ComplexMatrix analytic_signal(const Matrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index t = x.cols();
  ComplexMatrix out(n, t);
  std::vector<double> h(static_cast<std::size_t>(t), 0.0);
  h[0] = 1.0;
  if (t % 2 == 0) {
    h[static_cast<std::size_t>(t / 2)] = 1.0;
    for (Eigen::Index k = 1; k < t / 2; ++k) h[static_cast<std::size_t>(k)] = 2.0;
  } else {
    for (Eigen::Index k = 1; k < (t + 1) / 2; ++k) h[static_cast<std::size_t>(k)] = 2.0;
  }
  std::vector<Complex> row(static_cast<std::size_t>(t));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    for (Eigen::Index k = 0; k < t; ++k) row[static_cast<std::size_t>(k)] = Complex(x(i, k) - mean, 0.0);
    auto spec = fft(row, false);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= h[k];
    auto z = fft(spec, true);
    for (Eigen::Index k = 0; k < t; ++k) out(i, k) = z[static_cast<std::size_t>(k)] / static_cast<double>(t);
  }
  return out;
}

int welch_segment_length(Eigen::Index t) {
  int seg = static_cast<int>(std::lround(static_cast<double>(t) / 4.0));
  if (seg % 2) ++seg;
  return std::max(seg, 2);
}

CrossSpectra welch_cross_spectra(const Matrix& x, double band_lo, double band_hi) {
  const Eigen::Index n = x.rows();
  const Eigen::Index t = x.cols();
  const int seg = welch_segment_length(t);
  const int step = seg / 2;
  const int n_segments = static_cast<int>((t - seg) / step) + 1;
  if (n_segments < 1) throw Error("series too short for Welch estimate");

  std::vector<double> window(static_cast<std::size_t>(seg));
  for (int k = 0; k < seg; ++k)
    window[static_cast<std::size_t>(k)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / seg);

  std::vector<int> bins;
  CrossSpectra cs;
  for (int k = 1; k <= seg / 2; ++k) {
    const double f = static_cast<double>(k) / seg;
    const double frac = f / 0.5;
    if (frac > band_lo && frac <= band_hi) {
      bins.push_back(k);
      cs.freqs.push_back(f);
    }
  }
  if (bins.empty()) throw Error("empty frequency band");
  cs.spectra.assign(bins.size(), ComplexMatrix::Zero(n, n));

  std::vector<Complex> buf(static_cast<std::size_t>(seg));
  ComplexMatrix coeffs(n, static_cast<Eigen::Index>(bins.size()));
  for (int s = 0; s < n_segments; ++s) {
    const Eigen::Index start = static_cast<Eigen::Index>(s) * step;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mean = x.row(i).segment(start, seg).mean();
      for (int k = 0; k < seg; ++k)
        buf[static_cast<std::size_t>(k)] = Complex((x(i, start + k) - mean) * window[static_cast<std::size_t>(k)], 0.0);
      const auto spec = fft(buf, false);
      for (std::size_t b = 0; b < bins.size(); ++b)
        coeffs(i, static_cast<Eigen::Index>(b)) = spec[static_cast<std::size_t>(bins[b])];
    }
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const auto c = coeffs.col(static_cast<Eigen::Index>(b));
      cs.spectra[b] += c * c.adjoint();
    }
  }
  for (auto& m : cs.spectra) m /= static_cast<double>(n_segments);
  return cs;
}

}  // namespace rankcore::spectral

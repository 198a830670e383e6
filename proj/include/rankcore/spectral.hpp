// FFT-backed spectral estimators used by the spectral and phase operators.

#ifndef RANKCORE_SPECTRAL_HPP
#define RANKCORE_SPECTRAL_HPP

#include <complex>
#include <vector>

#include "rankcore/common.hpp"

namespace rankcore::spectral {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// Forward (sign -1) or inverse (sign +1, unscaled) DFT. Thread-safe.
std::vector<Complex> fft(const std::vector<Complex>& in, bool inverse = false);

/// Analytic signal of every row (mean removed first) via the FFT Hilbert transform.
ComplexMatrix analytic_signal(const Matrix& x);

/// Welch estimate: segment length round(T/4) forced even, 50% overlap,
/// periodic Hann window, per-segment mean removed.
struct CrossSpectra {
  std::vector<double> freqs;           // cycles per sample, bins 1..seg/2
  std::vector<ComplexMatrix> spectra;  // one N x N Hermitian matrix per frequency
};

int welch_segment_length(Eigen::Index t);

/// `band` is a fraction range of Nyquist, bins with freq/0.5 in (lo, hi] kept.
CrossSpectra welch_cross_spectra(const Matrix& x, double band_lo = 0.0, double band_hi = 1.0);

}  // namespace rankcore::spectral

#endif  // RANKCORE_SPECTRAL_HPP

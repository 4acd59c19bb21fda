#pragma once

#include <complex>
#include <vector>

namespace mvc::detail {

/// Real-input FFT of fixed size backed by a shared FFTW plan. Instances are
/// cheap and each owns its scratch, so one per thread is enough.
class RealFft {
 public:
  explicit RealFft(int n);

  int size() const noexcept { return n_; }
  int n_bins() const noexcept { return n_ / 2 + 1; }

  /// `in` has n samples, `out` receives n/2+1 bins.
  void forward(const double* in, std::complex<double>* out);
  /// Unnormalized inverse: forward followed by inverse scales by n.
  void inverse(const std::complex<double>* in, double* out);

 private:
  int n_;
  void* forward_plan_;
  void* inverse_plan_;
  std::vector<double> real_scratch_;
  std::vector<std::complex<double>> complex_scratch_;
};

}  // namespace mvc::detail

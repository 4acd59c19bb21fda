#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>

namespace mvc::detail {
namespace {

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and executed with the new-array interface, which is.
std::pair<fftw_plan, fftw_plan> plans_for(int n) {
  static std::mutex mutex;
  static std::map<int, std::pair<fftw_plan, fftw_plan>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> r(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> c(static_cast<std::size_t>(n / 2 + 1));
  auto* cp = reinterpret_cast<fftw_complex*>(c.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan fwd = fftw_plan_dft_r2c_1d(n, r.data(), cp, flags);
  fftw_plan inv = fftw_plan_dft_c2r_1d(n, cp, r.data(), flags);
  return cache.emplace(n, std::make_pair(fwd, inv)).first->second;
}

}  // namespace

RealFft::RealFft(int n)
    : n_(n),
      real_scratch_(static_cast<std::size_t>(n)),
      complex_scratch_(static_cast<std::size_t>(n / 2 + 1)) {
  auto [fwd, inv] = plans_for(n);
  forward_plan_ = fwd;
  inverse_plan_ = inv;
}

void RealFft::forward(const double* in, std::complex<double>* out) {
  std::copy(in, in + n_, real_scratch_.begin());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), real_scratch_.data(),
                       reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) {
  // c2r overwrites its input.
  std::copy(in, in + n_bins(), complex_scratch_.begin());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(complex_scratch_.data()), out);
}

}  // namespace mvc::detail

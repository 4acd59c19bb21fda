#include <algorithm>
#include <cmath>
#include <numbers>

#include "mediumvc/audio.hpp"
#include "mediumvc/error.hpp"

namespace mvc {
namespace {

constexpr int kStretchFft = 1024;
constexpr int kStretchHop = 256;

constexpr int kZeroCrossings = 64;
constexpr int kTableResolution = 512;  // kernel samples per zero crossing
constexpr double kKaiserBeta = 8.6;

double wrap_phase(double x) {
  return x - 2.0 * std::numbers::pi * std::round(x / (2.0 * std::numbers::pi));
}

// Right half of sinc(x) * kaiser(x / kZeroCrossings), sampled every
// 1/kTableResolution of a zero crossing, plus one guard entry.
const std::vector<double>& sinc_table() {
  static const std::vector<double> table = [] {
    const int n = kZeroCrossings * kTableResolution;
    std::vector<double> t(static_cast<std::size_t>(n + 2), 0.0);
    const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
    for (int i = 0; i <= n; ++i) {
      const double x = static_cast<double>(i) / kTableResolution;
      double sinc = 0.0;  // exact zeros on the crossings
      if (i == 0) sinc = 1.0;
      else if (i % kTableResolution != 0) sinc = std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double r = x / kZeroCrossings;
      const double kaiser = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      t[i] = sinc * kaiser;
    }
    return t;
  }();
  return table;
}

double kernel(const std::vector<double>& table, double x) {
  const double pos = std::abs(x) * kTableResolution;
  const auto i = static_cast<std::size_t>(pos);
  if (i >= table.size() - 2) return 0.0;
  const double frac = pos - static_cast<double>(i);
  return table[i] + frac * (table[i + 1] - table[i]);
}

void clip_unit(std::vector<double>& v) {
  for (double& s : v) s = std::clamp(s, -1.0, 1.0);
}

}  // namespace

double ShiftSemitones::ratio() const { return std::exp2(value / 12.0); }

Waveform time_stretch(const Waveform& wav, double rate) {
  if (!(rate >= 0.5 && rate <= 2.0))
    fail(ErrorCategory::Validation, "stretch rate must lie in [0.5, 2.0]");
  const std::size_t n = wav.size();
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * rate));
  Waveform out;
  out.sample_rate = wav.sample_rate;
  if (n == 0) return out;

  // Centre-pad so the first and last samples sit mid-frame.
  const std::size_t pad = kStretchFft / 2;
  std::vector<double> padded(n + 2 * pad, 0.0);
  std::copy(wav.samples.begin(), wav.samples.end(), padded.begin() + pad);
  const auto window = hann_window(kStretchFft);
  const CMat spec = stft(padded, kStretchFft, kStretchHop, window);
  const Index frames = spec.rows(), bins = spec.cols();

  // Enough synthesis frames to cover the centre-padded target length.
  const Index out_frames =
      std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(target + 2 * pad - kStretchFft) /
                                                      kStretchHop)) + 1);
  CMat stretched(out_frames, bins);
  std::vector<double> phase(static_cast<std::size_t>(bins));
  std::vector<double> advance(static_cast<std::size_t>(bins));
  for (Index k = 0; k < bins; ++k) {
    advance[k] = 2.0 * std::numbers::pi * static_cast<double>(k) * kStretchHop / kStretchFft;
    phase[k] = std::arg(spec(0, k));
  }

  auto frame_at = [&](Index i, Index k) -> std::complex<double> {
    return i < frames ? spec(i, k) : std::complex<double>(0.0, 0.0);
  };
  for (Index j = 0; j < out_frames; ++j) {
    const double t = static_cast<double>(j) / rate;
    const Index i = std::min<Index>(static_cast<Index>(t), frames - 1);
    const double alpha = std::min(1.0, t - static_cast<double>(i));
    for (Index k = 0; k < bins; ++k) {
      const auto a = frame_at(i, k), b = frame_at(i + 1, k);
      const double mag = (1.0 - alpha) * std::abs(a) + alpha * std::abs(b);
      stretched(j, k) = std::polar(mag, phase[k]);
      const double dphi = i + 1 < frames ? std::arg(b) - std::arg(a) - advance[k] : 0.0;
      phase[k] += advance[k] + wrap_phase(dphi);
    }
  }

  const auto synth = istft(stretched, kStretchFft, kStretchHop, window);
  out.samples.assign(target, 0.0);
  for (std::size_t i = 0; i < target && pad + i < synth.size(); ++i) out.samples[i] = synth[pad + i];
  clip_unit(out.samples);
  return out;
}

Waveform resample(const Waveform& wav, double ratio) {
  if (!(ratio >= 0.25 && ratio <= 4.0))
    fail(ErrorCategory::Validation, "resample ratio must lie in [0.25, 4.0]");
  const auto& table = sinc_table();
  const std::size_t n = wav.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / ratio));
  Waveform out;
  out.sample_rate = wav.sample_rate;
  out.samples.assign(out_len, 0.0);

  // Cutoff relative to the input Nyquist; below one when decimating.
  const double cutoff = std::min(1.0, 1.0 / ratio);
  const double half_width = kZeroCrossings / cutoff;
  const auto last = static_cast<long long>(n) - 1;
  for (std::size_t j = 0; j < out_len; ++j) {
    const double t = static_cast<double>(j) * ratio;
    const long long lo = std::max(0LL, static_cast<long long>(std::ceil(t - half_width)));
    const long long hi = std::min(last, static_cast<long long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long long k = lo; k <= hi; ++k)
      acc += wav.samples[static_cast<std::size_t>(k)] * kernel(table, cutoff * (t - static_cast<double>(k)));
    out.samples[j] = cutoff * acc;
  }
  clip_unit(out.samples);
  return out;
}

Waveform psdr_shift(const Waveform& wav, ShiftSemitones s, bool force) {
  if (!force && !s.in_training_range())
    fail(ErrorCategory::Range, "semitones outside [" + std::to_string(kMinShift) + "," +
                                   std::to_string(kMaxShift) + "]");
  if (s.value == 0) return wav;
  const double r = s.ratio();
  if (!(r >= 0.5 && r <= 2.0))
    fail(ErrorCategory::Range, "semitones outside [-12,12] cannot be realized");
  return resample(time_stretch(wav, r), r);
}

}  // namespace mvc

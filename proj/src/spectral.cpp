#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fft.hpp"
#include "mediumvc/audio.hpp"
#include "mediumvc/error.hpp"

namespace mvc {

void MelConfig::validate() const {
  if (n_fft <= 0 || hop <= 0 || win_length <= 0 || n_mels <= 0 || sample_rate <= 0)
    fail(ErrorCategory::Config, "mel config sizes must be positive");
  if (hop > n_fft) fail(ErrorCategory::Config, "hop must not exceed n_fft");
  if (win_length != n_fft) fail(ErrorCategory::Config, "win_length must equal n_fft");
  if (fmin < 0.0 || fmax <= fmin || fmax > sample_rate / 2.0)
    fail(ErrorCategory::Config, "mel band must satisfy 0 <= fmin < fmax <= sample_rate/2");
  if (!(log_floor > 0.0) || !(log_range > 0.0))
    fail(ErrorCategory::Config, "log floor and range must be positive");
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return w;
}

CMat stft(const std::vector<double>& signal, int n_fft, int hop,
          const std::vector<double>& window) {
  const Index n = static_cast<Index>(signal.size());
  if (n < n_fft) fail(ErrorCategory::Length, "signal shorter than one FFT frame");
  const Index frames = 1 + (n - n_fft) / hop;
  detail::RealFft fft(n_fft);
  CMat out(frames, fft.n_bins());
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  for (Index t = 0; t < frames; ++t) {
    const double* src = signal.data() + t * hop;
    for (int i = 0; i < n_fft; ++i) buf[i] = src[i] * window[i];
    fft.forward(buf.data(), out.row(t).data());
  }
  return out;
}

std::vector<double> istft(const CMat& spec, int n_fft, int hop,
                          const std::vector<double>& window) {
  const Index frames = spec.rows();
  const std::size_t length = static_cast<std::size_t>((frames - 1) * hop + n_fft);
  std::vector<double> out(length, 0.0), wsum(length, 0.0), buf(static_cast<std::size_t>(n_fft));
  detail::RealFft fft(n_fft);
  for (Index t = 0; t < frames; ++t) {
    fft.inverse(spec.row(t).data(), buf.data());
    const std::size_t base = static_cast<std::size_t>(t * hop);
    for (int i = 0; i < n_fft; ++i) {
      out[base + i] += buf[i] * window[i] / n_fft;
      wsum[base + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < length; ++i)
    if (wsum[i] > 1e-10) out[i] /= wsum[i];
  return out;
}

double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

Mat mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int bins = cfg.n_bins();
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));

  Mat fb = Mat::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    const double enorm = 2.0 / (f2 - f0);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - f0) / (f1 - f0);
      const double fall = (f2 - f) / (f2 - f1);
      fb(m, k) = std::max(0.0, std::min(rise, fall)) * enorm;
    }
  }
  return fb;
}

namespace {

// STFT magnitudes are read as amplitudes: a sine of amplitude A shows up as
// A at its bin, which keeps speech-level mels below the clamp ceiling.
double amplitude_scale(const std::vector<double>& window) {
  double sum = 0.0;
  for (double w : window) sum += w;
  return 2.0 / sum;
}

}  // namespace

Index mel_frame_count(std::size_t n_samples, const MelConfig& cfg) {
  if (n_samples < static_cast<std::size_t>(cfg.n_fft)) return 0;
  return 1 + static_cast<Index>((n_samples - cfg.n_fft) / cfg.hop);
}

Mat normalize_log_mel(const Mat& linear_mel, const MelConfig& cfg) {
  return linear_mel.unaryExpr([&](double m) {
    const double l = std::log10(std::max(m, cfg.log_floor));
    return std::clamp((l + cfg.log_range) / cfg.log_range, 0.0, 1.0);
  });
}

Mat denormalize_log_mel(const Mat& normalized, const MelConfig& cfg) {
  return normalized.unaryExpr([&](double v) {
    const double l = std::clamp(v, 0.0, 1.0) * cfg.log_range - cfg.log_range;
    return std::max(std::pow(10.0, l), cfg.log_floor);
  });
}

MelSpectrogram mel_spectrogram(const Waveform& wav, const MelConfig& cfg) {
  cfg.validate();
  if (wav.sample_rate != cfg.sample_rate)
    fail(ErrorCategory::Validation, "waveform rate " + std::to_string(wav.sample_rate) +
                                        " does not match mel config rate " +
                                        std::to_string(cfg.sample_rate));
  if (wav.size() < static_cast<std::size_t>(cfg.n_fft))
    fail(ErrorCategory::Length, "waveform shorter than n_fft (" + std::to_string(wav.size()) +
                                    " < " + std::to_string(cfg.n_fft) + ")");
  const auto window = hann_window(cfg.n_fft);
  const CMat spec = stft(wav.samples, cfg.n_fft, cfg.hop, window);
  const Mat magnitude = spec.cwiseAbs() * amplitude_scale(window);
  const Mat fb = mel_filterbank(cfg);
  MelSpectrogram mel;
  mel.frames = normalize_log_mel(magnitude * fb.transpose(), cfg);
  mel.normalized = true;
  return mel;
}

Waveform griffin_lim_vocode(const MelSpectrogram& mel, const MelConfig& cfg, int n_iters) {
  cfg.validate();
  if (mel.n_mels() != cfg.n_mels)
    fail(ErrorCategory::Shape, "mel has " + std::to_string(mel.n_mels()) + " bins, config " +
                                   std::to_string(cfg.n_mels));
  if (mel.n_frames() < 1) fail(ErrorCategory::Shape, "mel has no frames");
  if (n_iters < 0) fail(ErrorCategory::Validation, "n_iters must be non-negative");

  Mat linear = mel.frames;
  if (mel.normalized) {
    // Entries at the floor carry no level information; synthesize them as
    // silence rather than as floor-level noise.
    linear = denormalize_log_mel(mel.frames, cfg);
    linear = (mel.frames.array() > 0.0).select(linear, 0.0);
  }
  const Mat fb = mel_filterbank(cfg);
  const Mat inverse = fb.completeOrthogonalDecomposition().pseudoInverse();
  const auto window = hann_window(cfg.n_fft);
  // Clipped pseudo-inverse back to linear magnitudes.
  const Mat magnitude = (linear * inverse.transpose()).cwiseMax(0.0) / amplitude_scale(window);

  const Index frames = magnitude.rows(), bins = magnitude.cols();
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> phase_dist(-std::numbers::pi, std::numbers::pi);
  CMat angles(frames, bins);
  for (Index t = 0; t < frames; ++t)
    for (Index k = 0; k < bins; ++k) angles(t, k) = std::polar(1.0, phase_dist(rng));

  constexpr double momentum = 0.99;
  CMat previous = CMat::Zero(frames, bins);
  for (int it = 0; it < n_iters; ++it) {
    const CMat rebuilt =
        stft(istft(magnitude.cast<std::complex<double>>().cwiseProduct(angles), cfg.n_fft,
                   cfg.hop, window),
             cfg.n_fft, cfg.hop, window);
    angles = rebuilt - (momentum / (1.0 + momentum)) * previous;
    for (Index t = 0; t < frames; ++t)
      for (Index k = 0; k < bins; ++k) {
        const double a = std::abs(angles(t, k));
        angles(t, k) = a > 1e-16 ? angles(t, k) / a : std::complex<double>(1.0, 0.0);
      }
    previous = rebuilt;
  }
  const auto full =
      istft(magnitude.cast<std::complex<double>>().cwiseProduct(angles), cfg.n_fft, cfg.hop, window);

  // Keep T * hop samples centred on the frames, so frame t maps to
  // [t * hop, (t + 1) * hop).
  const std::size_t trim = static_cast<std::size_t>((cfg.n_fft - cfg.hop) / 2);
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(full.begin() + trim, full.begin() + trim + frames * cfg.hop);
  for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
  return out;
}

Waveform GriffinLimVocoder::vocode(const MelSpectrogram& mel) const {
  return griffin_lim_vocode(mel, cfg_, n_iters_);
}

}  // namespace mvc

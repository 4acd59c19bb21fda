#pragma once

#include <complex>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mediumvc/tensor.hpp"

namespace mvc {

inline constexpr int kCanonicalSampleRate = 22050;
inline constexpr int kMinShift = -6;
inline constexpr int kMaxShift = 4;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kCanonicalSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  /// Throws Validation on non-finite or out-of-range samples.
  void validate() const;
};

struct MelConfig {
  int n_fft = 1024;
  int hop = 256;
  int win_length = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  int sample_rate = kCanonicalSampleRate;
  double log_floor = 1e-5;
  double log_range = 5.0;

  int n_bins() const noexcept { return n_fft / 2 + 1; }
  void validate() const;
};

/// T x n_mels, time along rows.
struct MelSpectrogram {
  Mat frames;
  bool normalized = true;

  Index n_frames() const noexcept { return frames.rows(); }
  Index n_mels() const noexcept { return frames.cols(); }
};

/// Semitone count for pitch shifting; frequencies scale by 2^(s/12).
struct ShiftSemitones {
  int value = 0;
  double ratio() const;
  bool in_training_range() const noexcept {
    return value >= kMinShift && value <= kMaxShift;
  }
};

// WAV (16-bit PCM, little-endian, mono).
Waveform read_wav(const std::filesystem::path& path,
                  int target_rate = kCanonicalSampleRate);
void write_wav(const std::filesystem::path& path, const Waveform& wav);

// MELF: "MELF", u32 version=1, u32 n_frames, u32 n_mels, f32 LE row-major.
void write_melf(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_melf(const std::filesystem::path& path);

/// Scales so that max |sample| is 0.95; all-zero input is returned as is.
Waveform peak_normalize(const Waveform& wav);

/// Periodic Hann window.
std::vector<double> hann_window(int length);

/// Complex STFT without center padding; frame t starts at t * hop.
/// Result is n_frames x n_bins.
CMat stft(const std::vector<double>& signal, int n_fft, int hop,
          const std::vector<double>& window);

/// Weighted overlap-add inverse of `stft` (window-square normalized).
/// Output length is (n_frames - 1) * hop + n_fft.
std::vector<double> istft(const CMat& spec, int n_fft, int hop,
                          const std::vector<double>& window);

/// Slaney-scale triangular filters with area normalization, n_mels x n_bins.
Mat mel_filterbank(const MelConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Number of frames produced for `n_samples` input samples.
Index mel_frame_count(std::size_t n_samples, const MelConfig& cfg);

/// Linear mel magnitudes to [0,1] and back.
Mat normalize_log_mel(const Mat& linear_mel, const MelConfig& cfg);
Mat denormalize_log_mel(const Mat& normalized, const MelConfig& cfg);

MelSpectrogram mel_spectrogram(const Waveform& wav,
                               const MelConfig& cfg = MelConfig{});

Waveform griffin_lim_vocode(const MelSpectrogram& mel,
                            const MelConfig& cfg = MelConfig{},
                            int n_iters = 60);

/// Phase-vocoder stretch; output duration is `rate` times the input's.
Waveform time_stretch(const Waveform& wav, double rate);

/// Band-limited resampling to round(N / ratio) samples. Played back at the
/// original rate, a tone at f comes out at f * ratio.
Waveform resample(const Waveform& wav, double ratio);

/// Pitch-shifted, duration-remained transform. Shifts outside [-6, 4] need
/// `force`; a zero shift returns the input unchanged.
Waveform psdr_shift(const Waveform& wav, ShiftSemitones s, bool force = false);

/// Mel-to-waveform backend. Griffin-Lim is built in; anything else runs as an
/// external program through MELF/WAV file exchange.
class Vocoder {
 public:
  virtual ~Vocoder() = default;
  virtual Waveform vocode(const MelSpectrogram& mel) const = 0;
};

class GriffinLimVocoder final : public Vocoder {
 public:
  explicit GriffinLimVocoder(MelConfig cfg = {}, int n_iters = 60)
      : cfg_(cfg), n_iters_(n_iters) {}
  Waveform vocode(const MelSpectrogram& mel) const override;

 private:
  MelConfig cfg_;
  int n_iters_;
};

/// Runs `command` with "{in}" replaced by a MELF path and "{out}" by the WAV
/// path the program must write.
class ExternalVocoder final : public Vocoder {
 public:
  explicit ExternalVocoder(std::string command) : command_(std::move(command)) {}
  Waveform vocode(const MelSpectrogram& mel) const override;

 private:
  std::string command_;
};

}  // namespace mvc

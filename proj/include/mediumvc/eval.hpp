#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mediumvc/audio.hpp"
#include "mediumvc/tensor.hpp"

namespace mvc {

/// Verification thresholds of the reference d-vector system.
namespace sv_threshold {
inline constexpr double kVctk = 0.462;
inline constexpr double kLibriSpeech = 0.337;
inline constexpr double kVcc2020 = 0.432;
}  // namespace sv_threshold

double cosine(const Vec& a, const Vec& b);

struct ScoredPair {
  std::string id_a;
  std::string id_b;
  double score = 0.0;
  bool same = true;
};

/// Fraction of pairs scoring at or above `threshold`.
double sv_accuracy(std::span<const ScoredPair> pairs, double threshold);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// Sweeps every observed score as threshold (accept if score >= thr) and
/// returns the point with the smallest |FAR - FRR|, ties to the lower
/// threshold. EER is (FAR + FRR) / 2 there.
EerResult compute_eer(std::vector<double> positives, std::vector<double> negatives);

struct F0Track {
  std::vector<double> f0;     // Hz, 0 for unvoiced frames
  std::vector<bool> voiced;
};

/// Normalized-autocorrelation pitch tracker (1024-sample frames, hop 256,
/// search range 60-500 Hz).
F0Track track_f0(const Waveform& wav);

/// Median F0 over voiced frames, or nothing when no frame is voiced.
std::optional<double> median_f0(const Waveform& wav);

struct F0BandResult {
  double accuracy = 0.0;
  int inside = 0;
  int counted = 0;
  int unvoiced = 0;
};

/// Share of voiced files whose median F0 lies in [lo, hi]. Unvoiced files
/// are excluded and reported in `unvoiced`.
F0BandResult f0_band_accuracy(std::span<const Waveform> wavs, double lo, double hi);

}  // namespace mvc

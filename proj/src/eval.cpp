#include "mediumvc/eval.hpp"

#include <algorithm>
#include <cmath>

#include "mediumvc/error.hpp"

namespace mvc {

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail(ErrorCategory::Shape, "cosine of vectors with different sizes");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCategory::Validation, "cosine of a zero vector");
  // Elementwise products commute, so the sum is symmetric in (a, b).
  double dot = 0.0;
  for (Index i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double sv_accuracy(std::span<const ScoredPair> pairs, double threshold) {
  if (pairs.empty()) fail(ErrorCategory::Validation, "no pairs to score");
  if (!(threshold > -1.0 && threshold < 1.0))
    fail(ErrorCategory::Validation, "threshold must lie in (-1, 1)");
  std::size_t accepted = 0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.score)) fail(ErrorCategory::Validation, "non-finite pair score");
    if (p.score >= threshold) ++accepted;
  }
  return static_cast<double>(accepted) / static_cast<double>(pairs.size());
}

EerResult compute_eer(std::vector<double> positives, std::vector<double> negatives) {
  if (positives.empty() || negatives.empty())
    fail(ErrorCategory::Validation, "EER needs both positive and negative scores");
  std::sort(positives.begin(), positives.end());
  std::sort(negatives.begin(), negatives.end());
  std::vector<double> candidates(positives);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const double n_pos = static_cast<double>(positives.size());
  const double n_neg = static_cast<double>(negatives.size());
  EerResult best;
  double best_gap = 2.0;
  for (double thr : candidates) {
    const auto rejected = std::lower_bound(positives.begin(), positives.end(), thr) - positives.begin();
    const auto accepted = negatives.end() - std::lower_bound(negatives.begin(), negatives.end(), thr);
    const double frr = static_cast<double>(rejected) / n_pos;
    const double far = static_cast<double>(accepted) / n_neg;
    const double gap = std::abs(far - frr);
    // Ascending sweep: strict comparison keeps the lowest threshold on ties.
    if (gap < best_gap) {
      best_gap = gap;
      best = {(far + frr) / 2.0, thr, far, frr};
    }
  }
  return best;
}

F0Track track_f0(const Waveform& wav) {
  constexpr int frame = 1024, hop = 256;
  constexpr double fmin = 60.0, fmax = 500.0, voicing = 0.5;
  const double sr = wav.sample_rate;
  const int min_lag = static_cast<int>(std::floor(sr / fmax));
  const int max_lag = static_cast<int>(std::ceil(sr / fmin));
  F0Track track;
  if (wav.size() < static_cast<std::size_t>(frame)) return track;
  const std::size_t frames = 1 + (wav.size() - frame) / hop;

  std::vector<double> rms(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double e = 0.0;
    for (int i = 0; i < frame; ++i) e += wav.samples[f * hop + i] * wav.samples[f * hop + i];
    rms[f] = std::sqrt(e / frame);
  }
  const double loudest = frames ? *std::max_element(rms.begin(), rms.end()) : 0.0;

  std::vector<double> x(frame), r(static_cast<std::size_t>(max_lag + 2), 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    track.f0.push_back(0.0);
    track.voiced.push_back(false);
    if (!(loudest > 0.0) || rms[f] < 0.1 * loudest) continue;
    double mean = 0.0;
    for (int i = 0; i < frame; ++i) mean += (x[i] = wav.samples[f * hop + i]);
    mean /= frame;
    for (double& v : x) v -= mean;

    double best = -1.0;
    for (int lag = min_lag; lag <= max_lag + 1 && lag < frame; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (int i = 0; i + lag < frame; ++i) {
        xy += x[i] * x[i + lag];
        xx += x[i] * x[i];
        yy += x[i + lag] * x[i + lag];
      }
      r[lag] = xx > 0.0 && yy > 0.0 ? xy / std::sqrt(xx * yy) : 0.0;
      if (lag <= max_lag) best = std::max(best, r[lag]);
    }
    if (best < voicing) continue;
    // First local peak close to the global maximum avoids sub-octave picks.
    int chosen = -1;
    for (int lag = min_lag + 1; lag < max_lag && lag + 1 < frame; ++lag) {
      if (r[lag] >= 0.85 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
        chosen = lag;
        break;
      }
    }
    if (chosen < 0) continue;
    const double a = r[chosen - 1], b = r[chosen], c = r[chosen + 1];
    const double denom = a - 2.0 * b + c;
    const double offset = denom != 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    track.f0.back() = sr / (chosen + offset);
    track.voiced.back() = true;
  }
  return track;
}

std::optional<double> median_f0(const Waveform& wav) {
  const auto track = track_f0(wav);
  std::vector<double> v;
  for (std::size_t i = 0; i < track.f0.size(); ++i)
    if (track.voiced[i]) v.push_back(track.f0[i]);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

F0BandResult f0_band_accuracy(std::span<const Waveform> wavs, double lo, double hi) {
  if (!(hi > lo)) fail(ErrorCategory::Validation, "F0 band must have hi > lo");
  F0BandResult res;
  for (const auto& w : wavs) {
    const auto f0 = median_f0(w);
    if (!f0) {
      ++res.unvoiced;
      continue;
    }
    ++res.counted;
    if (*f0 >= lo && *f0 <= hi) ++res.inside;
  }
  res.accuracy = res.counted ? static_cast<double>(res.inside) / res.counted : 0.0;
  return res;
}

}  // namespace mvc

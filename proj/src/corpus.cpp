#include "mediumvc/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mediumvc/error.hpp"

namespace mvc {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double resonance(double f, double centre, double bandwidth) {
  const double r = f / centre;
  const double damping = f * bandwidth / (centre * centre);
  return 1.0 / std::sqrt((1.0 - r * r) * (1.0 - r * r) + damping * damping);
}

}  // namespace

std::vector<CorpusEntry> read_corpus_metadata(const std::filesystem::path& dir) {
  std::ifstream in(dir / "metadata.csv");
  if (!in) fail(ErrorCategory::Io, "cannot read " + (dir / "metadata.csv").string());
  std::vector<CorpusEntry> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("file", 0) == 0) continue;
    }
    const auto f = split_csv(line);
    if (f.size() < 2) fail(ErrorCategory::Format, "metadata row needs file,speaker: " + line);
    CorpusEntry e{f[0], f[1]};
    try {
      if (f.size() >= 4 && !f[2].empty()) e.f0_lo = std::stod(f[2]);
      if (f.size() >= 4 && !f[3].empty()) e.f0_hi = std::stod(f[3]);
    } catch (const std::exception&) {
      fail(ErrorCategory::Format, "bad F0 band in metadata row: " + line);
    }
    rows.push_back(std::move(e));
  }
  return rows;
}

void write_corpus_metadata(const std::filesystem::path& dir, const std::vector<CorpusEntry>& rows) {
  std::ofstream out(dir / "metadata.csv", std::ios::trunc);
  if (!out) fail(ErrorCategory::Io, "cannot write metadata.csv in " + dir.string());
  out << "file,speaker,f0_lo,f0_hi\n";
  for (const auto& r : rows) out << r.file << ',' << r.speaker << ',' << r.f0_lo << ',' << r.f0_hi << '\n';
}

std::vector<ToySpeaker> make_toy_speakers(int n_speakers, std::uint64_t seed) {
  if (n_speakers < 2) fail(ErrorCategory::Validation, "a toy corpus needs at least 2 speakers");
  if (n_speakers > 5) fail(ErrorCategory::Validation, "at most 5 disjoint 40 Hz bands fit in 100-300 Hz");
  std::mt19937_64 rng(seed);
  const double slot = 200.0 / n_speakers;
  std::vector<int> order(static_cast<std::size_t>(n_speakers));
  for (int i = 0; i < n_speakers; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_real_distribution<double> f1(450.0, 800.0), f2(1000.0, 2000.0), f3(2300.0, 3100.0);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::vector<ToySpeaker> out;
  for (int i = 0; i < n_speakers; ++i) {
    ToySpeaker s;
    s.id = "spk" + std::to_string(i);
    const double centre = 100.0 + slot * (order[i] + 0.5);
    s.f0_lo = centre - 20.0;
    s.f0_hi = centre + 20.0;
    s.formants = {f1(rng), f2(rng), f3(rng)};
    s.bandwidths = {70.0 * jitter(rng), 110.0 * jitter(rng), 160.0 * jitter(rng)};
    out.push_back(s);
  }
  return out;
}

Waveform synthesize_utterance(const ToySpeaker& spk, double duration_s, std::uint64_t seed, int sample_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n = static_cast<std::size_t>(duration_s * sample_rate);
  const double sr = sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;

  // F0 contour: a slow random-phase wobble around a centre inside the band.
  const double centre = 0.5 * (spk.f0_lo + spk.f0_hi) + (unit(rng) - 0.5) * 12.0;
  const double rate1 = 0.4 + 0.8 * unit(rng), rate2 = 1.5 + 2.0 * unit(rng);
  const double ph1 = two_pi * unit(rng), ph2 = two_pi * unit(rng);
  const double depth1 = 5.0 + 5.0 * unit(rng), depth2 = 2.0 + 3.0 * unit(rng);

  // Syllable envelope.
  std::vector<double> env(n, 0.0);
  double t = 0.04 + 0.04 * unit(rng);
  while (t < duration_s - 0.1) {
    const double len = std::min(0.15 + 0.2 * unit(rng), duration_s - 0.05 - t);
    const double level = 0.5 + 0.5 * unit(rng);
    const auto a = static_cast<std::size_t>(t * sr), b = static_cast<std::size_t>((t + len) * sr);
    const double attack = 0.02 * sr, release = 0.03 * sr;
    for (std::size_t i = a; i < b && i < n; ++i) {
      const double from_start = static_cast<double>(i - a), to_end = static_cast<double>(b - i);
      double g = 1.0;
      if (from_start < attack) g = 0.5 - 0.5 * std::cos(std::numbers::pi * from_start / attack);
      if (to_end < release) g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * to_end / release));
      env[i] = level * g;
    }
    t += len + 0.03 + 0.05 * unit(rng);
  }

  const double nyquist_guard = std::min(7500.0, sr / 2.0 - 200.0);
  const int max_harmonics = static_cast<int>(nyquist_guard / spk.f0_lo) + 1;
  std::vector<double> phase(static_cast<std::size_t>(max_harmonics + 1), 0.0);
  constexpr std::array<double, 3> formant_gain = {1.0, 0.6, 0.35};

  Waveform wav;
  wav.sample_rate = sample_rate;
  wav.samples.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double time = static_cast<double>(i) / sr;
    double f0 = centre + depth1 * std::sin(two_pi * rate1 * time + ph1) +
                depth2 * std::sin(two_pi * rate2 * time + ph2);
    f0 = std::clamp(f0, spk.f0_lo + 3.0, spk.f0_hi - 3.0);
    double voiced = 0.0;
    if (env[i] > 0.0) {
      for (int k = 1; k <= max_harmonics; ++k) {
        const double f = k * f0;
        phase[k] += two_pi * f / sr;
        if (f > nyquist_guard) continue;
        double tract = 0.0;
        for (int j = 0; j < 3; ++j) tract += formant_gain[j] * resonance(f, spk.formants[j], spk.bandwidths[j]);
        voiced += tract / k * std::sin(phase[k]);
      }
    } else {
      for (int k = 1; k <= max_harmonics; ++k) phase[k] += two_pi * k * f0 / sr;
    }
    wav.samples[i] = env[i] * voiced + 0.0005 * gauss(rng) + 0.002 * env[i] * gauss(rng);
  }
  for (auto& p : phase) p = std::fmod(p, two_pi);

  double peak = 0.0;
  for (double s : wav.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0)
    for (double& s : wav.samples) s *= 0.9 / peak;
  return wav;
}

std::vector<CorpusEntry> make_toy_corpus(const std::filesystem::path& dir, const ToyCorpusOptions& opts) {
  if (opts.utt_per_speaker <= 0) fail(ErrorCategory::Validation, "utt_per_speaker must be positive");
  if (!(opts.min_duration > 0.2 && opts.max_duration >= opts.min_duration))
    fail(ErrorCategory::Validation, "invalid utterance duration range");
  std::filesystem::create_directories(dir);
  const auto speakers = make_toy_speakers(opts.n_speakers, opts.seed);
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> dur(opts.min_duration, opts.max_duration);
  std::vector<CorpusEntry> rows;
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    for (int u = 0; u < opts.utt_per_speaker; ++u) {
      const double d = dur(rng);
      const std::uint64_t utt_seed = rng();
      const Waveform wav = synthesize_utterance(speakers[s], d, utt_seed);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03d.wav", speakers[s].id.c_str(), u);
      write_wav(dir / name, wav);
      rows.push_back({name, speakers[s].id, speakers[s].f0_lo, speakers[s].f0_hi});
    }
  }
  write_corpus_metadata(dir, rows);
  return rows;
}

}  // namespace mvc

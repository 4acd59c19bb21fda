#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mediumvc/audio.hpp"

namespace mvc {

/// One row of a corpus directory's metadata.csv
/// (`file,speaker,f0_lo,f0_hi`; the band columns may be empty).
struct CorpusEntry {
  std::string file;
  std::string speaker;
  double f0_lo = 0.0;
  double f0_hi = 0.0;
};

std::vector<CorpusEntry> read_corpus_metadata(const std::filesystem::path& dir);
void write_corpus_metadata(const std::filesystem::path& dir, const std::vector<CorpusEntry>& rows);

/// Synthetic speaker: an F0 band and a fixed three-formant vocal tract.
struct ToySpeaker {
  std::string id;
  double f0_lo = 0.0;
  double f0_hi = 0.0;
  std::array<double, 3> formants{};
  std::array<double, 3> bandwidths{};
};

/// Disjoint 40 Hz bands spread over 100-300 Hz, one per speaker.
std::vector<ToySpeaker> make_toy_speakers(int n_speakers, std::uint64_t seed);

/// Harmonic source along a random F0 contour inside the band, shaped by the
/// speaker's formant filter and a syllable envelope, plus a little noise.
Waveform synthesize_utterance(const ToySpeaker& speaker, double duration_s, std::uint64_t seed,
                              int sample_rate = kCanonicalSampleRate);

struct ToyCorpusOptions {
  int n_speakers = 4;
  int utt_per_speaker = 20;
  std::uint64_t seed = 0;
  double min_duration = 2.0;
  double max_duration = 4.0;
};

/// Writes spk<i>_<j>.wav files and metadata.csv into `dir`; returns the rows.
std::vector<CorpusEntry> make_toy_corpus(const std::filesystem::path& dir,
                                         const ToyCorpusOptions& opts);

}  // namespace mvc

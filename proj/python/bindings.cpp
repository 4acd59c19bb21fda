// Python bindings for the mediumvc core. Waveforms cross the boundary as
// 1-D float64 arrays and mels as (frames, 80) float64 arrays.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mediumvc/audio.hpp"
#include "mediumvc/cli.hpp"
#include "mediumvc/corpus.hpp"
#include "mediumvc/error.hpp"
#include "mediumvc/eval.hpp"
#include "mediumvc/models.hpp"
#include "mediumvc/training.hpp"

namespace py = pybind11;
using namespace mvc;

namespace {

Waveform to_waveform(const std::vector<double>& samples, int sample_rate) {
  Waveform w;
  w.samples = samples;
  w.sample_rate = sample_rate;
  return w;
}

MelSpectrogram to_mel(const Mat& frames) { return MelSpectrogram{frames, true}; }

}  // namespace

PYBIND11_MODULE(_mediumvc, m) {
  m.doc() = "PSDR-based voice conversion core";

  py::register_exception<Error>(m, "MediumVCError", PyExc_RuntimeError);

  m.attr("SAMPLE_RATE") = kCanonicalSampleRate;
  m.attr("MIN_SHIFT") = kMinShift;
  m.attr("MAX_SHIFT") = kMaxShift;

  m.def(
      "psdr_shift",
      [](const std::vector<double>& samples, int semitones, bool force, int sample_rate) {
        return psdr_shift(to_waveform(samples, sample_rate), ShiftSemitones{semitones}, force).samples;
      },
      py::arg("samples"), py::arg("semitones"), py::arg("force") = false,
      py::arg("sample_rate") = kCanonicalSampleRate,
      "Shift pitch by whole semitones while keeping the duration.");

  m.def(
      "mel_spectrogram",
      [](const std::vector<double>& samples, int sample_rate) {
        return mel_spectrogram(to_waveform(samples, sample_rate)).frames;
      },
      py::arg("samples"), py::arg("sample_rate") = kCanonicalSampleRate,
      "Normalized 80-band log-mel spectrogram, frames x 80, values in [0, 1].");

  m.def(
      "griffin_lim",
      [](const Mat& mel, int n_iters) { return griffin_lim_vocode(to_mel(mel), MelConfig{}, n_iters).samples; },
      py::arg("mel"), py::arg("n_iters") = 60, "Griffin-Lim waveform from a normalized mel.");

  m.def(
      "peak_normalize",
      [](const std::vector<double>& samples) { return peak_normalize(to_waveform(samples, kCanonicalSampleRate)).samples; },
      py::arg("samples"));

  m.def(
      "read_wav",
      [](const std::filesystem::path& path) {
        const Waveform w = read_wav(path);
        return py::make_tuple(w.samples, w.sample_rate);
      },
      py::arg("path"), "Read a WAV as (samples, sample_rate), resampled to 22050 Hz.");
  m.def(
      "write_wav",
      [](const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate) {
        write_wav(path, to_waveform(samples, sample_rate));
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = kCanonicalSampleRate);

  m.def(
      "speaker_embedding",
      [](const Mat& mel) { return MelStatsSpeakerEncoder().embed(mel); }, py::arg("mel"),
      "Unit-norm 256-dim mel-statistics speaker embedding.");

  m.def("cosine", &cosine, py::arg("a"), py::arg("b"));

  m.def(
      "compute_eer",
      [](std::vector<double> pos, std::vector<double> neg) {
        const EerResult r = compute_eer(std::move(pos), std::move(neg));
        py::dict d;
        d["eer"] = r.eer;
        d["threshold"] = r.threshold;
        d["far"] = r.far;
        d["frr"] = r.frr;
        return d;
      },
      py::arg("positives"), py::arg("negatives"));

  m.def(
      "median_f0",
      [](const std::vector<double>& samples, int sample_rate) { return median_f0(to_waveform(samples, sample_rate)); },
      py::arg("samples"), py::arg("sample_rate") = kCanonicalSampleRate,
      "Median F0 of voiced frames in Hz, or None when nothing is voiced.");

  m.def(
      "make_toy_corpus",
      [](const std::filesystem::path& out, int speakers, int utts, std::uint64_t seed) {
        ToyCorpusOptions opts;
        opts.n_speakers = speakers;
        opts.utt_per_speaker = utts;
        opts.seed = seed;
        py::list rows;
        for (const auto& r : make_toy_corpus(out, opts)) rows.append(py::make_tuple(r.file, r.speaker, r.f0_lo, r.f0_hi));
        return rows;
      },
      py::arg("out"), py::arg("speakers") = 4, py::arg("utts") = 20, py::arg("seed") = 0,
      "Synthesize a toy corpus; returns (file, speaker, f0_lo, f0_hi) rows.");

  m.def(
      "convert",
      [](const std::filesystem::path& ckpt, const std::optional<std::filesystem::path>& single_ckpt,
         const std::vector<double>& src, const std::vector<double>& ref, int gl_iters) {
        MediumVC model = load_mediumvc(ckpt);
        std::optional<SingleVC> single;
        if (single_ckpt) single = load_singlevc(*single_ckpt);
        const GriffinLimVocoder vocoder({}, gl_iters);
        const auto out = mvc_convert(to_waveform(src, kCanonicalSampleRate), to_waveform(ref, kCanonicalSampleRate),
                                     model, single ? &*single : nullptr, vocoder);
        return py::make_tuple(out.audio.samples, out.mel.frames);
      },
      py::arg("ckpt"), py::arg("single_ckpt"), py::arg("src"), py::arg("ref"), py::arg("gl_iters") = 60,
      "Any-to-any conversion; returns (samples, converted mel).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run an mvc subcommand in-process; returns (exit_code, stdout, stderr).");
}

#include "mediumvc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "mediumvc/audio.hpp"
#include "mediumvc/checkpoint.hpp"
#include "mediumvc/config.hpp"
#include "mediumvc/corpus.hpp"
#include "mediumvc/error.hpp"
#include "mediumvc/eval.hpp"
#include "mediumvc/models.hpp"
#include "mediumvc/training.hpp"

namespace mvc {
namespace fs = std::filesystem;

namespace {

struct VocoderFlags {
  std::string command;
  int gl_iters = 60;

  void attach(CLI::App* app) {
    app->add_option("--vocoder-cmd", command,
                    "External vocoder command with {in} (MELF) and {out} (WAV) placeholders; "
                    "Griffin-Lim when empty");
    app->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
  }

  std::unique_ptr<Vocoder> make() const {
    if (!command.empty()) return std::make_unique<ExternalVocoder>(command);
    return std::make_unique<GriffinLimVocoder>(MelConfig{}, gl_iters);
  }
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto a = field.find_first_not_of(" \t");
    const auto b = field.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string{} : field.substr(a, b - a + 1));
  }
  return out;
}

std::optional<double> parse_score(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::Io, "cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    rows.push_back(split_fields(line));
  }
  return rows;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

Vec embed_file(const fs::path& path, const MelStatsSpeakerEncoder& enc) {
  const Waveform wav = peak_normalize(read_wav(path));
  return enc.embed(mel_spectrogram(wav).frames);
}

/// Scores `path_a,path_b[,label]` rows with the mel-stats embedding. Rows
/// that do not name two existing files but end in a number are taken as
/// precomputed scores.
std::vector<ScoredPair> score_pairs(const fs::path& csv, bool positives_only) {
  const MelStatsSpeakerEncoder enc;
  const fs::path base = csv.parent_path();
  std::vector<ScoredPair> pairs;
  for (const auto& row : read_csv_rows(csv)) {
    if (row.empty()) continue;
    if (row[0] == "path_a" || row[0] == "score") continue;  // header
    ScoredPair p;
    const bool paths = row.size() >= 2 && fs::is_regular_file(resolve(base, row[0])) &&
                       fs::is_regular_file(resolve(base, row[1]));
    if (paths) {
      p.id_a = row[0];
      p.id_b = row[1];
      if (row.size() >= 3) {
        const std::string& label = row[2];
        if (label == "same" || label == "1" || label == "target") p.same = true;
        else if (label == "different" || label == "0" || label == "nontarget") p.same = false;
        else fail(ErrorCategory::Format, "unknown pair label: " + label);
      }
      p.score = cosine(embed_file(resolve(base, p.id_a), enc), embed_file(resolve(base, p.id_b), enc));
    } else if (const auto s = parse_score(row.back())) {
      p.score = *s;
      if (row.size() >= 2) p.id_a = row[0];
      if (row.size() >= 3) p.id_b = row[1];
    } else {
      fail(ErrorCategory::Format, "row is neither two readable WAV paths nor a score: " + row[0]);
    }
    if (!positives_only || p.same) pairs.push_back(p);
  }
  return pairs;
}

std::vector<double> scores_of(const std::vector<ScoredPair>& pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.score);
  return out;
}

void write_report(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows,
                  std::ostream& out) {
  std::ostringstream text;
  text << "metric,value\n";
  for (const auto& [k, v] : rows) text << k << ',' << v << '\n';
  if (path.empty()) {
    out << text.str();
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorCategory::Io, "cannot write " + path);
  f << text.str();
}

void split_model_and_train(const fs::path& config_path, bool medium,
                           SingleVCConfig* single_cfg,
                           MediumVCConfig* medium_cfg, TrainConfig* train) {
  ConfigReader reader(read_config_file(config_path));
  if (medium) *medium_cfg = MediumVCConfig::read(reader);
  else *single_cfg = SingleVCConfig::read(reader);
  *train = TrainConfig::read(reader);
  reader.finish();
}

void report_untrained(bool flag, std::ostream& err) {
  if (flag) err << "warning: converting with randomly initialized weights\n";
}

// Builds the SingleVC a MediumVC run or conversion uses for its mode.
std::optional<SingleVC> single_for_mode(MediumMode mode, const std::string& single_ckpt) {
  switch (mode) {
    case MediumMode::Full:
      if (single_ckpt.empty()) fail(ErrorCategory::Config, "--single-ckpt is required in full mode");
      return load_singlevc(single_ckpt);
    case MediumMode::UntrainedSingle: {
      SingleVCConfig cfg;
      if (!single_ckpt.empty()) {
        ConfigReader reader(read_checkpoint_meta(single_ckpt).config);
        cfg = SingleVCConfig::read(reader);
      }
      return SingleVC(cfg);
    }
    case MediumMode::NoSingle:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::string> cli_subcommands() {
  return {"psdr",           "prep",    "make-toy-corpus", "train-single", "train-medium",
          "convert-single", "convert", "eval-sv",         "eval-eer",     "vocode"};
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MediumVC voice conversion toolkit", "mvc"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // psdr
  std::string psdr_in, psdr_out;
  int semitones = 0;
  bool force = false;
  auto* psdr = app.add_subcommand("psdr", "Pitch-shift a WAV while keeping its duration");
  psdr->add_option("--in", psdr_in, "Input WAV")->required();
  psdr->add_option("--semitones", semitones, "Shift in semitones; [-6,4] unless --force")->required();
  psdr->add_option("--out", psdr_out, "Output WAV")->required();
  psdr->add_flag("--force", force, "Allow shifts outside [-6,4]");

  // prep
  std::string prep_corpus, prep_out;
  int jobs = 1;
  auto* prep = app.add_subcommand("prep", "Peak-normalize a corpus and write MELF features");
  prep->add_option("--corpus", prep_corpus, "Directory of WAV files")->required();
  prep->add_option("--out", prep_out, "Output directory for .melf files")->required();
  prep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // make-toy-corpus
  std::string toy_out;
  ToyCorpusOptions toy;
  auto* make_toy = app.add_subcommand("make-toy-corpus", "Synthesize a multi-speaker toy corpus");
  make_toy->add_option("--out", toy_out, "Output directory")->required();
  make_toy->add_option("--speakers", toy.n_speakers, "Number of speakers (2-5)");
  make_toy->add_option("--utts", toy.utt_per_speaker, "Utterances per speaker");
  make_toy->add_option("--seed", toy.seed, "Random seed");
  make_toy->add_option("--min-duration", toy.min_duration, "Shortest utterance in seconds");
  make_toy->add_option("--max-duration", toy.max_duration, "Longest utterance in seconds");

  // train-single
  std::string ts_config, ts_corpus, ts_out, ts_speaker, ts_log;
  bool ts_resume = false;
  auto* train_single = app.add_subcommand("train-single", "Train the any-to-one SingleVC model");
  train_single->add_option("--config", ts_config, "key=value config file")->required();
  train_single->add_option("--corpus", ts_corpus, "Corpus directory")->required();
  train_single->add_option("--out", ts_out, "Checkpoint directory")->required();
  train_single->add_option("--speaker", ts_speaker, "Train only on this speaker's utterances");
  train_single->add_option("--log", ts_log, "Loss CSV (default: <out>/train_log.csv)");
  train_single->add_flag("--resume", ts_resume, "Continue from the checkpoint in --out");

  // train-medium
  std::string tm_config, tm_corpus, tm_single, tm_mode = "full", tm_out, tm_log;
  bool tm_resume = false;
  auto* train_medium = app.add_subcommand("train-medium", "Train the any-to-any MediumVC model");
  train_medium->add_option("--config", tm_config, "key=value config file")->required();
  train_medium->add_option("--corpus", tm_corpus, "Corpus directory")->required();
  train_medium->add_option("--single-ckpt", tm_single, "Frozen SingleVC checkpoint");
  train_medium->add_option("--mode", tm_mode, "full | mwus | mwos")
      ->check(CLI::IsMember({"full", "mwus", "mwos"}));
  train_medium->add_option("--out", tm_out, "Checkpoint directory")->required();
  train_medium->add_option("--log", tm_log, "Loss CSV (default: <out>/train_log.csv)");
  train_medium->add_flag("--resume", tm_resume, "Continue from the checkpoint in --out");

  // convert-single
  std::string cs_ckpt, cs_in, cs_out, cs_mel;
  VocoderFlags cs_voc;
  auto* convert_single = app.add_subcommand("convert-single", "Convert any speech to the SingleVC target voice");
  convert_single->add_option("--ckpt", cs_ckpt, "SingleVC checkpoint")->required();
  convert_single->add_option("--in", cs_in, "Source WAV")->required();
  convert_single->add_option("--out", cs_out, "Output WAV")->required();
  convert_single->add_option("--mel-out", cs_mel, "Also write the converted mel as MELF");
  cs_voc.attach(convert_single);

  // convert
  std::string cv_ckpt, cv_single, cv_src, cv_ref, cv_out, cv_mel, cv_ref_id;
  bool roundtrip = false;
  VocoderFlags cv_voc;
  auto* convert = app.add_subcommand("convert", "Any-to-any conversion with MediumVC");
  convert->add_option("--ckpt", cv_ckpt, "MediumVC checkpoint")->required();
  convert->add_option("--single-ckpt", cv_single, "SingleVC checkpoint");
  convert->add_option("--src", cv_src, "Source (content) WAV")->required();
  convert->add_option("--ref", cv_ref, "Target speaker reference WAV")->required();
  convert->add_option("--ref-id", cv_ref_id, "Reference id in the external embedding manifest");
  convert->add_option("--out", cv_out, "Output WAV")->required();
  convert->add_option("--mel-out", cv_mel, "Also write the converted mel as MELF");
  convert->add_flag("--roundtrip-audio", roundtrip, "Vocode and re-analyse the SingleVC output");
  cv_voc.attach(convert);

  // eval-sv
  std::string sv_pairs, sv_report;
  double sv_thr = sv_threshold::kVctk;
  auto* eval_sv = app.add_subcommand("eval-sv", "Speaker-verification accuracy of positive pairs");
  eval_sv->add_option("--pairs", sv_pairs, "CSV of path_a,path_b,label")->required();
  eval_sv->add_option("--threshold", sv_thr, "Accept threshold on cosine score");
  eval_sv->add_option("--report", sv_report, "Report CSV (default: stdout)");

  // eval-eer
  std::string eer_pos, eer_neg, eer_report;
  auto* eval_eer = app.add_subcommand("eval-eer", "Equal error rate of target and non-target trials");
  eval_eer->add_option("--pos", eer_pos, "Target trials: path_a,path_b or ...,score")->required();
  eval_eer->add_option("--neg", eer_neg, "Non-target trials: path_a,path_b or ...,score")->required();
  eval_eer->add_option("--report", eer_report, "Report CSV (default: stdout)");

  // vocode
  std::string vo_mel, vo_out;
  VocoderFlags vo_voc;
  auto* vocode = app.add_subcommand("vocode", "Synthesize a waveform from a MELF file");
  vocode->add_option("--mel", vo_mel, "Input MELF")->required();
  vocode->add_option("--out", vo_out, "Output WAV")->required();
  vo_voc.attach(vocode);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (psdr->parsed()) {
      const Waveform wav = read_wav(psdr_in);
      write_wav(psdr_out, psdr_shift(wav, ShiftSemitones{semitones}, force));
    } else if (prep->parsed()) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(prep_corpus))
        if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      fs::create_directories(prep_out);
      std::atomic<std::size_t> next{0};
      std::mutex error_mutex;
      std::optional<Error> first_error;
      auto worker = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++) {
          try {
            const auto mel = mel_spectrogram(peak_normalize(read_wav(files[i])));
            write_melf(fs::path(prep_out) / files[i].filename().replace_extension(".melf"), mel);
          } catch (const Error& e) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = Error(e.category(), files[i].filename().string() + ": " + e.what());
          }
        }
      };
      std::vector<std::thread> pool;
      const int n = std::min<int>(jobs, std::max<std::size_t>(files.size(), 1));
      for (int j = 1; j < n; ++j) pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();
      if (first_error) throw *first_error;
      out << "prepared " << files.size() << " files\n";
    } else if (make_toy->parsed()) {
      const auto rows = make_toy_corpus(toy_out, toy);
      out << "wrote " << rows.size() << " utterances\n";
    } else if (train_single->parsed()) {
      SingleVCConfig mcfg;
      TrainConfig tcfg;
      split_model_and_train(ts_config, false, &mcfg, nullptr, &tcfg);
      SingleVC model(mcfg);
      SingleVCTrainer trainer(model, tcfg, load_corpus(ts_corpus, ts_speaker));
      if (ts_resume && fs::exists(fs::path(ts_out) / "manifest.json")) trainer.resume(ts_out);
      const fs::path log = ts_log.empty() ? fs::path(ts_out) / "train_log.csv" : fs::path(ts_log);
      trainer.run(log, fs::path(ts_out));
      out << "trained " << trainer.step() << " steps, corpus L1 " << format_number(trainer.evaluate()) << "\n";
    } else if (train_medium->parsed()) {
      MediumVCConfig mcfg;
      TrainConfig tcfg;
      split_model_and_train(tm_config, true, nullptr, &mcfg, &tcfg);
      mcfg.mode = parse_medium_mode(tm_mode);
      MediumVC model(mcfg);
      auto single = single_for_mode(mcfg.mode, tm_single);
      ExternalSpeakerEmbeddings external;
      if (mcfg.speaker_encoder == "external_file") external = ExternalSpeakerEmbeddings::load(mcfg.speaker_sidecar);
      MediumVCTrainer trainer(model, single ? &*single : nullptr, tcfg, load_corpus(tm_corpus),
                              mcfg.speaker_encoder == "external_file" ? &external : nullptr);
      if (tm_resume && fs::exists(fs::path(tm_out) / "manifest.json")) trainer.resume(tm_out);
      const fs::path log = tm_log.empty() ? fs::path(tm_out) / "train_log.csv" : fs::path(tm_log);
      trainer.run(log, fs::path(tm_out));
      out << "trained " << trainer.step() << " steps (" << tm_mode << "), corpus L1 "
          << format_number(trainer.evaluate()) << "\n";
    } else if (convert_single->parsed()) {
      SingleVC model = load_singlevc(cs_ckpt);
      const auto vocoder = cs_voc.make();
      const auto res = sv_convert(read_wav(cs_in), model, *vocoder);
      report_untrained(res.untrained_warning, err);
      write_wav(cs_out, res.audio);
      if (!cs_mel.empty()) write_melf(cs_mel, res.mel);
    } else if (convert->parsed()) {
      MediumVC model = load_mediumvc(cv_ckpt);
      auto single = single_for_mode(model.config().mode, cv_single);
      ExternalSpeakerEmbeddings external;
      MediumConvertOptions opts;
      opts.roundtrip_audio = roundtrip;
      if (model.config().speaker_encoder == "external_file") {
        external = ExternalSpeakerEmbeddings::load(model.config().speaker_sidecar);
        opts.external = &external;
        opts.reference_id = cv_ref_id.empty() ? fs::path(cv_ref).stem().string() : cv_ref_id;
      }
      const auto vocoder = cv_voc.make();
      const auto res = mvc_convert(read_wav(cv_src), read_wav(cv_ref), model, single ? &*single : nullptr,
                                   *vocoder, opts);
      report_untrained(res.untrained_warning, err);
      write_wav(cv_out, res.audio);
      if (!cv_mel.empty()) write_melf(cv_mel, res.mel);
    } else if (eval_sv->parsed()) {
      const auto pairs = score_pairs(sv_pairs, true);
      const double acc = sv_accuracy(pairs, sv_thr);
      double mean = 0.0;
      for (const auto& p : pairs) mean += p.score;
      mean /= static_cast<double>(pairs.size());
      write_report(sv_report,
                   {{"pairs", std::to_string(pairs.size())},
                    {"threshold", format_number(sv_thr)},
                    {"sv_accuracy", format_number(acc)},
                    {"mean_score", format_number(mean)}},
                   out);
    } else if (eval_eer->parsed()) {
      const auto r = compute_eer(scores_of(score_pairs(eer_pos, false)), scores_of(score_pairs(eer_neg, false)));
      write_report(eer_report,
                   {{"eer", format_number(r.eer)},
                    {"threshold", format_number(r.threshold)},
                    {"far", format_number(r.far)},
                    {"frr", format_number(r.frr)}},
                   out);
    } else if (vocode->parsed()) {
      const auto vocoder = vo_voc.make();
      write_wav(vo_out, vocoder->vocode(read_melf(vo_mel)));
    }
  } catch (const Error& e) {
    err << e.tagged() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "IO/" << e.what() << '\n';
    return 1;
  } catch (const std::bad_alloc&) {
    err << "RESOURCE/out of memory\n";
    return 1;
  }
  return 0;
}

}  // namespace mvc

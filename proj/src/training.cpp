#include "mediumvc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mediumvc/corpus.hpp"
#include "mediumvc/error.hpp"

namespace mvc {

// -------------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorCategory::Config, "lr must be positive");
  if (optimizer != "adamw") fail(ErrorCategory::Config, "only the adamw optimizer is supported");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) fail(ErrorCategory::Config, "lr_gamma must lie in (0,1]");
  if (lr_step <= 0) fail(ErrorCategory::Config, "lr_step must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorCategory::Config, "adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) fail(ErrorCategory::Config, "adam_eps must be positive");
  if (weight_decay < 0.0) fail(ErrorCategory::Config, "weight_decay must be non-negative");
  if (batch_size <= 0) fail(ErrorCategory::Config, "batch_size must be positive");
  if (max_steps < 0) fail(ErrorCategory::Config, "max_steps must be non-negative");
  if (segment_frames < 0) fail(ErrorCategory::Config, "segment_frames must be non-negative");
  if (checkpoint_every < 0) fail(ErrorCategory::Config, "checkpoint_every must be non-negative");
}

ConfigMap TrainConfig::to_map() const {
  return {
      {"lr", format_number(lr)},
      {"optimizer", optimizer},
      {"beta1", format_number(beta1)},
      {"beta2", format_number(beta2)},
      {"adam_eps", format_number(adam_eps)},
      {"weight_decay", format_number(weight_decay)},
      {"lr_gamma", format_number(lr_gamma)},
      {"lr_step", std::to_string(lr_step)},
      {"batch_size", std::to_string(batch_size)},
      {"max_steps", std::to_string(max_steps)},
      {"seed", std::to_string(seed)},
      {"segment_frames", std::to_string(segment_frames)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
  };
}

TrainConfig TrainConfig::read(ConfigReader& r) {
  TrainConfig c;
  c.lr = r.get_double("lr", c.lr);
  c.optimizer = r.get_string("optimizer", c.optimizer);
  c.beta1 = r.get_double("beta1", c.beta1);
  c.beta2 = r.get_double("beta2", c.beta2);
  c.adam_eps = r.get_double("adam_eps", c.adam_eps);
  c.weight_decay = r.get_double("weight_decay", c.weight_decay);
  c.lr_gamma = r.get_double("lr_gamma", c.lr_gamma);
  c.lr_step = r.get_int("lr_step", c.lr_step);
  c.batch_size = r.get_int("batch_size", c.batch_size);
  c.max_steps = r.get_int("max_steps", c.max_steps);
  c.seed = static_cast<std::uint64_t>(r.get_int("seed", static_cast<int>(c.seed)));
  c.segment_frames = r.get_int("segment_frames", c.segment_frames);
  c.checkpoint_every = r.get_int("checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

// ------------------------------------------------------------ batch + loss

Batch pad_batch(const std::vector<Mat>& mels) {
  if (mels.empty()) fail(ErrorCategory::Validation, "cannot pad an empty batch");
  const Index channels = mels.front().cols();
  Index t_max = 0;
  for (const auto& m : mels) {
    if (m.cols() != channels) fail(ErrorCategory::Shape, "batch items differ in channel count");
    t_max = std::max(t_max, m.rows());
  }
  Batch b;
  b.mask = Mask::Constant(static_cast<Index>(mels.size()), t_max, false);
  for (std::size_t i = 0; i < mels.size(); ++i) {
    Mat padded = Mat::Zero(t_max, channels);
    padded.topRows(mels[i].rows()) = mels[i];
    b.mels.push_back(std::move(padded));
    b.lengths.push_back(mels[i].rows());
    b.mask.row(static_cast<Index>(i)).head(mels[i].rows()).setConstant(true);
  }
  return b;
}

namespace {

void check_loss_shapes(const std::vector<Mat>& pred, const std::vector<Mat>& target, const Mask& mask) {
  if (pred.size() != target.size() || static_cast<Index>(pred.size()) != mask.rows())
    fail(ErrorCategory::Shape, "loss inputs disagree on batch size");
  for (std::size_t b = 0; b < pred.size(); ++b)
    if (pred[b].rows() != target[b].rows() || pred[b].cols() != target[b].cols() ||
        pred[b].rows() != mask.cols())
      fail(ErrorCategory::Shape, "loss inputs disagree on item shape");
}

}  // namespace

double masked_l1(const std::vector<Mat>& pred, const std::vector<Mat>& target, const Mask& mask) {
  check_loss_shapes(pred, target, mask);
  double sum = 0.0;
  Index count = 0;
  for (std::size_t b = 0; b < pred.size(); ++b) {
    for (Index t = 0; t < mask.cols(); ++t) {
      if (!mask(static_cast<Index>(b), t)) continue;
      sum += (pred[b].row(t) - target[b].row(t)).cwiseAbs().sum();
      count += pred[b].cols();
    }
  }
  if (count == 0) fail(ErrorCategory::Validation, "mask selects no frames");
  return sum / static_cast<double>(count);
}

Mat masked_l1_grad(const Mat& pred, const Mat& target, const Mask& mask, Index b,
                   double element_count) {
  Mat g = Mat::Zero(pred.rows(), pred.cols());
  for (Index t = 0; t < pred.rows() && t < mask.cols(); ++t) {
    if (!mask(b, t)) continue;
    for (Index c = 0; c < pred.cols(); ++c) {
      const double d = pred(t, c) - target(t, c);
      g(t, c) = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / element_count;
    }
  }
  return g;
}

// ------------------------------------------------------------------- AdamW

void AdamState::init(const nn::ParamStore& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
  t = 0;
}

void AdamState::round_to_f32() {
  auto round = [](double x) { return static_cast<double>(static_cast<float>(x)); };
  for (auto& x : m) x = x.unaryExpr(round);
  for (auto& x : v) x = x.unaryExpr(round);
}

void adamw_step(nn::ParamStore& params, AdamState& state, const TrainConfig& cfg, double lr) {
  if (state.m.size() != params.size()) state.init(params);
  for (const auto& p : params)
    if (!p->grad.allFinite()) fail(ErrorCategory::Numeric, "non-finite gradient in " + p->name);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    p.value *= decay;
    const auto denom = ((v / bc2).array().sqrt() + cfg.adam_eps).matrix();
    p.value -= (lr * (m / bc1).array() / denom.array()).matrix();
  }
}

double exp_lr(long long step, const TrainConfig& cfg) {
  if (step < 0) fail(ErrorCategory::Validation, "step must be non-negative");
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>(step / cfg.lr_step));
}

// ------------------------------------------------------------------ corpus

std::vector<Utterance> load_corpus(const std::filesystem::path& dir, const std::string& speaker,
                                   const MelConfig& mel_cfg) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCategory::Io, "no corpus directory " + dir.string());
  std::vector<CorpusEntry> rows;
  if (std::filesystem::exists(dir / "metadata.csv")) {
    rows = read_corpus_metadata(dir);
  } else {
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".wav") rows.push_back({e.path().filename().string(), "unknown"});
    std::sort(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.file < b.file; });
  }
  std::vector<Utterance> out;
  for (const auto& r : rows) {
    if (!speaker.empty() && r.speaker != speaker) continue;
    Utterance u;
    u.id = std::filesystem::path(r.file).stem().string();
    u.speaker = r.speaker;
    u.wav = peak_normalize(read_wav(dir / r.file, mel_cfg.sample_rate));
    u.mel = mel_spectrogram(u.wav, mel_cfg).frames;
    out.push_back(std::move(u));
  }
  if (out.empty()) fail(ErrorCategory::Validation, "corpus " + dir.string() + " has no matching utterances");
  return out;
}

// ----------------------------------------------------------------- Trainer

nn::Rng step_rng(std::uint64_t seed, long long step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  return nn::Rng(seq);
}

Trainer::Trainer(nn::ParamStore& params, TrainConfig cfg) : params_(params), cfg_(std::move(cfg)) {
  cfg_.validate();
  adam_.init(params_);
}

double Trainer::train_step() {
  params_.zero_grad();
  const double loss = compute_batch(step_);
  adamw_step(params_, adam_, cfg_, exp_lr(step_, cfg_));
  // Keep weights and moments f32-exact so checkpoints restore bit for bit.
  params_.round_to_f32();
  adam_.round_to_f32();
  ++step_;
  on_step_done();
  return loss;
}

void append_log_row(const std::filesystem::path& path, long long step, double loss, double lr) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  char line[160];
  int n = std::snprintf(line, sizeof line, "%s%lld,%.9g,%.9g\n", fresh ? "step,loss,lr\n" : "", step,
                        loss, lr);
  std::FILE* f = std::fopen(path.string().c_str(), "ab");
  if (!f) fail(ErrorCategory::Io, "cannot append to " + path.string());
  const auto written = std::fwrite(line, 1, static_cast<std::size_t>(n), f);
  std::fclose(f);
  if (written != static_cast<std::size_t>(n)) fail(ErrorCategory::Io, "short write to " + path.string());
}

void Trainer::run(const std::optional<std::filesystem::path>& log,
                  const std::optional<std::filesystem::path>& ckpt_dir) {
  if (log && log->has_parent_path()) std::filesystem::create_directories(log->parent_path());
  if (ckpt_dir) std::filesystem::create_directories(*ckpt_dir);
  while (step_ < cfg_.max_steps) {
    const double lr = exp_lr(step_, cfg_);
    const long long index = step_;
    const double loss = train_step();
    if (log) append_log_row(*log, index, loss, lr);
    if (ckpt_dir && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save(*ckpt_dir);
  }
  if (ckpt_dir) save(*ckpt_dir);
}

void Trainer::save(const std::filesystem::path& dir) const {
  save_checkpoint(dir, params_, meta(), &adam_);
}

void Trainer::resume(const std::filesystem::path& dir) {
  const auto m = read_checkpoint_meta(dir);
  if (m.model != meta().model)
    fail(ErrorCategory::Config, "checkpoint holds a " + m.model + " model, expected " + meta().model);
  load_checkpoint_params(dir, params_, &adam_);
  step_ = m.step;
  if (step_ > 0) on_step_done();
}

namespace {

ConfigMap merged(ConfigMap model, const ConfigMap& train) {
  for (const auto& [k, v] : train) model.emplace(k, v);
  return model;
}

std::vector<std::size_t> draw_items(nn::Rng& rng, std::size_t corpus, int batch_size) {
  std::vector<std::size_t> order(corpus);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (static_cast<std::size_t>(batch_size) >= corpus) return order;
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch_size); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, corpus - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(static_cast<std::size_t>(batch_size));
  return order;
}

struct Crop {
  Index start = 0;
  Index length = 0;
};

Crop draw_crop(nn::Rng& rng, Index frames, int segment) {
  if (segment <= 0 || frames <= segment) return {0, frames};
  std::uniform_int_distribution<Index> pick(0, frames - segment);
  return {pick(rng), segment};
}

/// Forward/backward each item separately at its true length; padding never
/// reaches the model.
template <class Forward, class Backward>
double run_batch(const std::vector<Mat>& targets, Forward&& forward, Backward&& backward) {
  const Batch batch = pad_batch(targets);
  const double count =
      static_cast<double>(std::accumulate(batch.lengths.begin(), batch.lengths.end(), Index{0})) *
      static_cast<double>(targets.front().cols());
  std::vector<Mat> preds;
  for (Index b = 0; b < batch.size(); ++b) {
    const Mat pred = forward(static_cast<std::size_t>(b));
    Mat padded = Mat::Zero(batch.max_frames(), pred.cols());
    padded.topRows(pred.rows()) = pred;
    const Mat grad = masked_l1_grad(padded, batch.mels[b], batch.mask, b, count);
    backward(static_cast<std::size_t>(b), Mat(grad.topRows(pred.rows())));
    preds.push_back(std::move(padded));
  }
  return masked_l1(preds, batch.mels, batch.mask);
}

}  // namespace

// --------------------------------------------------------------- SingleVC

double sv_training_step(const Waveform& x, ShiftSemitones s, SingleVC& model, const MelConfig& mel_cfg) {
  const Waveform shifted = psdr_shift(x, s);
  const Mat source = mel_spectrogram(shifted, mel_cfg).frames;
  const Mat target = mel_spectrogram(x, mel_cfg).frames;
  const Index t = std::min(source.rows(), target.rows());
  const Mat pred = model.forward(source.topRows(t));
  const Mat diff = pred - target.topRows(t);
  const double count = static_cast<double>(diff.size());
  model.backward(diff.unaryExpr([count](double d) { return (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / count; }));
  return diff.cwiseAbs().sum() / count;
}

SingleVCTrainer::SingleVCTrainer(SingleVC& model, TrainConfig cfg, std::vector<Utterance> corpus,
                                 MelConfig mel_cfg)
    : Trainer(model.params(), std::move(cfg)),
      model_(model),
      corpus_(std::move(corpus)),
      mel_cfg_(mel_cfg),
      shifts_(model.config().shift_set()) {
  if (corpus_.empty()) fail(ErrorCategory::Validation, "SingleVC training needs at least one utterance");
}

const Mat& SingleVCTrainer::shifted_mel(std::size_t utt, int shift) {
  const auto key = std::make_pair(utt, shift);
  auto it = shifted_cache_.find(key);
  if (it != shifted_cache_.end()) return it->second;
  const Waveform shifted = psdr_shift(corpus_[utt].wav, ShiftSemitones{shift});
  return shifted_cache_.emplace(key, mel_spectrogram(shifted, mel_cfg_).frames).first->second;
}

double SingleVCTrainer::compute_batch(long long step) {
  nn::Rng rng = step_rng(cfg_.seed, step);
  const auto items = draw_items(rng, corpus_.size(), cfg_.batch_size);
  std::uniform_int_distribution<std::size_t> pick_shift(0, shifts_.size() - 1);
  std::vector<Mat> inputs, targets;
  for (auto u : items) {
    const Mat& src = shifted_mel(u, shifts_[pick_shift(rng)]);
    const Mat& tgt = corpus_[u].mel;
    const Index frames = std::min(src.rows(), tgt.rows());
    const Crop c = draw_crop(rng, frames, cfg_.segment_frames);
    inputs.push_back(src.middleRows(c.start, c.length));
    targets.push_back(tgt.middleRows(c.start, c.length));
  }
  return run_batch(
      targets, [&](std::size_t b) { return model_.forward(inputs[b]); },
      [&](std::size_t, const Mat& g) { model_.backward(g); });
}

double SingleVCTrainer::evaluate() {
  double sum = 0.0;
  Index count = 0;
  for (std::size_t u = 0; u < corpus_.size(); ++u) {
    for (int s : shifts_) {
      const Mat& src = shifted_mel(u, s);
      const Index frames = std::min(src.rows(), corpus_[u].mel.rows());
      const Mat pred = model_.forward(src.topRows(frames));
      sum += (pred - corpus_[u].mel.topRows(frames)).cwiseAbs().sum();
      count += pred.size();
    }
  }
  return sum / static_cast<double>(count);
}

CheckpointMeta SingleVCTrainer::meta() const {
  CheckpointMeta m;
  m.model = "singlevc";
  m.config = merged(model_.config().to_map(), cfg_.to_map());
  m.config_hash = config_hash(m.config);
  m.step = step_;
  m.random_init = step_ == 0;
  return m;
}

// --------------------------------------------------------------- MediumVC

MediumVCTrainer::MediumVCTrainer(MediumVC& model, SingleVC* single, TrainConfig cfg,
                                 std::vector<Utterance> corpus, const ExternalSpeakerEmbeddings* external)
    : Trainer(model.params(), std::move(cfg)), model_(model), corpus_(std::move(corpus)), external_(external) {
  if (corpus_.empty()) fail(ErrorCategory::Validation, "MediumVC training needs at least one utterance");
  const auto mode = model_.config().mode;
  if (mode != MediumMode::NoSingle && !single)
    fail(ErrorCategory::Config, "mode " + to_string(mode) + " needs a SingleVC model");
  if (model_.config().speaker_encoder == "external_file" && !external_)
    fail(ErrorCategory::Config, "external speaker embeddings not loaded");
  for (const auto& u : corpus_) {
    // V_Y is frozen, so its output for each utterance is fixed up front.
    intermediate_.push_back(intermediate_mel(u.mel, mode, single));
    if (external_) fixed_embeddings_.push_back(external_->lookup(u.id));
    else if (!model_.config().trainable_speaker) fixed_embeddings_.push_back(model_.speaker_embed(u.mel));
  }
}

Vec MediumVCTrainer::speaker_for(std::size_t index) {
  if (!fixed_embeddings_.empty()) return fixed_embeddings_[index];
  return model_.speaker_embed(corpus_[index].mel);
}

double MediumVCTrainer::compute_batch(long long step) {
  nn::Rng rng = step_rng(cfg_.seed, step);
  const auto items = draw_items(rng, corpus_.size(), cfg_.batch_size);
  std::vector<Mat> inputs, targets;
  for (auto u : items) {
    const Crop c = draw_crop(rng, corpus_[u].mel.rows(), cfg_.segment_frames);
    inputs.push_back(intermediate_[u].middleRows(c.start, c.length));
    targets.push_back(corpus_[u].mel.middleRows(c.start, c.length));
  }
  return run_batch(
      targets,
      [&](std::size_t b) { return model_.forward(speaker_for(items[b]), inputs[b]); },
      [&](std::size_t, const Mat& g) { model_.speaker_backward(model_.backward(g)); });
}

double MediumVCTrainer::utterance_loss(std::size_t index) {
  const Mat pred = model_.forward(speaker_for(index), intermediate_[index]);
  return (pred - corpus_[index].mel).cwiseAbs().mean();
}

double MediumVCTrainer::evaluate() {
  double sum = 0.0;
  Index count = 0;
  for (std::size_t u = 0; u < corpus_.size(); ++u) {
    sum += utterance_loss(u) * static_cast<double>(corpus_[u].mel.size());
    count += corpus_[u].mel.size();
  }
  return sum / static_cast<double>(count);
}

CheckpointMeta MediumVCTrainer::meta() const {
  CheckpointMeta m;
  m.model = "mediumvc";
  m.config = merged(model_.config().to_map(), cfg_.to_map());
  m.config_hash = config_hash(m.config);
  m.step = step_;
  m.random_init = step_ == 0;
  return m;
}

// ------------------------------------------------------------------ loading

SingleVC load_singlevc(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.model != "singlevc") fail(ErrorCategory::Config, dir.string() + " is not a SingleVC checkpoint");
  ConfigReader reader(meta.config);
  SingleVC model(SingleVCConfig::read(reader));
  load_checkpoint_params(dir, model.params());
  model.untrained = meta.random_init;
  return model;
}

MediumVC load_mediumvc(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.model != "mediumvc") fail(ErrorCategory::Config, dir.string() + " is not a MediumVC checkpoint");
  ConfigReader reader(meta.config);
  MediumVC model(MediumVCConfig::read(reader));
  load_checkpoint_params(dir, model.params());
  model.untrained = meta.random_init;
  return model;
}

}  // namespace mvc

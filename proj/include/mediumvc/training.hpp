#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mediumvc/audio.hpp"
#include "mediumvc/checkpoint.hpp"
#include "mediumvc/config.hpp"
#include "mediumvc/models.hpp"
#include "mediumvc/nn.hpp"

namespace mvc {

struct TrainConfig {
  double lr = 1e-4;
  std::string optimizer = "adamw";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double lr_gamma = 0.999;
  int lr_step = 100;
  int batch_size = 8;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  /// Random crop length in frames; 0 trains on whole utterances.
  int segment_frames = 0;
  int checkpoint_every = 0;

  void validate() const;
  ConfigMap to_map() const;
  static TrainConfig read(ConfigReader& reader);
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Zero-padded mini-batch; mask(b, t) is true exactly for t < lengths[b].
struct Batch {
  std::vector<Mat> mels;
  Mask mask;
  std::vector<Index> lengths;

  Index size() const noexcept { return static_cast<Index>(mels.size()); }
  Index max_frames() const noexcept { return mask.cols(); }
};

Batch pad_batch(const std::vector<Mat>& mels);

/// Mean |pred - target| over masked frames (all channels).
double masked_l1(const std::vector<Mat>& pred, const std::vector<Mat>& target, const Mask& mask);

/// d masked_l1 / d pred for item `b`, given the batch-wide element count.
Mat masked_l1_grad(const Mat& pred, const Mat& target, const Mask& mask, Index b,
                   double element_count);

struct AdamState {
  std::vector<Mat> m, v;
  long long t = 0;

  void init(const nn::ParamStore& params);
  void round_to_f32();
};

/// Decoupled-weight-decay Adam with bias correction. Rejects the whole step
/// (no parameter touched) if any gradient is non-finite.
void adamw_step(nn::ParamStore& params, AdamState& state, const TrainConfig& cfg, double lr);

/// lr * gamma^floor(step / lr_step).
double exp_lr(long long step, const TrainConfig& cfg);

struct Utterance {
  std::string id;
  std::string speaker;
  Waveform wav;
  Mat mel;
};

/// Reads every WAV listed in DIR/metadata.csv (or every *.wav when there is
/// none), peak-normalizes and analyses it. `speaker` filters when non-empty.
std::vector<Utterance> load_corpus(const std::filesystem::path& dir,
                                   const std::string& speaker = {},
                                   const MelConfig& mel_cfg = {});

/// Shared optimizer / logging / checkpoint loop.
class Trainer {
 public:
  Trainer(nn::ParamStore& params, TrainConfig cfg);
  virtual ~Trainer() = default;

  const TrainConfig& config() const noexcept { return cfg_; }
  long long step() const noexcept { return step_; }
  AdamState& optimizer() noexcept { return adam_; }

  /// One optimizer update; returns the batch loss before the update.
  double train_step();
  /// Runs until max_steps, appending `step,loss,lr` rows to `log` and saving
  /// to `ckpt_dir` every checkpoint_every steps and at the end.
  void run(const std::optional<std::filesystem::path>& log,
           const std::optional<std::filesystem::path>& ckpt_dir);

  void save(const std::filesystem::path& dir) const;
  void resume(const std::filesystem::path& dir);

 protected:
  /// Loss of the batch drawn for `step`, with gradients accumulated.
  virtual double compute_batch(long long step) = 0;
  virtual CheckpointMeta meta() const = 0;
  virtual void on_step_done() {}

  nn::ParamStore& params_;
  TrainConfig cfg_;
  AdamState adam_;
  long long step_ = 0;
};

/// Deterministic per-step generator so resumed runs draw the same batches.
nn::Rng step_rng(std::uint64_t seed, long long step);

/// One-sample SingleVC objective: L1 between D(E(mel(psdr(x, s)))) and
/// mel(x), frames truncated to the shorter of the two. Fills gradients.
double sv_training_step(const Waveform& x, ShiftSemitones s, SingleVC& model,
                        const MelConfig& mel_cfg = {});

class SingleVCTrainer final : public Trainer {
 public:
  SingleVCTrainer(SingleVC& model, TrainConfig cfg, std::vector<Utterance> corpus,
                  MelConfig mel_cfg = {});

  /// Mean L1 over every utterance and every sampler shift, whole utterances.
  double evaluate();
  std::size_t corpus_size() const noexcept { return corpus_.size(); }

 protected:
  double compute_batch(long long step) override;
  CheckpointMeta meta() const override;
  void on_step_done() override { model_.untrained = false; }

 private:
  const Mat& shifted_mel(std::size_t utt, int shift);

  SingleVC& model_;
  std::vector<Utterance> corpus_;
  MelConfig mel_cfg_;
  std::vector<int> shifts_;
  std::map<std::pair<std::size_t, int>, Mat> shifted_cache_;
};

/// MediumVC objective: reconstruct mel(X) from E_s(mel(X)) and
/// E_c(V_Y(mel(X))) with V_Y frozen.
class MediumVCTrainer final : public Trainer {
 public:
  MediumVCTrainer(MediumVC& model, SingleVC* single, TrainConfig cfg,
                  std::vector<Utterance> corpus, const ExternalSpeakerEmbeddings* external = nullptr);

  double evaluate();
  /// Mean L1 reconstruction of one corpus utterance, whole length.
  double utterance_loss(std::size_t index);
  const Mat& intermediate(std::size_t index) const { return intermediate_[index]; }

 protected:
  double compute_batch(long long step) override;
  CheckpointMeta meta() const override;
  void on_step_done() override { model_.untrained = false; }

 private:
  Vec speaker_for(std::size_t index);

  MediumVC& model_;
  std::vector<Utterance> corpus_;
  std::vector<Mat> intermediate_;
  std::vector<Vec> fixed_embeddings_;
  const ExternalSpeakerEmbeddings* external_;
};

/// Appends one `step,loss,lr` row with a single write.
void append_log_row(const std::filesystem::path& path, long long step, double loss, double lr);

SingleVC load_singlevc(const std::filesystem::path& dir);
MediumVC load_mediumvc(const std::filesystem::path& dir);

}  // namespace mvc

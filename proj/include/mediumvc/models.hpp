#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mediumvc/audio.hpp"
#include "mediumvc/config.hpp"
#include "mediumvc/nn.hpp"

namespace mvc {

inline constexpr int kBottleneckDim = 36;
inline constexpr int kSpeakerDim = 256;
inline constexpr int kMelBins = 80;

/// Conv stack with instance norm, ending in a linear projection:
///   h0 = IN(gelu(conv(x)));  h_i = IN(h_{i-1} + gelu(conv_i(h_{i-1})));  z = W h_L
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(nn::ParamStore& store, const std::string& prefix, Index in_dim, Index channels,
              Index layers, Index out_dim, Index kernel, nn::Rng& rng);

  Mat forward(const Mat& x) { return from_stem(stem(x)); }
  /// Activations entering the first instance norm.
  Mat stem(const Mat& x);
  Mat from_stem(const Mat& pre_norm);
  /// Gradient w.r.t. the encoder input.
  Mat backward(const Mat& dz);

 private:
  nn::WNConv1d stem_conv_;
  nn::Gelu stem_act_;
  nn::InstanceNorm stem_norm_;
  std::vector<nn::WNConv1d> convs_;
  std::vector<nn::Gelu> acts_;
  std::vector<nn::InstanceNorm> norms_;
  nn::WNLinear proj_;
};

/// Linear in + GELU, Convertors, ResBlocks, linear out.
class DecoderTrunk {
 public:
  DecoderTrunk() = default;
  DecoderTrunk(nn::ParamStore& store, const std::string& prefix, Index in_dim, Index channels,
               Index n_convertors, Index n_resblocks, Index kernel, Index heads, Index out_dim,
               nn::Rng& rng);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  nn::WNLinear& output_linear() { return out_; }

 private:
  nn::WNLinear in_;
  nn::Gelu act_;
  std::vector<nn::Convertor> convertors_;
  std::vector<nn::ResBlock> resblocks_;
  nn::WNLinear out_;
};

// ------------------------------------------------------------------ SingleVC

struct SingleVCConfig {
  int enc_channels = 256;
  int bottleneck = kBottleneckDim;
  int dec_channels = 256;
  int n_convertors = 2;
  int n_resblocks = 4;
  int kernel = 5;
  int enc_layers = 3;
  int n_heads = 4;
  int shift_min = kMinShift;
  int shift_max = kMaxShift;
  bool include_zero_shift = false;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// Shifts the training sampler draws from.
  std::vector<int> shift_set() const;
  ConfigMap to_map() const;
  static SingleVCConfig read(ConfigReader& reader);
};

/// Any-to-one model: mel -> 36-dim bottleneck -> mel of the target speaker.
class SingleVC {
 public:
  explicit SingleVC(const SingleVCConfig& cfg = {});
  SingleVC(SingleVC&&) noexcept = default;
  SingleVC& operator=(SingleVC&&) noexcept = default;

  const SingleVCConfig& config() const noexcept { return cfg_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  ConvEncoder& encoder() { return encoder_; }
  DecoderTrunk& decoder() { return decoder_; }

  Mat encode(const Mat& mel);
  /// Raw (unclamped) decoder output.
  Mat decode(const Mat& bottleneck);
  Mat forward(const Mat& mel) { return decode(encode(mel)); }
  /// Back-propagates d loss / d prediction through the last `forward`.
  void backward(const Mat& dpred);
  /// Inference path: encode, decode, clamp to [0,1].
  Mat convert_mel(const Mat& mel);

  /// True while the weights are a fresh random initialization.
  bool untrained = true;

 private:
  SingleVCConfig cfg_;
  nn::ParamStore params_;
  ConvEncoder encoder_;
  DecoderTrunk decoder_;
};

struct ConversionResult {
  Waveform audio;
  MelSpectrogram mel;
  bool untrained_warning = false;
};

/// V_Y(X): mel, encode, decode, clamp, vocode.
ConversionResult sv_convert(const Waveform& wav, SingleVC& model, const Vocoder& vocoder,
                            const MelConfig& mel_cfg = {});

// ---------------------------------------------------------- speaker encoder

/// Per-bin time mean and std (2 * n_mels values), mapped through a fixed
/// seeded orthonormal 2*n_mels -> dim projection, then L2-normalized.
class MelStatsSpeakerEncoder {
 public:
  explicit MelStatsSpeakerEncoder(std::uint64_t seed = 1234, Index n_mels = kMelBins,
                                  Index dim = kSpeakerDim);

  static constexpr Index kMinFrames = 10;

  const Mat& projection() const noexcept { return projection_; }
  /// dim x (2 * n_mels).
  static Mat make_projection(std::uint64_t seed, Index n_mels, Index dim);
  static Vec mel_statistics(const Mat& mel);
  Vec embed(const Mat& mel) const;

 private:
  Mat projection_;
};

/// Precomputed embeddings: text manifest of `utterance_id path` lines, each
/// path a raw float32 LE vector.
class ExternalSpeakerEmbeddings {
 public:
  ExternalSpeakerEmbeddings() = default;
  static ExternalSpeakerEmbeddings load(const std::filesystem::path& manifest,
                                        Index dim = kSpeakerDim);
  /// L2-normalized embedding; throws Lookup for unknown ids.
  Vec lookup(const std::string& utterance_id) const;
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::unordered_map<std::string, Vec> table_;
};

void write_embedding_file(const std::filesystem::path& path, const Vec& e);

// ------------------------------------------------------------------ MediumVC

enum class MediumMode { Full, UntrainedSingle, NoSingle };

std::string to_string(MediumMode m);
MediumMode parse_medium_mode(const std::string& s);

struct MediumVCConfig {
  int content_bottleneck = kBottleneckDim;
  int content_dim = 256;
  int spk_dim = kSpeakerDim;
  int enc_channels = 256;
  int enc_layers = 5;
  int dec_channels = 256;
  int n_convertors = 3;
  int n_resblocks = 6;
  int kernel = 5;
  int n_heads = 4;
  MediumMode mode = MediumMode::Full;
  std::string speaker_encoder = "mel_stats";
  std::string speaker_sidecar;
  std::uint64_t speaker_seed = 1234;
  bool trainable_speaker = false;
  std::uint64_t init_seed = 1;

  void validate() const;
  ConfigMap to_map() const;
  static MediumVCConfig read(ConfigReader& reader);
};

/// Any-to-any model: content encoder over SingleVC output, speaker
/// embedding, AdaIN-fused decoder.
class MediumVC {
 public:
  explicit MediumVC(const MediumVCConfig& cfg = {});
  MediumVC(MediumVC&&) noexcept = default;
  MediumVC& operator=(MediumVC&&) noexcept = default;

  const MediumVCConfig& config() const noexcept { return cfg_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }

  /// Mel-stats embedding (through the trainable projection when enabled).
  Vec speaker_embed(const Mat& mel);
  /// Accumulates into the projection gradient; no-op unless trainable.
  void speaker_backward(const Vec& dspk);

  /// T x 80 -> T x content_dim, instance-normalized.
  Mat content_encode(const Mat& mel);
  /// Output of the AdaIN layer from the last `decode`.
  const Mat& fused() const noexcept { return fused_; }
  /// Raw decoder output.
  Mat decode(const Vec& spk, const Mat& content);
  Mat forward(const Vec& spk, const Mat& source_mel) { return decode(spk, content_encode(source_mel)); }
  /// Back-propagates through the last decode/content_encode pair; returns
  /// d loss / d spk.
  Vec backward(const Mat& dpred);

  DecoderTrunk& decoder() { return decoder_; }

  bool untrained = true;

 private:
  MediumVCConfig cfg_;
  nn::ParamStore params_;
  ConvEncoder content_;
  nn::WNLinear expand_;
  nn::InstanceNorm content_norm_;
  nn::AdaIN adain_;
  DecoderTrunk decoder_;
  MelStatsSpeakerEncoder fixed_speaker_;
  nn::Param* projection_ = nullptr;
  Vec stats_, raw_embedding_;
  Mat fused_;
};

/// The mel MediumVC's content encoder sees for a source utterance: V_Y's
/// clamped output, or the source itself in no-single mode.
Mat intermediate_mel(const Mat& source_mel, MediumMode mode, SingleVC* single);

struct MediumConvertOptions {
  bool roundtrip_audio = false;
  /// Used with external speaker embeddings.
  std::string reference_id;
  const ExternalSpeakerEmbeddings* external = nullptr;
};

/// out = vocode(D(E_s(mel(ref)), E_c(mel(V_Y(src))))).
ConversionResult mvc_convert(const Waveform& src, const Waveform& ref, MediumVC& model,
                             SingleVC* single, const Vocoder& vocoder,
                             const MediumConvertOptions& opts = {},
                             const MelConfig& mel_cfg = {});

/// Mel of a vocoder output padded so its frames line up with the frames of
/// the mel it was synthesized from.
MelSpectrogram reanalyze_vocoded(const Waveform& vocoded, const MelConfig& cfg = {});

}  // namespace mvc

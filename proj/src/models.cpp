#include "mediumvc/models.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "mediumvc/error.hpp"

namespace mvc {

// ---------------------------------------------------------------- ConvEncoder

ConvEncoder::ConvEncoder(nn::ParamStore& store, const std::string& prefix, Index in_dim,
                         Index channels, Index layers, Index out_dim, Index kernel, nn::Rng& rng)
    : stem_conv_(store, prefix + ".stem", in_dim, channels, kernel, rng, std::numbers::sqrt2) {
  for (Index i = 0; i < layers; ++i) {
    convs_.emplace_back(store, prefix + ".layers." + std::to_string(i), channels, channels, kernel,
                        rng, std::numbers::sqrt2);
  }
  acts_.resize(static_cast<std::size_t>(layers));
  norms_.resize(static_cast<std::size_t>(layers));
  proj_ = nn::WNLinear(store, prefix + ".proj", channels, out_dim, rng);
}

Mat ConvEncoder::stem(const Mat& x) { return stem_act_.forward(stem_conv_.forward(x)); }

Mat ConvEncoder::from_stem(const Mat& pre_norm) {
  Mat h = stem_norm_.forward(pre_norm);
  for (std::size_t i = 0; i < convs_.size(); ++i)
    h = norms_[i].forward(h + acts_[i].forward(convs_[i].forward(h)));
  return proj_.forward(h);
}

Mat ConvEncoder::backward(const Mat& dz) {
  Mat dh = proj_.backward(dz);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    const Mat dsum = norms_[i].backward(dh);
    dh = dsum + convs_[i].backward(acts_[i].backward(dsum));
  }
  return stem_conv_.backward(stem_act_.backward(stem_norm_.backward(dh)));
}

// --------------------------------------------------------------- DecoderTrunk

DecoderTrunk::DecoderTrunk(nn::ParamStore& store, const std::string& prefix, Index in_dim,
                           Index channels, Index n_convertors, Index n_resblocks, Index kernel,
                           Index heads, Index out_dim, nn::Rng& rng)
    : in_(store, prefix + ".in", in_dim, channels, rng, std::numbers::sqrt2) {
  for (Index i = 0; i < n_convertors; ++i)
    convertors_.emplace_back(store, prefix + ".convertors." + std::to_string(i), channels, heads,
                             rng);
  for (Index i = 0; i < n_resblocks; ++i)
    resblocks_.emplace_back(store, prefix + ".resblocks." + std::to_string(i), channels, kernel,
                            rng);
  out_ = nn::WNLinear(store, prefix + ".out", channels, out_dim, rng);
}

Mat DecoderTrunk::forward(const Mat& x) {
  Mat h = act_.forward(in_.forward(x));
  for (auto& c : convertors_) h = c.forward(h);
  for (auto& r : resblocks_) h = r.forward(h);
  return out_.forward(h);
}

Mat DecoderTrunk::backward(const Mat& dy) {
  Mat dh = out_.backward(dy);
  for (auto it = resblocks_.rbegin(); it != resblocks_.rend(); ++it) dh = it->backward(dh);
  for (auto it = convertors_.rbegin(); it != convertors_.rend(); ++it) dh = it->backward(dh);
  return in_.backward(act_.backward(dh));
}

// ------------------------------------------------------------------ SingleVC

void SingleVCConfig::validate() const {
  if (bottleneck != kBottleneckDim)
    fail(ErrorCategory::Config, "bottleneck must be " + std::to_string(kBottleneckDim));
  if (enc_channels <= 0 || dec_channels <= 0 || enc_layers < 0 || n_convertors < 0 ||
      n_resblocks < 0 || kernel <= 0 || kernel % 2 == 0)
    fail(ErrorCategory::Config, "invalid SingleVC layer sizes");
  if (n_heads <= 0 || dec_channels % n_heads != 0)
    fail(ErrorCategory::Config, "dec_channels must be divisible by n_heads");
  if (shift_min < kMinShift || shift_max > kMaxShift || shift_min > shift_max)
    fail(ErrorCategory::Config, "shift_range must lie within [-6,4]");
  if (shift_set().empty()) fail(ErrorCategory::Config, "shift_range leaves no shifts to sample");
}

std::vector<int> SingleVCConfig::shift_set() const {
  std::vector<int> out;
  for (int s = shift_min; s <= shift_max; ++s)
    if (s != 0 || include_zero_shift) out.push_back(s);
  return out;
}

ConfigMap SingleVCConfig::to_map() const {
  return {
      {"enc_channels", std::to_string(enc_channels)},
      {"bottleneck", std::to_string(bottleneck)},
      {"dec_channels", std::to_string(dec_channels)},
      {"n_convertors", std::to_string(n_convertors)},
      {"n_resblocks", std::to_string(n_resblocks)},
      {"kernel", std::to_string(kernel)},
      {"enc_layers", std::to_string(enc_layers)},
      {"n_heads", std::to_string(n_heads)},
      {"shift_range", std::to_string(shift_min) + "," + std::to_string(shift_max)},
      {"include_zero_shift", include_zero_shift ? "true" : "false"},
      {"init_seed", std::to_string(init_seed)},
  };
}

SingleVCConfig SingleVCConfig::read(ConfigReader& r) {
  SingleVCConfig c;
  c.enc_channels = r.get_int("enc_channels", c.enc_channels);
  c.bottleneck = r.get_int("bottleneck", c.bottleneck);
  c.dec_channels = r.get_int("dec_channels", c.dec_channels);
  c.n_convertors = r.get_int("n_convertors", c.n_convertors);
  c.n_resblocks = r.get_int("n_resblocks", c.n_resblocks);
  c.kernel = r.get_int("kernel", c.kernel);
  c.enc_layers = r.get_int("enc_layers", c.enc_layers);
  c.n_heads = r.get_int("n_heads", c.n_heads);
  const auto range = r.get_string("shift_range", "");
  if (!range.empty()) {
    const auto comma = range.find(',');
    if (comma == std::string::npos) fail(ErrorCategory::Config, "shift_range must be lo,hi");
    try {
      c.shift_min = std::stoi(range.substr(0, comma));
      c.shift_max = std::stoi(range.substr(comma + 1));
    } catch (const std::exception&) {
      fail(ErrorCategory::Config, "shift_range must be lo,hi integers");
    }
  }
  c.include_zero_shift = r.get_bool("include_zero_shift", c.include_zero_shift);
  c.init_seed = static_cast<std::uint64_t>(r.get_int("init_seed", static_cast<int>(c.init_seed)));
  c.validate();
  return c;
}

SingleVC::SingleVC(const SingleVCConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(cfg_.init_seed);
  encoder_ = ConvEncoder(params_, "encoder", kMelBins, cfg_.enc_channels, cfg_.enc_layers,
                         cfg_.bottleneck, cfg_.kernel, rng);
  decoder_ = DecoderTrunk(params_, "decoder", cfg_.bottleneck, cfg_.dec_channels,
                          cfg_.n_convertors, cfg_.n_resblocks, cfg_.kernel, cfg_.n_heads,
                          kMelBins, rng);
  params_.round_to_f32();
}

Mat SingleVC::encode(const Mat& mel) {
  if (mel.cols() != kMelBins || mel.rows() < 1)
    fail(ErrorCategory::Shape, "SingleVC expects T x 80 mel input");
  return encoder_.forward(mel);
}

Mat SingleVC::decode(const Mat& bottleneck) {
  if (bottleneck.cols() != cfg_.bottleneck)
    fail(ErrorCategory::Shape, "SingleVC decoder expects T x 36 input");
  return decoder_.forward(bottleneck);
}

void SingleVC::backward(const Mat& dpred) { encoder_.backward(decoder_.backward(dpred)); }

Mat SingleVC::convert_mel(const Mat& mel) { return forward(mel).cwiseMax(0.0).cwiseMin(1.0); }

ConversionResult sv_convert(const Waveform& wav, SingleVC& model, const Vocoder& vocoder,
                            const MelConfig& mel_cfg) {
  ConversionResult out;
  out.untrained_warning = model.untrained;
  const MelSpectrogram mel = mel_spectrogram(peak_normalize(wav), mel_cfg);
  out.mel.frames = model.convert_mel(mel.frames);
  out.mel.normalized = true;
  out.audio = vocoder.vocode(out.mel);
  return out;
}

// ----------------------------------------------------------- speaker encoder

MelStatsSpeakerEncoder::MelStatsSpeakerEncoder(std::uint64_t seed, Index n_mels, Index dim)
    : projection_(make_projection(seed, n_mels, dim)) {}

Mat MelStatsSpeakerEncoder::make_projection(std::uint64_t seed, Index n_mels, Index dim) {
  const Index in = 2 * n_mels;
  if (dim < in) fail(ErrorCategory::Config, "speaker dim must be at least 2 * n_mels");
  nn::Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd g(dim, in);
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, in);
  return q;
}

Vec MelStatsSpeakerEncoder::mel_statistics(const Mat& mel) {
  if (mel.rows() < kMinFrames)
    fail(ErrorCategory::Length, "speaker embedding needs at least " + std::to_string(kMinFrames) +
                                    " frames, got " + std::to_string(mel.rows()));
  const double n = static_cast<double>(mel.rows());
  const RowVec mean = mel.colwise().sum() / n;
  const RowVec var = (mel.rowwise() - mean).cwiseAbs2().colwise().sum() / n;
  Vec stats(2 * mel.cols());
  stats << mean.transpose(), var.cwiseSqrt().transpose();
  return stats;
}

Vec MelStatsSpeakerEncoder::embed(const Mat& mel) const {
  if (mel.cols() * 2 != projection_.cols())
    fail(ErrorCategory::Shape, "speaker encoder expects " + std::to_string(projection_.cols() / 2) +
                                   " mel bins");
  const Vec raw = projection_ * mel_statistics(mel);
  const double norm = raw.norm();
  if (!(norm > 0.0)) fail(ErrorCategory::Validation, "speaker embedding of a silent input");
  return raw / norm;
}

void write_embedding_file(const std::filesystem::path& path, const Vec& e) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::Io, "cannot write " + path.string());
  for (Index i = 0; i < e.size(); ++i) detail::put_f32_le(out, static_cast<float>(e[i]));
}

ExternalSpeakerEmbeddings ExternalSpeakerEmbeddings::load(const std::filesystem::path& manifest,
                                                          Index dim) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCategory::Io, "cannot read speaker sidecar " + manifest.string());
  ExternalSpeakerEmbeddings out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string id, file;
    if (!(ls >> id)) continue;
    if (!(ls >> file)) fail(ErrorCategory::Format, "sidecar line without a path: " + line);
    std::filesystem::path p(file);
    if (p.is_relative()) p = manifest.parent_path() / p;
    std::ifstream vf(p, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(vf)),
                                     std::istreambuf_iterator<char>());
    if (!vf.eof() && !vf) fail(ErrorCategory::Io, "cannot read " + p.string());
    if (static_cast<Index>(bytes.size()) != 4 * dim)
      fail(ErrorCategory::Format, "embedding file " + p.string() + " is not " +
                                      std::to_string(dim) + " float32 values");
    Vec e(dim);
    for (Index i = 0; i < dim; ++i) e[i] = detail::load_f32_le(bytes.data() + 4 * i);
    out.table_[id] = std::move(e);
  }
  return out;
}

Vec ExternalSpeakerEmbeddings::lookup(const std::string& utterance_id) const {
  auto it = table_.find(utterance_id);
  if (it == table_.end())
    fail(ErrorCategory::Lookup, "no speaker embedding for utterance " + utterance_id);
  const double norm = it->second.norm();
  if (!(norm > 0.0)) fail(ErrorCategory::Validation, "zero speaker embedding for " + utterance_id);
  return it->second / norm;
}

// ------------------------------------------------------------------ MediumVC

std::string to_string(MediumMode m) {
  switch (m) {
    case MediumMode::Full: return "full";
    case MediumMode::UntrainedSingle: return "mwus";
    case MediumMode::NoSingle: return "mwos";
  }
  return "full";
}

MediumMode parse_medium_mode(const std::string& s) {
  if (s == "full") return MediumMode::Full;
  if (s == "mwus") return MediumMode::UntrainedSingle;
  if (s == "mwos") return MediumMode::NoSingle;
  fail(ErrorCategory::Config, "mode must be full, mwus or mwos: " + s);
}

void MediumVCConfig::validate() const {
  if (content_bottleneck != kBottleneckDim)
    fail(ErrorCategory::Config, "content_bottleneck must be " + std::to_string(kBottleneckDim));
  if (spk_dim != kSpeakerDim) fail(ErrorCategory::Config, "spk_dim must be 256");
  if (content_dim != spk_dim) fail(ErrorCategory::Config, "content_dim must equal spk_dim");
  if (enc_channels <= 0 || dec_channels <= 0 || enc_layers < 0 || n_convertors < 0 ||
      n_resblocks < 0 || kernel <= 0 || kernel % 2 == 0)
    fail(ErrorCategory::Config, "invalid MediumVC layer sizes");
  if (n_heads <= 0 || dec_channels % n_heads != 0)
    fail(ErrorCategory::Config, "dec_channels must be divisible by n_heads");
  if (speaker_encoder != "mel_stats" && speaker_encoder != "external_file")
    fail(ErrorCategory::Config, "speaker_encoder must be mel_stats or external_file");
  if (speaker_encoder == "external_file" && trainable_speaker)
    fail(ErrorCategory::Config, "external speaker embeddings cannot be trainable");
}

ConfigMap MediumVCConfig::to_map() const {
  return {
      {"content_bottleneck", std::to_string(content_bottleneck)},
      {"content_dim", std::to_string(content_dim)},
      {"spk_dim", std::to_string(spk_dim)},
      {"enc_channels", std::to_string(enc_channels)},
      {"enc_layers", std::to_string(enc_layers)},
      {"dec_channels", std::to_string(dec_channels)},
      {"n_convertors", std::to_string(n_convertors)},
      {"n_resblocks", std::to_string(n_resblocks)},
      {"kernel", std::to_string(kernel)},
      {"n_heads", std::to_string(n_heads)},
      {"mode", to_string(mode)},
      {"speaker_encoder", speaker_encoder},
      {"speaker_sidecar", speaker_sidecar},
      {"speaker_seed", std::to_string(speaker_seed)},
      {"trainable_speaker", trainable_speaker ? "true" : "false"},
      {"init_seed", std::to_string(init_seed)},
  };
}

MediumVCConfig MediumVCConfig::read(ConfigReader& r) {
  MediumVCConfig c;
  c.content_bottleneck = r.get_int("content_bottleneck", c.content_bottleneck);
  c.content_dim = r.get_int("content_dim", c.content_dim);
  c.spk_dim = r.get_int("spk_dim", c.spk_dim);
  c.enc_channels = r.get_int("enc_channels", c.enc_channels);
  c.enc_layers = r.get_int("enc_layers", c.enc_layers);
  c.dec_channels = r.get_int("dec_channels", c.dec_channels);
  c.n_convertors = r.get_int("n_convertors", c.n_convertors);
  c.n_resblocks = r.get_int("n_resblocks", c.n_resblocks);
  c.kernel = r.get_int("kernel", c.kernel);
  c.n_heads = r.get_int("n_heads", c.n_heads);
  c.mode = parse_medium_mode(r.get_string("mode", to_string(c.mode)));
  c.speaker_encoder = r.get_string("speaker_encoder", c.speaker_encoder);
  c.speaker_sidecar = r.get_string("speaker_sidecar", c.speaker_sidecar);
  c.speaker_seed = static_cast<std::uint64_t>(r.get_int("speaker_seed", static_cast<int>(c.speaker_seed)));
  c.trainable_speaker = r.get_bool("trainable_speaker", c.trainable_speaker);
  c.init_seed = static_cast<std::uint64_t>(r.get_int("init_seed", static_cast<int>(c.init_seed)));
  c.validate();
  return c;
}

MediumVC::MediumVC(const MediumVCConfig& cfg) : cfg_(cfg), fixed_speaker_(cfg.speaker_seed) {
  cfg_.validate();
  nn::Rng rng(cfg_.init_seed);
  content_ = ConvEncoder(params_, "content", kMelBins, cfg_.enc_channels, cfg_.enc_layers,
                         cfg_.content_bottleneck, cfg_.kernel, rng);
  expand_ = nn::WNLinear(params_, "content.expand", cfg_.content_bottleneck, cfg_.content_dim, rng);
  decoder_ = DecoderTrunk(params_, "decoder", cfg_.content_dim, cfg_.dec_channels,
                          cfg_.n_convertors, cfg_.n_resblocks, cfg_.kernel, cfg_.n_heads,
                          kMelBins, rng);
  if (cfg_.trainable_speaker) {
    const Mat& p0 = fixed_speaker_.projection();
    projection_ = &params_.add("speaker.projection", {p0.rows(), p0.cols()}, p0.rows(), p0.cols());
    projection_->value = p0;
  }
  params_.round_to_f32();
}

Vec MediumVC::speaker_embed(const Mat& mel) {
  if (!projection_) return fixed_speaker_.embed(mel);
  stats_ = MelStatsSpeakerEncoder::mel_statistics(mel);
  raw_embedding_ = projection_->value * stats_;
  const double norm = raw_embedding_.norm();
  if (!(norm > 0.0)) fail(ErrorCategory::Validation, "speaker embedding of a silent input");
  return raw_embedding_ / norm;
}

void MediumVC::speaker_backward(const Vec& dspk) {
  if (!projection_) return;
  const double norm = raw_embedding_.norm();
  const Vec e = raw_embedding_ / norm;
  const Vec draw = (dspk - e * e.dot(dspk)) / norm;
  projection_->grad += draw * stats_.transpose();
}

Mat MediumVC::content_encode(const Mat& mel) {
  if (mel.cols() != kMelBins || mel.rows() < 1)
    fail(ErrorCategory::Shape, "content encoder expects T x 80 mel input");
  return content_norm_.forward(expand_.forward(content_.forward(mel)));
}

Mat MediumVC::decode(const Vec& spk, const Mat& content) {
  if (spk.size() != cfg_.spk_dim)
    fail(ErrorCategory::Shape, "speaker embedding must have " + std::to_string(cfg_.spk_dim) +
                                   " dims");
  fused_ = adain_.forward(content, spk);
  return decoder_.forward(fused_);
}

Vec MediumVC::backward(const Mat& dpred) {
  Vec dspk = Vec::Zero(cfg_.spk_dim);
  const Mat dcontent = adain_.backward(decoder_.backward(dpred), dspk);
  content_.backward(expand_.backward(content_norm_.backward(dcontent)));
  return dspk;
}

Mat intermediate_mel(const Mat& source_mel, MediumMode mode, SingleVC* single) {
  if (mode == MediumMode::NoSingle) return source_mel;
  if (!single) fail(ErrorCategory::Config, "a SingleVC model is required in mode " + to_string(mode));
  return single->convert_mel(source_mel);
}

MelSpectrogram reanalyze_vocoded(const Waveform& vocoded, const MelConfig& cfg) {
  Waveform padded = vocoded;
  const std::size_t pad = static_cast<std::size_t>((cfg.n_fft - cfg.hop) / 2);
  padded.samples.insert(padded.samples.begin(), pad, 0.0);
  padded.samples.insert(padded.samples.end(), pad, 0.0);
  return mel_spectrogram(padded, cfg);
}

ConversionResult mvc_convert(const Waveform& src, const Waveform& ref, MediumVC& model,
                             SingleVC* single, const Vocoder& vocoder,
                             const MediumConvertOptions& opts, const MelConfig& mel_cfg) {
  ConversionResult out;
  const auto mode = model.config().mode;
  out.untrained_warning = model.untrained || (mode == MediumMode::Full && single && single->untrained);

  const Mat src_mel = mel_spectrogram(peak_normalize(src), mel_cfg).frames;
  Mat content_in = intermediate_mel(src_mel, mode, single);
  if (opts.roundtrip_audio && mode != MediumMode::NoSingle) {
    MelSpectrogram y{content_in, true};
    content_in = reanalyze_vocoded(vocoder.vocode(y), mel_cfg).frames;
  }

  Vec spk;
  if (model.config().speaker_encoder == "external_file") {
    if (!opts.external) fail(ErrorCategory::Config, "external speaker embeddings not loaded");
    spk = opts.external->lookup(opts.reference_id);
  } else {
    spk = model.speaker_embed(mel_spectrogram(peak_normalize(ref), mel_cfg).frames);
  }

  out.mel.frames = model.forward(spk, content_in).cwiseMax(0.0).cwiseMin(1.0);
  out.mel.normalized = true;
  out.audio = vocoder.vocode(out.mel);
  return out;
}

}  // namespace mvc

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "mediumvc/audio.hpp"
#include "mediumvc/error.hpp"

namespace mvc {
namespace {

constexpr double kPcmScale = 32768.0;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::int16_t to_pcm16(double x) {
  const double scaled = std::round(x * kPcmScale);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) fail(ErrorCategory::Validation, "sample rate must be positive");
  for (double s : samples) {
    if (!std::isfinite(s)) fail(ErrorCategory::Validation, "non-finite sample");
    if (std::abs(s) > 1.0) fail(ErrorCategory::Validation, "sample magnitude above 1");
  }
}

Waveform read_wav(const std::filesystem::path& path, int target_rate) {
  const auto bytes = slurp(path);
  const auto name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCategory::Format, "not a RIFF/WAVE file: " + name);
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::load_u32_le(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Some writers leave a bogus size on the trailing data chunk.
      if (std::memcmp(chunk, "data", 4) != 0)
        fail(ErrorCategory::Format, "truncated chunk in " + name);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) fail(ErrorCategory::Format, "short fmt chunk in " + name);
      format = detail::load_u16_le(chunk + 8);
      channels = detail::load_u16_le(chunk + 10);
      rate = detail::load_u32_le(chunk + 12);
      bits = detail::load_u16_le(chunk + 22);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) fail(ErrorCategory::Format, "missing fmt chunk in " + name);
  if (data == nullptr) fail(ErrorCategory::Format, "missing data chunk in " + name);
  if (channels != 1)
    fail(ErrorCategory::Unsupported,
         "only mono audio is supported (" + std::to_string(channels) + " channels)");
  if (format != 1 || bits != 16)
    fail(ErrorCategory::Unsupported, "only 16-bit PCM is supported: " + name);
  if (rate == 0) fail(ErrorCategory::Format, "zero sample rate in " + name);

  Waveform wav;
  wav.sample_rate = static_cast<int>(rate);
  wav.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < wav.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(detail::load_u16_le(data + 2 * i));
    wav.samples[i] = v / kPcmScale;
  }
  if (target_rate > 0 && wav.sample_rate != target_rate) {
    Waveform out = resample(wav, static_cast<double>(wav.sample_rate) / target_rate);
    out.sample_rate = target_rate;
    return out;
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::Io, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  out.write("RIFF", 4);
  detail::put_u32_le(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::put_u32_le(out, 16);
  detail::put_u16_le(out, 1);
  detail::put_u16_le(out, 1);
  detail::put_u32_le(out, static_cast<std::uint32_t>(wav.sample_rate));
  detail::put_u32_le(out, static_cast<std::uint32_t>(wav.sample_rate * 2));
  detail::put_u16_le(out, 2);
  detail::put_u16_le(out, 16);
  out.write("data", 4);
  detail::put_u32_le(out, data_bytes);
  for (double s : wav.samples)
    detail::put_u16_le(out, static_cast<std::uint16_t>(to_pcm16(s)));
  if (!out) fail(ErrorCategory::Io, "write failed: " + path.string());
}

void write_melf(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::Io, "cannot write " + path.string());
  out.write("MELF", 4);
  detail::put_u32_le(out, 1);
  detail::put_u32_le(out, static_cast<std::uint32_t>(mel.n_frames()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(mel.n_mels()));
  for (Index t = 0; t < mel.n_frames(); ++t)
    for (Index m = 0; m < mel.n_mels(); ++m)
      detail::put_f32_le(out, static_cast<float>(mel.frames(t, m)));
  if (!out) fail(ErrorCategory::Io, "write failed: " + path.string());
}

MelSpectrogram read_melf(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "MELF", 4) != 0)
    fail(ErrorCategory::Format, "bad MELF magic in " + path.string());
  const auto version = detail::load_u32_le(bytes.data() + 4);
  if (version != 1)
    fail(ErrorCategory::Format, "unsupported MELF version " + std::to_string(version));
  const auto frames = detail::load_u32_le(bytes.data() + 8);
  const auto mels = detail::load_u32_le(bytes.data() + 12);
  const std::size_t expected = 16 + 4ull * frames * mels;
  if (bytes.size() != expected)
    fail(ErrorCategory::Format, "MELF payload size mismatch in " + path.string());
  MelSpectrogram mel;
  mel.frames.resize(frames, mels);
  const unsigned char* p = bytes.data() + 16;
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint32_t m = 0; m < mels; ++m, p += 4) mel.frames(t, m) = detail::load_f32_le(p);
  mel.normalized = true;
  return mel;
}

Waveform peak_normalize(const Waveform& wav) {
  double peak = 0.0;
  for (double s : wav.samples) {
    if (!std::isfinite(s)) fail(ErrorCategory::Validation, "non-finite sample");
    peak = std::max(peak, std::abs(s));
  }
  if (peak == 0.0) return wav;
  Waveform out = wav;
  const double gain = 0.95 / peak;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double s = wav.samples[i];
    // Pin the peak on 0.95 itself so a second pass has unit gain.
    const double v = std::abs(s) == peak ? 0.95 : std::min(std::abs(s) * gain, 0.95);
    out.samples[i] = std::copysign(v, s);
  }
  return out;
}

Waveform ExternalVocoder::vocode(const MelSpectrogram& mel) const {
  const auto dir = std::filesystem::temp_directory_path();
  const auto stem = "mvc_vocode_" + std::to_string(reinterpret_cast<std::uintptr_t>(&mel)) +
                    "_" + std::to_string(std::rand());
  const auto in_path = dir / (stem + ".melf");
  const auto out_path = dir / (stem + ".wav");
  write_melf(in_path, mel);
  std::string cmd = command_;
  auto substitute = [&cmd](const std::string& key, const std::string& value) {
    for (auto p = cmd.find(key); p != std::string::npos; p = cmd.find(key, p + value.size()))
      cmd.replace(p, key.size(), value);
  };
  substitute("{in}", in_path.string());
  substitute("{out}", out_path.string());
  const int rc = std::system(cmd.c_str());
  std::filesystem::remove(in_path);
  if (rc != 0) fail(ErrorCategory::Io, "external vocoder failed: " + command_);
  Waveform wav = read_wav(out_path);
  std::filesystem::remove(out_path);
  return wav;
}

}  // namespace mvc

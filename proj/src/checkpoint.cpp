#include "mediumvc/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include <json.hpp>

#include "binary_io.hpp"
#include "mediumvc/error.hpp"
#include "mediumvc/training.hpp"

namespace mvc {
namespace {

using nlohmann::json;

constexpr const char* kManifest = "manifest.json";
constexpr const char* kPayload = "params.bin";

json describe(const std::string& name, const std::vector<Index>& shape, std::uint64_t offset,
              Index count) {
  return json{{"name", name}, {"shape", shape}, {"dtype", "f32"}, {"offset", offset}, {"count", count}};
}

void write_matrix(std::ostream& out, const Mat& m) {
  for (Index i = 0; i < m.size(); ++i) detail::put_f32_le(out, static_cast<float>(m.data()[i]));
}

json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) fail(ErrorCategory::Io, "no checkpoint manifest in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCategory::Format, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

void fill(Mat& target, const std::vector<unsigned char>& payload, const json& entry,
          const std::string& name) {
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const auto count = entry.at("count").get<Index>();
  if (count != target.size())
    fail(ErrorCategory::Format, "parameter " + name + " has " + std::to_string(count) +
                                    " values, model expects " + std::to_string(target.size()));
  if (offset + 4ull * static_cast<std::uint64_t>(count) > payload.size())
    fail(ErrorCategory::Format, "params.bin too short for " + name);
  const unsigned char* p = payload.data() + offset;
  for (Index i = 0; i < count; ++i, p += 4) target.data()[i] = detail::load_f32_le(p);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const nn::ParamStore& params,
                     const CheckpointMeta& meta, const AdamState* optimizer) {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  std::uint64_t offset = 0;
  const auto payload_tmp = dir / (std::string(kPayload) + ".tmp");
  {
    std::ofstream out(payload_tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::Io, "cannot write " + payload_tmp.string());
    for (const auto& p : params) {
      entries.push_back(describe(p->name, p->shape, offset, p->size()));
      write_matrix(out, p->value);
      offset += 4ull * static_cast<std::uint64_t>(p->size());
    }
    json opt = nullptr;
    if (optimizer && !optimizer->m.empty()) {
      json opt_entries = json::array();
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (const auto* kind : {"m", "v"}) {
          const Mat& m = std::string(kind) == "m" ? optimizer->m[i] : optimizer->v[i];
          opt_entries.push_back(describe(std::string("optimizer.") + kind + "/" + params[i].name,
                                         params[i].shape, offset, m.size()));
          write_matrix(out, m);
          offset += 4ull * static_cast<std::uint64_t>(m.size());
        }
      }
      opt = json{{"t", optimizer->t}, {"params", opt_entries}};
    }
    if (!out) fail(ErrorCategory::Io, "write failed: " + payload_tmp.string());

    json manifest = {
        {"format", "mediumvc-checkpoint"},
        {"version", 1},
        {"model", meta.model},
        {"config", meta.config},
        {"config_hash", meta.config_hash.empty() ? config_hash(meta.config) : meta.config_hash},
        {"step", meta.step},
        {"random_init", meta.random_init},
        {"dtype", "f32"},
        {"params", entries},
        {"optimizer", opt},
    };
    const auto manifest_tmp = dir / (std::string(kManifest) + ".tmp");
    std::ofstream mf(manifest_tmp, std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    if (!mf) fail(ErrorCategory::Io, "cannot write " + manifest_tmp.string());
    mf.close();
    out.close();
    std::filesystem::rename(payload_tmp, dir / kPayload);
    std::filesystem::rename(manifest_tmp, dir / kManifest);
  }
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  try {
    CheckpointMeta meta;
    meta.model = m.at("model").get<std::string>();
    meta.config = m.at("config").get<ConfigMap>();
    meta.config_hash = m.at("config_hash").get<std::string>();
    meta.step = m.at("step").get<long long>();
    meta.random_init = m.at("random_init").get<bool>();
    if (m.at("dtype").get<std::string>() != "f32")
      fail(ErrorCategory::Format, "unsupported checkpoint dtype");
    return meta;
  } catch (const json::exception& e) {
    fail(ErrorCategory::Format, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

void load_checkpoint_params(const std::filesystem::path& dir, nn::ParamStore& params,
                            AdamState* optimizer) {
  const json m = read_manifest(dir);
  std::ifstream in(dir / kPayload, std::ios::binary);
  if (!in) fail(ErrorCategory::Io, "no params.bin in " + dir.string());
  const std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
  try {
    const auto& entries = m.at("params");
    if (entries.size() != params.size())
      fail(ErrorCategory::Format, "checkpoint has " + std::to_string(entries.size()) +
                                      " parameters, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = entries[i];
      auto& p = params[i];
      if (e.at("name").get<std::string>() != p.name)
        fail(ErrorCategory::Format, "parameter order mismatch: expected " + p.name + ", found " +
                                        e.at("name").get<std::string>());
      if (e.at("shape").get<std::vector<Index>>() != p.shape)
        fail(ErrorCategory::Format, "shape mismatch for " + p.name);
      fill(p.value, payload, e, p.name);
    }
    if (optimizer) {
      const auto& opt = m.at("optimizer");
      if (opt.is_null()) {
        optimizer->init(params);
      } else {
        optimizer->init(params);
        optimizer->t = opt.at("t").get<long long>();
        const auto& oe = opt.at("params");
        if (oe.size() != 2 * params.size())
          fail(ErrorCategory::Format, "optimizer state does not match parameters");
        for (std::size_t i = 0; i < params.size(); ++i) {
          fill(optimizer->m[i], payload, oe[2 * i], params[i].name);
          fill(optimizer->v[i], payload, oe[2 * i + 1], params[i].name);
        }
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCategory::Format, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace mvc

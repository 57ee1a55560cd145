#include "expose/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "expose/config.hpp"
#include "expose/errors.hpp"
#include "json.hpp"

namespace expose {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', 'X', 'P', 'C', 'K', 'P', 'T', '1'};

template <class Tensors>
void write_checkpoint(const std::string& path, const std::string& kind, const Tensors& tensors,
                      const ModelConfig& model, const std::string& experiment) {
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["kind"] = kind;
  manifest["model"] = json::parse(model_config_json(model));
  manifest["model_digest"] = model_config_digest(model);
  manifest["experiment"] = experiment.empty() ? json(nullptr) : json::parse(experiment);
  std::string payload;
  std::int64_t count = 0;
  json dir = json::array();
  for (const auto& t : tensors) {
    const auto& m = *t.tensor;
    const std::size_t bytes = static_cast<std::size_t>(m.size()) * sizeof(float);
    const std::size_t offset = payload.size();
    payload.append(reinterpret_cast<const char*>(m.data()), bytes);
    dir.push_back({{"name", t.name},
                   {"shape", {m.rows(), m.cols()}},
                   {"dtype", "float32"},
                   {"offset", offset},
                   {"bytes", bytes},
                   {"sha256", sha256_hex(m.data(), bytes)}});
    count += m.size();
  }
  manifest["tensors"] = dir;
  manifest["parameters"] = count;
  manifest["payload_bytes"] = payload.size();
  const std::string text = manifest.dump();
  const std::uint64_t len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

struct RawCheckpoint {
  json manifest;
  std::string payload;
  CheckpointInfo info;
};

RawCheckpoint read_raw(const std::string& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CorruptionError("'" + path + "' is not a checkpoint (bad magic)");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ULL << 31))
    throw CorruptionError("'" + path + "' has a damaged manifest header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CorruptionError("'" + path + "' manifest truncated");
  RawCheckpoint raw;
  try {
    raw.manifest = json::parse(text);
    raw.info.format_version = raw.manifest.at("format_version").get<int>();
    raw.info.kind = raw.manifest.at("kind").get<std::string>();
    if (raw.info.format_version != kCheckpointFormatVersion)
      throw CompatibilityError("checkpoint '" + path + "' has format version " +
                               std::to_string(raw.info.format_version) + ", expected " +
                               std::to_string(kCheckpointFormatVersion));
    raw.info.model = parse_model_config(raw.manifest.at("model").dump());
    raw.info.model_digest = raw.manifest.at("model_digest").get<std::string>();
    raw.info.parameters = raw.manifest.at("parameters").get<std::int64_t>();
    if (!raw.manifest.at("experiment").is_null()) raw.info.experiment = raw.manifest.at("experiment").dump();
  } catch (const json::exception& e) {
    throw CorruptionError("checkpoint '" + path + "' manifest is malformed: " + e.what());
  }
  if (raw.info.model_digest != model_config_digest(raw.info.model))
    throw CorruptionError("checkpoint '" + path + "' model section does not match its digest");
  if (with_payload) {
    std::ostringstream ss;
    ss << in.rdbuf();
    raw.payload = ss.str();
    const auto expected = raw.manifest.value("payload_bytes", std::uint64_t{0});
    if (raw.payload.size() != expected)
      throw CorruptionError("checkpoint '" + path + "' payload is " + std::to_string(raw.payload.size()) +
                            " bytes, manifest says " + std::to_string(expected));
  }
  return raw;
}

void check_compat(const std::string& path, const CheckpointInfo& info, const ModelConfig* expected) {
  if (!expected) return;
  expected->validate();
  if (!(info.model == *expected))
    throw CompatibilityError("checkpoint '" + path + "' was built for model config " + info.model_digest +
                             " but the current config is " + model_config_digest(*expected));
}

template <class Tensors>
void fill_tensors(const std::string& path, const RawCheckpoint& raw, Tensors tensors) {
  const json& dir = raw.manifest.at("tensors");
  if (dir.size() != tensors.size())
    throw CompatibilityError("checkpoint '" + path + "' holds " + std::to_string(dir.size()) + " tensors, expected " +
                             std::to_string(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const json& e = dir.at(i);
    auto& m = *tensors[i].tensor;
    const std::string name = e.at("name").get<std::string>();
    if (name != tensors[i].name)
      throw CompatibilityError("checkpoint '" + path + "' tensor " + std::to_string(i) + " is '" + name +
                               "', expected '" + tensors[i].name + "'");
    if (e.at("dtype").get<std::string>() != "float32") throw CompatibilityError("unsupported dtype in '" + path + "'");
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      throw CompatibilityError("tensor '" + name + "' in '" + path + "' has a shape incompatible with the config");
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto bytes = e.at("bytes").get<std::uint64_t>();
    if (bytes != static_cast<std::uint64_t>(m.size()) * sizeof(float) || offset + bytes > raw.payload.size())
      throw CorruptionError("tensor '" + name + "' in '" + path + "' lies outside the payload");
    const char* src = raw.payload.data() + offset;
    if (sha256_hex(src, bytes) != e.at("sha256").get<std::string>())
      throw CorruptionError("tensor '" + name + "' in '" + path + "' fails its SHA-256 check");
    std::memcpy(m.data(), src, bytes);
  }
}

}  // namespace

void save_base_checkpoint(const std::string& path, const BaseModelParams& params, const ModelConfig& model,
                          const std::string& experiment_json) {
  write_checkpoint(path, "base", params.tensors(), model, experiment_json);
}

void save_adapter_checkpoint(const std::string& path, const AdapterParams& adapter, const ModelConfig& model,
                             const std::string& experiment_json) {
  write_checkpoint(path, "adapter", adapter.tensors(), model, experiment_json);
}

CheckpointInfo read_checkpoint_info(const std::string& path) { return read_raw(path, false).info; }

BaseModelParams load_base_checkpoint(const std::string& path, const ModelConfig* expected, CheckpointInfo* info) {
  RawCheckpoint raw = read_raw(path, true);
  if (raw.info.kind != "base") throw CompatibilityError("'" + path + "' is a " + raw.info.kind + " checkpoint");
  check_compat(path, raw.info, expected);
  Rng unused(0);
  BaseModelParams p = init_base_params(raw.info.model, unused);
  try {
    fill_tensors(path, raw, p.tensors());
  } catch (const json::exception& e) {
    throw CorruptionError("checkpoint '" + path + "' tensor directory is malformed: " + e.what());
  }
  if (info) *info = raw.info;
  return p;
}

AdapterParams load_adapter_checkpoint(const std::string& path, const ModelConfig* expected, CheckpointInfo* info) {
  RawCheckpoint raw = read_raw(path, true);
  if (raw.info.kind != "adapter") throw CompatibilityError("'" + path + "' is a " + raw.info.kind + " checkpoint");
  check_compat(path, raw.info, expected);
  AdapterParams a = AdapterParams::zeros(raw.info.model.adapter_tokens, raw.info.model.model_dim);
  try {
    fill_tensors(path, raw, a.tensors());
  } catch (const json::exception& e) {
    throw CorruptionError("checkpoint '" + path + "' tensor directory is malformed: " + e.what());
  }
  if (info) *info = raw.info;
  return a;
}

}  // namespace expose

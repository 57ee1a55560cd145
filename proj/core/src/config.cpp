#include "expose/config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "expose/errors.hpp"
#include "json.hpp"

namespace expose {

using nlohmann::json;

// ---------------------------------------------------------------------------
// digests

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 computation failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// ---------------------------------------------------------------------------
// presets

void ExperimentConfig::resolve() {
  data.seed = derive_seed(seed, 1);
  pretrain.seed = derive_seed(seed, 2);
  personalize.seed = derive_seed(seed, 3);
  scoring.seed = derive_seed(seed, 4);
  data.persona.world_seed = derive_seed(seed, 6);
}

void ExperimentConfig::validate() const {
  model.validate();
  pretrain.validate();
  personalize.validate();
  scoring.validate();
  guidance.validate();
  data.validate();
  if (schedule.steps != model.diffusion_steps)
    throw ConfigError("schedule.steps (" + std::to_string(schedule.steps) + ") differs from model.diffusion_steps");
  (void)schedule.build();
  if (scoring.grid.t_end > schedule.steps) throw GridError("scoring range exceeds the schedule length");
  if (data.length != model.length) throw ConfigError("data.length differs from model.length");
  if (data.persona.audio_dim != model.audio_dim) throw ConfigError("data.persona.audio_dim differs from model.audio_dim");
  if (benchmark.temporal_window < 1) throw ConfigError("benchmark.temporal_window must be >= 1");
  for (const auto& k : benchmark.perturbations) (void)parse_perturb_kind(k);
  for (int s : benchmark.severities)
    if (s < 0 || s > kMaxSeverity) throw ConfigError("benchmark severities must lie in [0, 5]");
}

BenchConfig ExperimentConfig::bench_config() const {
  BenchConfig b;
  b.threshold_ks = benchmark.threshold_ks;
  for (const auto& k : benchmark.perturbations) b.perturbations.kinds.push_back(parse_perturb_kind(k));
  b.perturbations.severities = benchmark.severities;
  b.seed = derive_seed(seed, 5);
  return b;
}

ExperimentConfig full_preset() {
  ExperimentConfig c;
  c.preset = "full";
  c.model = ModelConfig{};
  c.pretrain.batch_size = 256;
  c.pretrain.epochs = 100;
  c.pretrain.optimizer = OptimizerConfig::adan(kDefaultLearningRate);
  c.personalize = c.pretrain;
  c.data.length = c.model.length;
  c.data.persona.audio_dim = c.model.audio_dim;
  c.data.validation_clips = 8;
  c.resolve();
  return c;
}

ExperimentConfig full_alt_preset() {
  ExperimentConfig c = full_preset();
  c.preset = "full_alt";
  c.pretrain.optimizer.learning_rate = kAltLearningRate;
  c.personalize.optimizer.learning_rate = kAltLearningRate;
  return c;
}

ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.preset = "desk";
  c.model.length = 50;
  c.model.model_dim = 64;
  c.model.mlp_dim = 128;
  c.model.num_heads = 4;
  c.model.num_layers = 2;
  c.model.dropout = 0.0;
  c.model.audio_dim = 16;
  c.pretrain.batch_size = 64;
  c.pretrain.epochs = 100;
  c.pretrain.optimizer = OptimizerConfig::adan(2e-3);
  c.personalize = c.pretrain;
  c.data.length = c.model.length;
  c.data.persona.audio_dim = c.model.audio_dim;
  c.data.validation_clips = 4;
  c.resolve();
  return c;
}

ExperimentConfig preset_by_name(const std::string& name) {
  if (name == "full") return full_preset();
  if (name == "full_alt") return full_alt_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset '" + name + "' (expected full, full_alt or desk)");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json model_json(const ModelConfig& m) {
  return {{"length", m.length},           {"feature_dim", m.feature_dim}, {"model_dim", m.model_dim},
          {"mlp_dim", m.mlp_dim},         {"num_heads", m.num_heads},     {"num_layers", m.num_layers},
          {"dropout", m.dropout},         {"cfg_dropout", m.cfg_dropout}, {"audio_dim", m.audio_dim},
          {"adapter_tokens", m.adapter_tokens}, {"diffusion_steps", m.diffusion_steps}};
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", to_string(o.kind)}, {"learning_rate", o.learning_rate}, {"beta1", o.beta1},
          {"beta2", o.beta2},          {"beta3", o.beta3},                 {"eps", o.eps},
          {"weight_decay", o.weight_decay}, {"grad_clip", o.grad_clip}};
}

json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"epochs", t.epochs}, {"cfg_dropout", t.cfg_dropout},
          {"optimizer", optimizer_json(t.optimizer)}};
}

json persona_json(const PersonaConfig& p) {
  return {{"audio_dim", p.audio_dim},
          {"shared_scale", p.shared_scale},
          {"identity_scale", p.identity_scale},
          {"bias_scale", p.bias_scale},
          {"oscillation_scale", p.oscillation_scale},
          {"noise", p.noise},
          {"smoothing_min", p.smoothing_min},
          {"smoothing_max", p.smoothing_max},
          {"audio_gain_spread", p.audio_gain_spread},
          {"noise_spread", p.noise_spread}};
}

json config_json(const ExperimentConfig& c) {
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"model", model_json(c.model)},
      {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start},
                    {"beta_end", c.schedule.beta_end}}},
      {"training", {{"pretrain", train_json(c.pretrain)}, {"personalize", train_json(c.personalize)}}},
      {"scoring",
       {{"t_start", c.scoring.grid.t_start},
        {"t_end", c.scoring.grid.t_end},
        {"mode", c.scoring.grid.mode == GridMode::EquallySpaced ? "equally_spaced" : "uniform"},
        {"points", c.scoring.points},
        {"noise_count", c.scoring.noise_count},
        {"batch_size", c.scoring.batch_size}}},
      {"guidance", {{"audio_scale", c.guidance.audio_scale}, {"identity_scale", c.guidance.identity_scale}}},
      {"benchmark",
       {{"threshold_ks", c.benchmark.threshold_ks},
        {"perturbations", c.benchmark.perturbations},
        {"severities", c.benchmark.severities},
        {"temporal_window", c.benchmark.temporal_window}}},
      {"data",
       {{"personas", c.data.personas},
        {"subjects", c.data.subjects},
        {"pretrain_clips", c.data.pretrain_clips},
        {"reference_clips", c.data.reference_clips},
        {"reference_seconds", c.data.reference_seconds},
        {"validation_clips", c.data.validation_clips},
        {"test_genuine", c.data.test_genuine},
        {"test_forged", c.data.test_forged},
        {"length", c.data.length},
        {"persona", persona_json(c.data.persona)}}},
  };
}

/// Reads known keys of one object and rejects anything else.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("'" + where_ + "' must be an object");
  }
  template <class T>
  Reader& get(const std::string& key, T& out) {
    if (!j_.contains(key)) return *this;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where_ + "." + key + "': " + e.what());
    }
    return *this;
  }
  const json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }
  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_model(const json& j, const std::string& where, ModelConfig& m) {
  Reader r(j, where);
  r.get("length", m.length).get("feature_dim", m.feature_dim).get("model_dim", m.model_dim);
  r.get("mlp_dim", m.mlp_dim).get("num_heads", m.num_heads).get("num_layers", m.num_layers);
  r.get("dropout", m.dropout).get("cfg_dropout", m.cfg_dropout).get("audio_dim", m.audio_dim);
  r.get("adapter_tokens", m.adapter_tokens).get("diffusion_steps", m.diffusion_steps);
  r.finish();
}

void read_optimizer(const json& j, const std::string& where, OptimizerConfig& o) {
  Reader r(j, where);
  std::string kind = to_string(o.kind);
  r.get("kind", kind);
  const OptimizerKind parsed = parse_optimizer_kind(kind);
  if (parsed != o.kind) {
    const double lr = o.learning_rate;
    o = parsed == OptimizerKind::Adam ? OptimizerConfig::adam(lr) : OptimizerConfig::adan(lr);
  }
  r.get("learning_rate", o.learning_rate).get("beta1", o.beta1).get("beta2", o.beta2).get("beta3", o.beta3);
  r.get("eps", o.eps).get("weight_decay", o.weight_decay).get("grad_clip", o.grad_clip);
  r.finish();
}

void read_train(const json& j, const std::string& where, TrainConfig& t) {
  Reader r(j, where);
  r.get("batch_size", t.batch_size).get("epochs", t.epochs).get("cfg_dropout", t.cfg_dropout);
  if (const json* o = r.sub("optimizer")) read_optimizer(*o, r.path("optimizer"), t.optimizer);
  r.finish();
}

void read_persona(const json& j, const std::string& where, PersonaConfig& p) {
  Reader r(j, where);
  r.get("audio_dim", p.audio_dim).get("shared_scale", p.shared_scale).get("identity_scale", p.identity_scale);
  r.get("bias_scale", p.bias_scale).get("oscillation_scale", p.oscillation_scale).get("noise", p.noise);
  r.get("smoothing_min", p.smoothing_min).get("smoothing_max", p.smoothing_max);
  r.get("audio_gain_spread", p.audio_gain_spread).get("noise_spread", p.noise_spread);
  r.finish();
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string preset = "full";
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("'preset' must be a string");
    preset = j.at("preset").get<std::string>();
  }
  ExperimentConfig c = preset_by_name(preset);
  Reader r(j, "");
  r.get("preset", c.preset).get("seed", c.seed).get("output_dir", c.output_dir);
  if (const json* m = r.sub("model")) read_model(*m, "model", c.model);
  if (const json* s = r.sub("schedule")) {
    Reader rs(*s, "schedule");
    rs.get("steps", c.schedule.steps).get("beta_start", c.schedule.beta_start).get("beta_end", c.schedule.beta_end);
    rs.finish();
  }
  if (const json* t = r.sub("training")) {
    Reader rt(*t, "training");
    if (const json* p = rt.sub("pretrain")) read_train(*p, "training.pretrain", c.pretrain);
    if (const json* p = rt.sub("personalize")) read_train(*p, "training.personalize", c.personalize);
    rt.finish();
  }
  if (const json* s = r.sub("scoring")) {
    Reader rs(*s, "scoring");
    std::string mode = c.scoring.grid.mode == GridMode::EquallySpaced ? "equally_spaced" : "uniform";
    rs.get("t_start", c.scoring.grid.t_start).get("t_end", c.scoring.grid.t_end).get("mode", mode);
    rs.get("points", c.scoring.points).get("noise_count", c.scoring.noise_count);
    rs.get("batch_size", c.scoring.batch_size);
    rs.finish();
    if (mode == "equally_spaced") c.scoring.grid.mode = GridMode::EquallySpaced;
    else if (mode == "uniform") c.scoring.grid.mode = GridMode::UniformRandom;
    else throw ConfigError("scoring.mode must be equally_spaced or uniform");
  }
  if (const json* g = r.sub("guidance")) {
    Reader rg(*g, "guidance");
    rg.get("audio_scale", c.guidance.audio_scale).get("identity_scale", c.guidance.identity_scale);
    rg.finish();
  }
  if (const json* b = r.sub("benchmark")) {
    Reader rb(*b, "benchmark");
    rb.get("threshold_ks", c.benchmark.threshold_ks).get("perturbations", c.benchmark.perturbations);
    rb.get("severities", c.benchmark.severities).get("temporal_window", c.benchmark.temporal_window);
    rb.finish();
  }
  if (const json* d = r.sub("data")) {
    Reader rd(*d, "data");
    rd.get("personas", c.data.personas).get("subjects", c.data.subjects).get("pretrain_clips", c.data.pretrain_clips);
    rd.get("reference_clips", c.data.reference_clips).get("reference_seconds", c.data.reference_seconds);
    rd.get("validation_clips", c.data.validation_clips).get("test_genuine", c.data.test_genuine);
    rd.get("test_forged", c.data.test_forged).get("length", c.data.length);
    if (const json* p = rd.sub("persona")) read_persona(*p, "data.persona", c.data.persona);
    rd.finish();
  }
  r.finish();
  c.resolve();
  c.validate();
  return c;
}

}  // namespace

std::string to_json_string(const ExperimentConfig& config, int indent) { return config_json(config).dump(indent); }

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config '" + path + "'");
  out << to_json_string(config) << "\n";
  if (!out) throw IoError("failed writing config '" + path + "'");
}

std::string model_config_json(const ModelConfig& model) { return model_json(model).dump(); }

ModelConfig parse_model_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorruptionError(std::string("model config snapshot is not valid JSON: ") + e.what());
  }
  ModelConfig m;
  read_model(j, "model", m);
  return m;
}

std::string model_config_digest(const ModelConfig& model) { return sha256_hex(model_config_json(model)); }

}  // namespace expose

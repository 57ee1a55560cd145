#include "cli.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/pattern_formatter.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "expose/bench.hpp"
#include "expose/checkpoint.hpp"
#include "expose/config.hpp"
#include "expose/errors.hpp"
#include "expose/io.hpp"
#include "expose/plot.hpp"
#include "json.hpp"

namespace expose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log;
};

// JSON-lines run log plus a terse echo on the diagnostic stream.
class RunLog {
 public:
  RunLog(const std::string& path, std::ostream& err) {
    const fs::path p(path);
    if (p.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(p.parent_path(), ec);
      if (ec) throw IoError("cannot create log directory '" + p.parent_path().string() + "': " + ec.message());
    }
    try {
      auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path, false);
      file->set_formatter(std::make_unique<spdlog::pattern_formatter>(
          R"({"time":"%Y-%m-%dT%H:%M:%S.%eZ","level":"%l","record":%v})", spdlog::pattern_time_type::utc));
      auto echo = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
      echo->set_pattern("[%l] %v");
      echo->set_level(spdlog::level::info);
      logger_ = std::make_shared<spdlog::logger>("expose", spdlog::sinks_init_list{file, echo});
      logger_->set_level(spdlog::level::info);
      logger_->flush_on(spdlog::level::info);
    } catch (const spdlog::spdlog_ex& e) {
      throw IoError("cannot open run log '" + path + "': " + e.what());
    }
  }

  void info(const std::string& event, json fields = json::object()) { write(spdlog::level::info, event, std::move(fields)); }

 private:
  void write(spdlog::level::level_enum lvl, const std::string& event, json fields) {
    fields["event"] = event;
    logger_->log(lvl, "{}", fields.dump());
  }
  std::shared_ptr<spdlog::logger> logger_;
};

ExperimentConfig resolve_config(const Common& c) {
  if (!c.config.empty() && !c.preset.empty()) throw ConfigError("--config and --preset are mutually exclusive");
  ExperimentConfig cfg = c.config.empty() ? preset_by_name(c.preset.empty() ? "full" : c.preset) : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.resolve();
  }
  cfg.validate();
  return cfg;
}

// The run log sits next to the command's output unless --log says otherwise.
std::string log_path(const Common& c, const fs::path& out) {
  if (!c.log.empty()) return c.log;
  fs::path p = out.lexically_normal();
  if (!p.has_filename()) p = p.parent_path();
  return (p.parent_path() / "run.log").string();
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

void make_parent(const fs::path& file) {
  if (file.has_parent_path()) make_dir(file.parent_path());
}

std::string config_digest(const ExperimentConfig& cfg) { return sha256_hex(to_json_string(cfg, -1)); }

void check_clip_shape(const Clip& c, const ModelConfig& m) {
  if (c.length() != m.length || c.audio.dim() != m.audio_dim || c.expression.values.cols() != m.feature_dim)
    throw CompatibilityError("clip '" + c.info.id + "' is " + std::to_string(c.length()) + "x" +
                             std::to_string(c.expression.values.cols()) + " with audio dim " +
                             std::to_string(c.audio.dim()) + ", the model expects " + std::to_string(m.length) + "x" +
                             std::to_string(m.feature_dim) + " with audio dim " + std::to_string(m.audio_dim));
}

const SubjectSplit& find_subject(const EvaluationSplit& split, const std::string& name) {
  if (name.empty()) {
    if (split.subjects.size() == 1) return split.subjects.front();
    throw ConfigError("corpus holds " + std::to_string(split.subjects.size()) + " subjects; pick one with --subject");
  }
  for (const auto& s : split.subjects)
    if (s.subject == name) return s;
  throw InputError("subject '" + name + "' is not in the corpus");
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "corpus" : fs::path(c.out);
  make_dir(dir);
  RunLog log(log_path(c, dir), err);
  log.info("synth.start", {{"out", dir.string()}, {"seed", cfg.seed}, {"config_sha256", config_digest(cfg)}});
  const Corpus corpus = build_corpus(cfg.data);
  write_corpus(corpus, dir.string());
  save_config(cfg, (dir / "config.json").string());
  const std::size_t lines = count_manifest_lines(dir.string());
  log.info("synth.done", {{"manifest_lines", lines}});
  out << json{{"corpus", dir.string()}, {"manifest_lines", lines}, {"subjects", corpus.subjects.size()}}.dump() << "\n";
  return 0;
}

int cmd_pretrain(const Common& c, const std::string& corpus, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path path = c.out.empty() ? fs::path(cfg.output_dir) / "base.ckpt" : fs::path(c.out);
  make_parent(path);
  RunLog log(log_path(c, path), err);
  log.info("pretrain.start", {{"corpus", corpus}, {"out", path.string()}, {"seed", cfg.seed},
                              {"config_sha256", config_digest(cfg)}});
  const Dataset ds = read_pretrain_dataset(corpus);
  for (const auto& clip : ds.clips) check_clip_shape(clip, cfg.model);
  const NoiseSchedule schedule = cfg.schedule.build();
  const PretrainResult r = run_pretraining(ds, cfg.model, cfg.pretrain, schedule, [&](const EpochLog& e) {
    log.info("pretrain.epoch", {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
  });
  save_base_checkpoint(path.string(), r.params, cfg.model, to_json_string(cfg, -1));
  std::ofstream curve(path.string() + ".curve.csv", std::ios::trunc);
  if (!curve) throw IoError("cannot write training curve next to '" + path.string() + "'");
  curve.precision(17);
  curve << "epoch,mean_loss\n";
  for (const auto& e : r.curve) curve << e.epoch << ',' << e.mean_loss << '\n';
  const std::string digest = file_sha256(path.string());
  log.info("pretrain.done", {{"sha256", digest}, {"epochs", r.curve.size()}});
  out << json{{"base", path.string()},
              {"sha256", digest},
              {"epochs", r.curve.size()},
              {"first_loss", r.curve.empty() ? 0.0 : r.curve.front().mean_loss},
              {"final_loss", r.curve.empty() ? 0.0 : r.curve.back().mean_loss}}
             .dump()
      << "\n";
  return 0;
}

int cmd_personalize(const Common& c, const std::string& corpus, const std::string& base_path,
                    const std::string& subject_name, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(c);
  const EvaluationSplit split = read_evaluation_split(corpus);
  const SubjectSplit& subject = find_subject(split, subject_name);
  const fs::path path =
      c.out.empty() ? fs::path(cfg.output_dir) / "adapters" / (subject.subject + ".ckpt") : fs::path(c.out);
  make_parent(path);
  RunLog log(log_path(c, path), err);
  log.info("personalize.start", {{"corpus", corpus}, {"base", base_path}, {"subject", subject.subject},
                                 {"out", path.string()}, {"config_sha256", config_digest(cfg)}});
  const BaseModelParams base = load_base_checkpoint(base_path, &cfg.model);
  for (const auto& clip : subject.reference) check_clip_shape(clip, cfg.model);
  const ReferenceSet refs{subject.subject, subject.reference};
  const PersonalizeResult r =
      personalize(base, refs, cfg.model, subject_personalization(cfg.personalize, subject.persona), cfg.schedule.build());
  save_adapter_checkpoint(path.string(), r.adapter, cfg.model, to_json_string(cfg, -1));
  const double final_loss = r.losses.empty() ? 0.0 : r.losses.back();
  log.info("personalize.done", {{"iterations", r.iterations}, {"final_loss", final_loss},
                                {"parameters", r.adapter.parameter_count()}});
  out << json{{"adapter", path.string()},
              {"subject", subject.subject},
              {"iterations", r.iterations},
              {"parameters", r.adapter.parameter_count()},
              {"final_loss", final_loss}}
             .dump()
      << "\n";
  return 0;
}

int cmd_score(const Common& c, const std::string& corpus, const std::string& clip_id, const std::string& base_path,
              const std::string& adapter_path, bool calibrate, double k, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(c);
  const EvaluationSplit split = read_evaluation_split(corpus);
  const SubjectSplit* subject = nullptr;
  const Clip* clip = nullptr;
  for (const auto& s : split.subjects)
    for (const auto* group : {&s.test, &s.validation, &s.reference})
      for (const auto& cl : *group)
        if (cl.info.id == clip_id) {
          subject = &s;
          clip = &cl;
        }
  if (!clip) throw InputError("clip '" + clip_id + "' is not in the corpus");
  const fs::path anchor = c.out.empty() ? fs::path(adapter_path) : fs::path(c.out);
  RunLog log(log_path(c, anchor), err);
  log.info("score.start", {{"clip", clip_id}, {"subject", subject->subject}, {"base", base_path},
                           {"adapter", adapter_path}, {"config_sha256", config_digest(cfg)}});
  const BaseModelParams base = load_base_checkpoint(base_path, &cfg.model);
  const AdapterParams adapter = load_adapter_checkpoint(adapter_path, &cfg.model);
  check_clip_shape(*clip, cfg.model);
  const NoiseSchedule schedule = cfg.schedule.build();
  auto score = [&](const Clip& cl) {
    return score_clip(cfg.model, base, adapter, cl, subject->subject, cfg.scoring, cfg.guidance, schedule,
                      cfg.benchmark.temporal_window);
  };
  const ClipScore rec = score(*clip);
  json j = json::parse(score_record_json(rec));
  if (calibrate) {
    std::vector<double> val;
    for (const auto& v : subject->validation)
      if (v.info.id != clip_id) val.push_back(score(v).value);
    const DecisionRule rule = fit_decision_rule(val, k);
    j["k"] = k;
    j["threshold"] = rule.threshold();
    j["verdict"] = decide(rec.value, rule) == Verdict::Real ? "real" : "fake";
  }
  const std::string line = j.dump();
  if (!c.out.empty()) {
    make_parent(c.out);
    std::ofstream f(c.out, std::ios::app);
    if (!f) throw IoError("cannot append to '" + c.out + "'");
    f << line << "\n";
  }
  log.info("score.done", {{"A", rec.value}, {"d1", rec.d1}, {"d2", rec.d2}});
  out << line << "\n";
  return 0;
}

int cmd_bench(const Common& c, const std::string& corpus, const std::string& base_path,
              const std::vector<std::string>& adapter_specs, bool oracle, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(c);
  if (!oracle && base_path.empty()) throw ConfigError("bench needs --base (or --oracle)");
  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "bench" : fs::path(c.out);
  make_dir(dir);
  RunLog log(log_path(c, dir), err);
  log.info("bench.start", {{"corpus", corpus}, {"out", dir.string()}, {"scorer", oracle ? "oracle" : "model"},
                           {"config_sha256", config_digest(cfg)}});
  const EvaluationSplit split = read_evaluation_split(corpus);
  BenchReport report;
  std::map<std::string, std::string> meta = {{"preset", cfg.preset},
                                             {"seed", std::to_string(cfg.seed)},
                                             {"config_sha256", config_digest(cfg)},
                                             {"scorer", oracle ? "oracle" : "model"}};
  if (oracle) {
    report = run_benchmark(split, oracle_scorer(), cfg.bench_config());
  } else {
    const BaseModelParams base = load_base_checkpoint(base_path, &cfg.model);
    meta["base_sha256"] = file_sha256(base_path);
    for (const auto& s : split.subjects)
      for (const auto* group : {&s.reference, &s.validation, &s.test})
        for (const auto& cl : *group) check_clip_shape(cl, cfg.model);
    ModelScorer scorer(cfg.model, base, cfg.personalize, cfg.schedule.build());
    scorer.set_scoring(cfg.scoring, cfg.guidance, cfg.benchmark.temporal_window);
    for (const auto& spec : adapter_specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--adapter for bench takes SUBJECT=PATH, got '" + spec + "'");
      scorer.set_adapter(spec.substr(0, eq), load_adapter_checkpoint(spec.substr(eq + 1), &cfg.model));
    }
    report = run_benchmark(split, scorer.factory(), cfg.bench_config());
    make_dir(dir / "adapters");
    for (const auto& [name, ad] : scorer.adapters())
      save_adapter_checkpoint((dir / "adapters" / (name + ".ckpt")).string(), ad, cfg.model, to_json_string(cfg, -1));
  }
  for (const auto& [key, value] : meta) report.metadata[key] = value;
  write_report(report, dir.string());
  save_config(cfg, (dir / "config.json").string());
  const auto plots = write_plots(report, (dir / "plots").string());
  log.info("bench.done", {{"auc", report.auc_ratio}, {"auc_d1", report.auc_d1}, {"auc_d2", report.auc_d2},
                          {"plots", plots}});
  out << json{{"report", (dir / "report.json").string()},
              {"auc", report.auc_ratio},
              {"auc_d1", report.auc_d1},
              {"auc_d2", report.auc_d2}}
             .dump()
      << "\n";
  return 0;
}

// Report JSON, or one score record per line.
BenchReport load_plot_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw InputError("'" + path + "' is empty");
  if (fs::path(path).extension() != ".jsonl") return parse_report(text);
  BenchReport r;
  r.dataset = fs::path(path).stem().string();
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ClipScore s;
      s.subject = j.at("subject").get<std::string>();
      s.info.id = j.at("clip_id").get<std::string>();
      s.info.persona = j.at("persona").get<int>();
      s.info.actor = j.at("actor").get<int>();
      s.info.genuine = j.at("genuine").get<bool>();
      s.value = j.at("A").get<double>();
      s.d1 = j.at("d1").get<double>();
      s.d2 = j.at("d2").get<double>();
      s.temporal = j.value("temporal", std::vector<double>{});
      r.clips.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw CorruptionError("bad score record in '" + path + "': " + e.what());
    }
  }
  return r;
}

int cmd_plot(const Common& c, const std::string& input, std::ostream& out, std::ostream& err) {
  const fs::path dir = c.out.empty() ? fs::path(input).parent_path() / "plots" : fs::path(c.out);
  make_dir(dir);
  RunLog log(log_path(c, dir), err);
  log.info("plot.start", {{"input", input}, {"out", dir.string()}});
  const BenchReport report = load_plot_input(input);
  const auto files = write_plots(report, dir.string());
  log.info("plot.done", {{"files", files}});
  out << json{{"plots", files}}.dump() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Identity-conditioned diffusion authentication of talking-face expression sequences"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", common.preset, "built-in config")
        ->check(CLI::IsMember({"full", "full_alt", "desk"}));
    sub->add_option("--seed", common.seed, "global seed; overrides the config");
    sub->add_option("--out", common.out, "output path");
    sub->add_option("--log", common.log, "run log path (default: run.log beside the output)");
  };

  auto* synth = app.add_subcommand("synth", "generate the synthetic persona corpus");
  add_common(synth);

  std::string corpus, base, adapter, subject, clip, input;
  std::vector<std::string> adapters;
  bool oracle = false, calibrate = false;
  double k = 2.0;

  auto* pretrain = app.add_subcommand("pretrain", "train the base denoiser on a corpus");
  add_common(pretrain);
  pretrain->add_option("corpus", corpus, "corpus directory")->required();

  auto* pers = app.add_subcommand("personalize", "train an identity adapter for one subject");
  add_common(pers);
  pers->add_option("corpus", corpus, "corpus directory")->required();
  pers->add_option("--base", base, "base checkpoint")->required();
  pers->add_option("--subject", subject, "subject id (optional when the corpus has one)");

  auto* score = app.add_subcommand("score", "authenticate one clip");
  add_common(score);
  score->add_option("corpus", corpus, "corpus directory")->required();
  score->add_option("--clip", clip, "clip id")->required();
  score->add_option("--base", base, "base checkpoint")->required();
  score->add_option("--adapter", adapter, "adapter checkpoint of the clip's subject")->required();
  score->add_flag("--calibrate", calibrate, "fit a threshold on the subject's validation clips");
  score->add_option("--k", k, "threshold width in validation standard deviations");

  auto* bench = app.add_subcommand("bench", "personalize, score and report over every subject");
  add_common(bench);
  bench->add_option("corpus", corpus, "corpus directory")->required();
  bench->add_option("--base", base, "base checkpoint");
  bench->add_option("--adapter", adapters, "pre-trained adapter as SUBJECT=PATH (repeatable)");
  bench->add_flag("--oracle", oracle, "label-reading stub scorer");

  auto* plot = app.add_subcommand("plot", "figures from a report or score records");
  add_common(plot);
  plot->add_option("input", input, "report.json or a .jsonl of score records")->required();

  std::vector<const char*> argv{"expose"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code(ErrorKind::Usage);
  }

  try {
    if (synth->parsed()) return cmd_synth(common, out, err);
    if (pretrain->parsed()) return cmd_pretrain(common, corpus, out, err);
    if (pers->parsed()) return cmd_personalize(common, corpus, base, subject, out, err);
    if (score->parsed()) return cmd_score(common, corpus, clip, base, adapter, calibrate, k, out, err);
    if (bench->parsed()) return cmd_bench(common, corpus, base, adapters, oracle, out, err);
    if (plot->parsed()) return cmd_plot(common, input, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::Data);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::Usage);
  }
  return exit_code(ErrorKind::Usage);
}

}  // namespace expose::cli

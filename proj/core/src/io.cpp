#include "expose/io.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "expose/errors.hpp"
#include "json.hpp"

namespace expose {

namespace fs = std::filesystem;
using nlohmann::json;

void write_f32(const std::string& path, const MatrixF& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) throw IoError("failed writing '" + path + "'");
}

MatrixF read_f32(const std::string& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read '" + path + "'");
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (size != static_cast<std::uint64_t>(rows * cols) * sizeof(float))
    throw CorruptionError("'" + path + "' holds " + std::to_string(size) + " bytes, expected " +
                          std::to_string(rows * cols * sizeof(float)));
  in.seekg(0);
  MatrixF m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading '" + path + "'");
  return m;
}

namespace {

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

void write_split(const fs::path& dir, const std::vector<std::pair<std::string, const Clip*>>& clips) {
  make_dir(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write '" + (dir / "manifest.jsonl").string() + "'");
  for (const auto& [subject, c] : clips) {
    const std::string audio = c->info.id + ".audio.f32";
    const std::string expr = c->info.id + ".expr.f32";
    write_f32((dir / audio).string(), c->audio.values);
    write_f32((dir / expr).string(), c->expression.values);
    json line = {{"clip_id", c->info.id},        {"subject", subject},
                 {"persona", c->info.persona},   {"actor", c->info.actor},
                 {"genuine", c->info.genuine},   {"frames", c->length()},
                 {"audio_dim", c->audio.dim()},  {"feature_dim", c->expression.values.cols()},
                 {"audio", audio},               {"expression", expr}};
    manifest << line.dump() << "\n";
  }
  if (!manifest) throw IoError("failed writing manifest in '" + dir.string() + "'");
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
  const fs::path root(dir);
  std::vector<std::pair<std::string, const Clip*>> pre, ref, val, test;
  for (const auto& c : corpus.pretrain) pre.emplace_back("", &c);
  for (const auto& s : corpus.subjects) {
    for (const auto& c : s.reference) ref.emplace_back(s.subject, &c);
    for (const auto& c : s.validation) val.emplace_back(s.subject, &c);
    for (const auto& c : s.test) test.emplace_back(s.subject, &c);
  }
  write_split(root / "pretrain", pre);
  write_split(root / "reference", ref);
  write_split(root / "validation", val);
  write_split(root / "test", test);
}

std::vector<std::pair<std::string, Clip>> read_split(const std::string& dir, const std::string& split) {
  const fs::path base = fs::path(dir) / split;
  std::ifstream manifest(base / "manifest.jsonl");
  if (!manifest) throw IoError("missing manifest '" + (base / "manifest.jsonl").string() + "'");
  std::vector<std::pair<std::string, Clip>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Clip c;
      c.info.id = j.at("clip_id").get<std::string>();
      c.info.persona = j.at("persona").get<int>();
      c.info.actor = j.at("actor").get<int>();
      c.info.genuine = j.at("genuine").get<bool>();
      const int frames = j.at("frames").get<int>();
      const int adim = j.at("audio_dim").get<int>();
      const int fdim = j.at("feature_dim").get<int>();
      c.audio.values = read_f32((base / j.at("audio").get<std::string>()).string(), frames, adim);
      c.expression.values = read_f32((base / j.at("expression").get<std::string>()).string(), frames, fdim);
      out.emplace_back(j.at("subject").get<std::string>(), std::move(c));
    } catch (const json::exception& e) {
      throw CorruptionError("bad manifest line " + std::to_string(lineno) + " in '" + base.string() + "': " + e.what());
    }
  }
  return out;
}

Dataset read_pretrain_dataset(const std::string& dir) {
  Dataset d;
  for (auto& [subject, clip] : read_split(dir, "pretrain")) d.clips.push_back(std::move(clip));
  if (d.empty()) throw InputError("pre-training split in '" + dir + "' is empty");
  return d;
}

EvaluationSplit read_evaluation_split(const std::string& dir, const std::string& name) {
  EvaluationSplit split;
  split.name = name;
  std::map<std::string, std::size_t> index;
  auto subject = [&](const std::string& id, int persona) -> SubjectSplit& {
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, split.subjects.size()).first;
      split.subjects.push_back({id, persona, {}, {}, {}});
    }
    return split.subjects[it->second];
  };
  for (auto& [s, c] : read_split(dir, "reference")) subject(s, c.info.persona).reference.push_back(std::move(c));
  for (auto& [s, c] : read_split(dir, "validation")) subject(s, c.info.persona).validation.push_back(std::move(c));
  for (auto& [s, c] : read_split(dir, "test")) subject(s, c.info.persona).test.push_back(std::move(c));
  split.validate();
  return split;
}

std::size_t count_manifest_lines(const std::string& dir) {
  std::size_t n = 0;
  for (const char* split : kCorpusSplits) {
    std::ifstream in(fs::path(dir) / split / "manifest.jsonl");
    if (!in) throw IoError(std::string("missing manifest for split '") + split + "'");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// reports

namespace {

json clip_json(const ClipScore& s) {
  return {{"subject", s.subject}, {"clip_id", s.info.id}, {"persona", s.info.persona}, {"actor", s.info.actor},
          {"genuine", s.info.genuine}, {"A", s.value}, {"d1", s.d1}, {"d2", s.d2}, {"temporal", s.temporal}};
}

ClipScore clip_from(const json& j) {
  ClipScore s;
  s.subject = j.at("subject").get<std::string>();
  s.info.id = j.at("clip_id").get<std::string>();
  s.info.persona = j.at("persona").get<int>();
  s.info.actor = j.at("actor").get<int>();
  s.info.genuine = j.at("genuine").get<bool>();
  s.value = j.at("A").get<double>();
  s.d1 = j.at("d1").get<double>();
  s.d2 = j.at("d2").get<double>();
  s.temporal = j.at("temporal").get<std::vector<double>>();
  return s;
}

json to_json(const BenchReport& r) {
  json subjects = json::array(), sweep = json::array(), clips = json::array(), val = json::array();
  for (const auto& s : r.subjects)
    subjects.push_back({{"subject", s.subject}, {"auc", s.auc}, {"mu", s.mu}, {"sigma", s.sigma}, {"k", s.ks},
                        {"threshold", s.thresholds}, {"accuracy", s.accuracy}});
  for (const auto& p : r.sweep)
    sweep.push_back({{"kind", p.kind}, {"severity", p.severity}, {"magnitude", p.magnitude}, {"auc", p.auc}});
  for (const auto& c : r.clips) clips.push_back(clip_json(c));
  for (const auto& c : r.validation) val.push_back(clip_json(c));
  return {{"dataset", r.dataset},
          {"auc", {{"ratio", r.auc_ratio}, {"d1", r.auc_d1}, {"d2", r.auc_d2}}},
          {"dataset_auc", r.dataset_auc},
          {"average_auc", r.average_auc},
          {"subjects", subjects},
          {"sweep", sweep},
          {"clips", clips},
          {"validation", val},
          {"metadata", r.metadata}};
}

}  // namespace

std::string report_json(const BenchReport& report, int indent) { return to_json(report).dump(indent); }

BenchReport parse_report(const std::string& text) {
  BenchReport r;
  try {
    const json j = json::parse(text);
    r.dataset = j.at("dataset").get<std::string>();
    r.auc_ratio = j.at("auc").at("ratio").get<double>();
    r.auc_d1 = j.at("auc").at("d1").get<double>();
    r.auc_d2 = j.at("auc").at("d2").get<double>();
    r.dataset_auc = j.at("dataset_auc").get<std::map<std::string, double>>();
    r.average_auc = j.at("average_auc").get<double>();
    for (const auto& s : j.at("subjects"))
      r.subjects.push_back({s.at("subject").get<std::string>(), s.at("auc").get<double>(), s.at("mu").get<double>(),
                            s.at("sigma").get<double>(), s.at("k").get<std::vector<double>>(),
                            s.at("threshold").get<std::vector<double>>(),
                            s.at("accuracy").get<std::vector<double>>()});
    for (const auto& p : j.at("sweep"))
      r.sweep.push_back({p.at("kind").get<std::string>(), p.at("severity").get<int>(), p.at("magnitude").get<double>(),
                         p.at("auc").get<double>()});
    for (const auto& c : j.at("clips")) r.clips.push_back(clip_from(c));
    for (const auto& c : j.at("validation")) r.validation.push_back(clip_from(c));
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("report is malformed: ") + e.what());
  }
  return r;
}

std::string scores_csv(const std::vector<ClipScore>& scores) {
  std::ostringstream os;
  os.precision(17);
  os << "subject,clip_id,persona,actor,genuine,A,d1,d2\n";
  for (const auto& s : scores)
    os << s.subject << ',' << s.info.id << ',' << s.info.persona << ',' << s.info.actor << ','
       << (s.info.genuine ? 1 : 0) << ',' << s.value << ',' << s.d1 << ',' << s.d2 << '\n';
  return os.str();
}

std::string score_record_json(const ClipScore& score) { return clip_json(score).dump(); }

void write_report(const BenchReport& report, const std::string& dir) {
  make_dir(dir);
  json j = to_json(report);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["created_at"] = stamp;
  const fs::path root(dir);
  std::ofstream out(root / "report.json", std::ios::trunc);
  if (!out) throw IoError("cannot write '" + (root / "report.json").string() + "'");
  out << j.dump(2) << "\n";
  std::ofstream csv(root / "scores.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + (root / "scores.csv").string() + "'");
  csv << scores_csv(report.clips);
  if (!out || !csv) throw IoError("failed writing report files in '" + dir + "'");
}

BenchReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read report '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str());
}

}  // namespace expose

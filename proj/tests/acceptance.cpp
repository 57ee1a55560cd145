// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   expose_acceptance [--out DIR] [--only N[,N...]]
//
// --out keeps the end-to-end report, plots and scratch files; otherwise a
// temporary directory is used and removed.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "expose/adapter.hpp"
#include "expose/bench.hpp"
#include "expose/checkpoint.hpp"
#include "expose/config.hpp"
#include "expose/errors.hpp"
#include "expose/io.hpp"
#include "expose/plot.hpp"
#include "expose/scorer.hpp"
#include "test_util.hpp"

using namespace expose;
namespace fs = std::filesystem;
using expose::testing::finite_difference;
using expose::testing::random_matrix;
using expose::testing::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// The desk-scale end-to-end run shared by criteria 5, 7, 8, 9 and 11.

struct DeskRun {
  ExperimentConfig cfg;
  Corpus corpus;
  EvaluationSplit split;
  BaseModelParams base;
  std::unique_ptr<ModelScorer> scorer;
  BenchReport report;
  double pretrain_seconds = 0.0, total_seconds = 0.0;
};

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::unique_ptr<DeskRun> desk_run(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = std::make_unique<DeskRun>();
  run->cfg = cfg;
  run->corpus = build_corpus(cfg.data);
  run->split = evaluation_split(run->corpus);
  const NoiseSchedule schedule = cfg.schedule.build();
  const auto tp = std::chrono::steady_clock::now();
  run->base = run_pretraining(Dataset{run->corpus.pretrain}, cfg.model, cfg.pretrain, schedule).params;
  run->pretrain_seconds = since(tp);
  run->scorer = std::make_unique<ModelScorer>(cfg.model, run->base, cfg.personalize, schedule);
  run->scorer->set_scoring(cfg.scoring, cfg.guidance, cfg.benchmark.temporal_window);
  run->report = run_benchmark(run->split, run->scorer->factory(), cfg.bench_config());
  run->report.metadata["preset"] = cfg.preset;
  run->total_seconds = since(t0);
  return run;
}

double rescore_auc(DeskRun& run, const ScoringConfig& scoring) {
  run.scorer->set_scoring(scoring, run.cfg.guidance, run.cfg.benchmark.temporal_window);
  const double a = run_benchmark(run.split, run.scorer->factory(), run.cfg.bench_config()).auc_ratio;
  run.scorer->set_scoring(run.cfg.scoring, run.cfg.guidance, run.cfg.benchmark.temporal_window);
  return a;
}

// ---------------------------------------------------------------------------

Outcome adapter_count() {
  const std::int64_t n = count_adapter_params(512, 8);
  return {n == 528384, "count_adapter_params(512, 8) = " + std::to_string(n)};
}

Outcome guidance_endpoints() {
  ModelConfig m = expose::testing::tiny_config(6, 8, 2, 2);
  Rng rng(2024);
  BaseModelParams base = init_base_params(m, rng);
  expose::testing::randomize(base, rng);
  // pre-training never feeds an identity branch, so these slots stay at their zero init
  base.uncond_identity.setZero();
  AdapterParams ad = init_adapter(m, rng);
  expose::testing::randomize(ad, rng);
  ExpressionSequence zt;
  zt.values = random_matrix<float>(m.length, m.feature_dim, rng);
  AudioFeatures audio;
  audio.values = random_matrix<float>(m.length, m.audio_dim, rng);
  const int t = 417;

  const MatrixF full = denoise(m, zt, t, audio, base, &ad);
  DenoiseBatch<float> b{zt.values, audio.values, {t}, {0}, {0}};
  ForwardCache<float> cache;
  const MatrixF uncond = denoise_forward<float>(m, base, &ad, b, cache);
  const double e11 = (guided_denoise(m, zt, t, audio, base, &ad, {1.0, 1.0}) - full).cwiseAbs().maxCoeff();
  const double e00 = (guided_denoise(m, zt, t, audio, base, &ad, {0.0, 0.0}) - uncond).cwiseAbs().maxCoeff();
  return {e11 <= 1e-6 && e00 <= 1e-6, "max|(1,1) - full| = " + fmt(e11, 3) + ", max|(0,0) - uncond| = " + fmt(e00, 3)};
}

Outcome forward_moments() {
  const NoiseSchedule s = make_linear_schedule();
  const int draws = 100000;
  MatrixF z(2, 3);
  z << 1.5f, -0.5f, 0.0f, 2.0f, -2.0f, 0.25f;
  Rng rng(31);
  std::normal_distribution<float> normal;
  bool ok = true;
  double worst = 0.0;  // largest deviation in units of its 3-sigma bound
  for (int t : {1, 500, 1000}) {
    MatrixD sum = MatrixD::Zero(2, 3), sumsq = MatrixD::Zero(2, 3);
    MatrixF eps(2, 3);
    for (int d = 0; d < draws; ++d) {
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      const MatrixD zt = forward_diffuse(z, t, eps, s).cast<double>();
      sum += zt;
      sumsq += zt.cwiseProduct(zt);
    }
    const double var = 1.0 - s.alpha_bar(t);
    const double mean_tol = 3.0 * std::sqrt(var / draws);
    const double var_tol = 3.0 * std::sqrt(2.0 * var * var / (draws - 1));
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double m = sum.data()[i] / draws;
      const double v = (sumsq.data()[i] - draws * m * m) / (draws - 1);
      const double dm = std::abs(m - std::sqrt(s.alpha_bar(t)) * z.data()[i]) / mean_tol;
      const double dv = std::abs(v - var) / var_tol;
      worst = std::max({worst, dm, dv});
      ok = ok && dm <= 1.0 && dv <= 1.0;
    }
  }
  return {ok, "t in {1, 500, 1000}, 1e5 draws; worst deviation " + fmt(worst, 3) + " of the 3-sigma bound"};
}

Outcome gradient_checks() {
  ModelConfig m = expose::testing::tiny_config(3, 4, 2, 2);
  Rng rng(10);
  BaseParamsT<double> params = init_base_params(m, rng).cast<double>();
  expose::testing::randomize(params, rng, 0.3);
  AdapterParamsT<double> adapter = AdapterParamsT<double>::zeros(m.adapter_tokens, m.model_dim);
  expose::testing::randomize(adapter, rng, 0.5);
  // mixed condition flags so every branch (and the unconditional slots) carries gradient
  const DenoiseBatch<double> batch{random_matrix<double>(3 * m.length, 53, rng),
                                   random_matrix<double>(3 * m.length, m.audio_dim, rng),
                                   {3, 400, 871},
                                   {1, 0, 1},
                                   {1, 0, 0}};
  const MatrixD noise = random_matrix<double>(3 * m.length, 53, rng);
  ForwardCache<double> cache;
  auto loss = [&]() {
    return denoise_loss_and_grad<double>(m, params, &adapter, batch, noise, cache, nullptr, nullptr);
  };
  BaseParamsT<double> g = params.zeros_like();
  AdapterParamsT<double> ag = AdapterParamsT<double>::zeros(m.adapter_tokens, m.model_dim);
  denoise_loss_and_grad<double>(m, params, &adapter, batch, noise, cache, &g, &ag);

  double worst = 0.0;
  std::string worst_name;
  int groups = 0;
  auto check = [&](MatrixD& p, const MatrixD& analytic, const std::string& name) {
    const double e = relative_error(analytic, finite_difference(p, loss, 1e-5));
    ++groups;
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  };
  auto pt = params.tensors();
  const auto gt = g.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) check(*pt[i].tensor, *gt[i].tensor, pt[i].name);
  auto at = adapter.tensors();
  const auto agt = ag.tensors();
  for (std::size_t i = 0; i < at.size(); ++i) check(*at[i].tensor, *agt[i].tensor, at[i].name);
  return {worst <= 1e-4, std::to_string(groups) + " parameter groups; max relative error " + fmt(worst, 3) + " (" +
                             worst_name + ")"};
}

Outcome frozen_base(DeskRun& run, const fs::path& work) {
  const fs::path dir = work / "frozen_base";
  fs::create_directories(dir);
  write_corpus(run.corpus, (dir / "corpus").string());
  const std::string base = (dir / "base.ckpt").string();
  save_base_checkpoint(base, run.base, run.cfg.model, to_json_string(run.cfg, -1));
  const std::string before = file_sha256(base);
  std::ostringstream out, err;
  const int rc = cli::run({"personalize", (dir / "corpus").string(), "--preset", run.cfg.preset, "--seed",
                           std::to_string(run.cfg.seed), "--base", base, "--subject", run.split.subjects[0].subject,
                           "--out", (dir / "adapter.ckpt").string()},
                          out, err);
  const std::string after = file_sha256(base);
  return {rc == 0 && before == after && fs::exists(dir / "adapter.ckpt"),
          "personalize exit " + std::to_string(rc) + "; sha256 " + before.substr(0, 16) + ".. before, " +
              after.substr(0, 16) + ".. after"};
}

Outcome neutral_adapter() {
  ModelConfig m = desk_preset().model;
  Rng rng(6);
  BaseModelParams base = init_base_params(m, rng);
  expose::testing::randomize(base, rng, 0.1);
  AdapterParams ad = init_adapter(m, rng);
  ad.key_proj.setZero();
  ad.value_proj.setZero();
  const PersonaSpec p = generate_persona(77, {});
  const auto [audio, expr] = synthesize_clip(p, 5, m.length);
  ScoringConfig sc;
  sc.points = 12;
  sc.noise_count = 4;
  const AuthScore a = authenticate(m, expr, audio, base, ad, sc, {}, make_linear_schedule());
  const double dev = std::abs(a.value - 1.0);
  return {dev <= 1e-9, "A = " + fmt(a.value, 17) + " over " + std::to_string(a.samples.size()) + " shared samples"};
}

Outcome end_to_end(const DeskRun& run) {
  const BenchReport& r = run.report;
  const bool ok = r.auc_ratio >= 0.90 && r.auc_ratio > r.auc_d2 && r.auc_ratio > r.auc_d1;
  return {ok, "AUC(A) " + fmt(r.auc_ratio, 4) + ", AUC(d1) " + fmt(r.auc_d1, 4) + ", AUC(d2) " + fmt(r.auc_d2, 4) +
                  "; " + std::to_string(r.clips.size()) + " test clips; pretrain " + fmt(run.pretrain_seconds, 3) +
                  " s, total " + fmt(run.total_seconds, 3) + " s"};
}

Outcome truncation_trend(DeskRun& run) {
  ScoringConfig wide = run.cfg.scoring;
  wide.grid.t_start = 1;
  wide.grid.t_end = 1000;
  const double a_wide = rescore_auc(run, wide);
  const double a_mid = run.report.auc_ratio;
  return {a_mid >= a_wide - 0.02, "AUC [201,800] " + fmt(a_mid, 4) + ", AUC [1,1000] " + fmt(a_wide, 4)};
}

Outcome noise_count_stability(DeskRun& run) {
  ScoringConfig one = run.cfg.scoring;
  one.noise_count = 1;
  const double a1 = rescore_auc(run, one);
  const double a64 = run.report.auc_ratio;
  return {std::abs(a1 - a64) <= 0.02, "AUC noise_count=1 " + fmt(a1, 4) + ", noise_count=" +
                                          std::to_string(run.cfg.scoring.noise_count) + " " + fmt(a64, 4)};
}

Outcome auc_oracle() {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> size(1, 25), level(0, 11);
  std::uniform_real_distribution<double> cont(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> real(size(rng)), fake(size(rng));
    const bool ties = trial % 2 == 0;
    for (double& v : real) v = ties ? level(rng) * 0.25 : cont(rng);
    for (double& v : fake) v = ties ? level(rng) * 0.25 : cont(rng);
    double pairs = 0.0;
    for (double f : fake)
      for (double r : real) pairs += f > r ? 1.0 : (f == r ? 0.5 : 0.0);
    worst = std::max(worst, std::abs(auc(real, fake) - pairs / static_cast<double>(real.size() * fake.size())));
  }
  return {worst <= 1e-12, "1000 random sets; max |auc - pairwise| = " + fmt(worst, 3)};
}

Outcome determinism(const DeskRun& first) {
  const auto second = desk_run(first.cfg);
  const std::string a = report_json(first.report), b = report_json(second->report);
  return {a == b, std::string(a == b ? "reports identical" : "reports differ") + " (" + std::to_string(a.size()) +
                      " bytes); second run " + fmt(second->total_seconds, 3) + " s"};
}

template <class P>
bool same_bits(const P& a, const P& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].tensor->size() != tb[i].tensor->size() ||
        std::memcmp(ta[i].tensor->data(), tb[i].tensor->data(), sizeof(float) * ta[i].tensor->size()) != 0)
      return false;
  return true;
}

Outcome checkpoint_roundtrip(const fs::path& work) {
  const fs::path dir = work / "checkpoints";
  fs::create_directories(dir);
  const ModelConfig m = desk_preset().model;
  Rng rng(12);
  BaseModelParams base = init_base_params(m, rng);
  expose::testing::randomize(base, rng);
  AdapterParams ad = init_adapter(m, rng);
  expose::testing::randomize(ad, rng);
  const std::string bp = (dir / "base.ckpt").string(), ap = (dir / "adapter.ckpt").string();
  save_base_checkpoint(bp, base, m);
  save_adapter_checkpoint(ap, ad, m);
  const bool exact = same_bits(base, load_base_checkpoint(bp, &m)) && same_bits(ad, load_adapter_checkpoint(ap, &m));

  auto rejected = [&](const std::string& path, std::size_t from_end, bool truncate) {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    if (truncate) bytes.resize(bytes.size() - from_end);
    else bytes[bytes.size() - from_end] ^= 0x10;
    const std::string bad = path + ".bad";
    std::ofstream(bad, std::ios::binary) << bytes;
    try {
      if (path == bp) (void)load_base_checkpoint(bad, &m);
      else (void)load_adapter_checkpoint(bad, &m);
    } catch (const CorruptionError&) {
      return true;
    }
    return false;
  };
  const bool flips = rejected(bp, 100, false) && rejected(ap, 5, false);
  const bool cuts = rejected(bp, 4, true) && rejected(ap, 1000, true);
  return {exact && flips && cuts, std::string("bit-exact ") + (exact ? "yes" : "no") + "; flipped payload rejected " +
                                      (flips ? "yes" : "no") + "; truncated payload rejected " + (cuts ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<fs::path> keep;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      keep = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: expose_acceptance [--out DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  const fs::path work = keep ? *keep : fs::temp_directory_path() / ("expose_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  std::unique_ptr<DeskRun> desk;
  auto shared_run = [&]() -> DeskRun& {
    if (!desk) {
      ExperimentConfig cfg = desk_preset();
      desk = desk_run(cfg);
      if (keep) {
        write_report(desk->report, (work / "bench").string());
        write_plots(desk->report, (work / "bench" / "plots").string());
      }
    }
    return *desk;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"adapter parameter count", adapter_count},
      {"guidance endpoints", guidance_endpoints},
      {"forward-process moments", forward_moments},
      {"gradient checks", gradient_checks},
      {"frozen base under personalize", [&] { return frozen_base(shared_run(), work); }},
      {"neutral adapter gives A = 1", neutral_adapter},
      {"synthetic end-to-end benchmark", [&] { return end_to_end(shared_run()); }},
      {"timestep truncation trend", [&] { return truncation_trend(shared_run()); }},
      {"noise-count stability", [&] { return noise_count_stability(shared_run()); }},
      {"auc matches pairwise oracle", auc_oracle},
      {"end-to-end determinism", [&] { return determinism(shared_run()); }},
      {"checkpoint round trip", [&] { return checkpoint_roundtrip(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << std::setw(2) << id << " " << criteria[i].first << ": "
              << o.detail << " [" << fmt(since(t0), 3) << " s]" << std::endl;
  }
  if (!keep) fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}

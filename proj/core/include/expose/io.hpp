#pragma once

#include <string>
#include <vector>

#include "expose/bench.hpp"
#include "expose/clip.hpp"
#include "expose/synthdata.hpp"
#include "expose/trainer.hpp"

namespace expose {

/// Corpus layout: <dir>/<split>/manifest.jsonl plus one .f32 blob per tensor
/// (little-endian float32, row-major). Splits: pretrain, reference, validation, test.
inline constexpr const char* kCorpusSplits[] = {"pretrain", "reference", "validation", "test"};

void write_corpus(const Corpus& corpus, const std::string& dir);
/// Clips of one split in manifest order, with the subject each line names ("" for pretrain).
std::vector<std::pair<std::string, Clip>> read_split(const std::string& dir, const std::string& split);
Dataset read_pretrain_dataset(const std::string& dir);
EvaluationSplit read_evaluation_split(const std::string& dir, const std::string& name = "synthetic");
/// Number of manifest lines across all splits.
std::size_t count_manifest_lines(const std::string& dir);

void write_f32(const std::string& path, const MatrixF& m);
MatrixF read_f32(const std::string& path, Eigen::Index rows, Eigen::Index cols);

/// Deterministic JSON for a report; equal reports give equal text.
std::string report_json(const BenchReport& report, int indent = 2);
BenchReport parse_report(const std::string& text);
/// Writes <dir>/report.json (with a created_at field outside the payload) and <dir>/scores.csv.
void write_report(const BenchReport& report, const std::string& dir);
BenchReport read_report(const std::string& path);
std::string scores_csv(const std::vector<ClipScore>& scores);

/// One line per score record, JSON.
std::string score_record_json(const ClipScore& score);

}  // namespace expose

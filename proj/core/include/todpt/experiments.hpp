// Copyright 2026 The todpt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/encoder.hpp"
#include "todpt/metrics.hpp"
#include "todpt/trainer.hpp"

namespace todpt {

// ---------------------------------------------------------------------------
// Ability / structure affinity between tasks

enum class Ability { kSingleTurn, kMultiTurn, kCoherence, kEntity };
enum class Structure { kSingleTurnClassifier, kMultiTurnClassifier, kSiamese, kRankLoss };

std::string_view to_string(Ability a);
std::string_view to_string(Structure s);

struct AffinityRow {
  std::string task;
  bool downstream = false;
  std::set<Ability> abilities;
  std::set<Structure> structures;
  friend bool operator==(const AffinityRow&, const AffinityRow&) = default;
};

// Four downstream rows followed by five pre-training rows.
const std::vector<AffinityRow>& affinity_table();

// The same table as a literal mark grid, one row per line:
// "<task> | <8 cells>", cells in column order (four abilities, then four
// structures), "※" for a mark and "." for a blank.
std::string_view affinity_literal();
std::vector<AffinityRow> parse_affinity_literal(std::string_view text);

struct AffinityOverlap {
  std::set<Ability> abilities;
  std::set<Structure> structures;
  bool empty() const { return abilities.empty() && structures.empty(); }
};

// Shared abilities and structures of a pre-training and a downstream task.
// Throws UsageError for an unknown task id.
AffinityOverlap affinity_overlap(std::string_view pretrain, std::string_view downstream);
std::string describe(const AffinityOverlap& o);

// ---------------------------------------------------------------------------
// Experiment specification

struct PretrainConfig {
  std::string name;
  std::optional<PretrainSpec> spec;  // nullopt: fine-tune the base encoder directly
};

struct DownstreamConfig {
  DownstreamTask task = DownstreamTask::kInt;
  std::filesystem::path dataset;
  std::string name;  // defaults to the dataset directory name
};

// Report views: a titled subset of pre-training rows rendered with every
// downstream column.
struct ReportView {
  std::string title;
  std::vector<std::string> rows;
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::filesystem::path output_dir;
  std::filesystem::path corpus;
  bool annotate = true;  // run the rule-based annotator when the corpus lacks counts
  std::optional<std::filesystem::path> base_checkpoint;
  EncoderConfig encoder;
  int vocab_min_count = 1;
  std::uint64_t base_seed = 0;
  std::uint64_t pretrain_seed = 0;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  TrainConfig pretrain_config;
  TrainConfig finetune_config;
  std::map<std::string, TrainConfig> finetune_overrides;  // by task id
  std::vector<PretrainConfig> pretrain;
  std::vector<DownstreamConfig> downstream;
  std::vector<ReportView> views;
  std::string nice_baseline = "MLM³";

  void validate() const;
  const TrainConfig& finetune_for(DownstreamTask task) const;
  // Relative paths resolve against `base_dir`.
  static ExperimentSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// The standard row set: BERT², MLM³, DSP, CRM, DCV, ENP, DUR, Joint
// (ENP+CRM) and CRM without MLM, plus the default comparison views.
std::vector<PretrainConfig> standard_pretrain_configs();
std::vector<ReportView> standard_views();

// Lower-case file-system friendly form of a row name ("MLM³" -> "mlm3").
std::string slug(std::string_view name);

// ---------------------------------------------------------------------------
// Running

struct CellResult {
  std::string cell_id;
  std::string pretrain;
  std::size_t pretrain_index = 0;
  std::string task;
  std::string dataset;
  std::size_t downstream_index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport report;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

struct MatrixSummary {
  std::size_t cells = 0;
  std::size_t cells_run = 0;
  std::size_t cells_cached = 0;
  std::size_t cells_failed = 0;
  std::size_t pretrain_runs = 0;
  std::size_t pretrain_cache_hits = 0;
  long pretrain_steps = 0;
  long finetune_steps = 0;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<CellResult> results;

  nlohmann::json to_json() const;
};

struct MatrixOptions {
  int jobs = 1;
  bool write_report = true;
};

// Runs every pre-training configuration once (cached by content key), then
// every (pretrain, downstream, seed) cell. Completed cells are skipped on a
// rerun; failed cells are recorded and retried next time.
MatrixSummary run_matrix(const ExperimentSpec& spec, const MatrixOptions& opts = {});

// Cache key of one pre-training run.
std::string pretrain_key(const PretrainConfig& p, std::uint64_t corpus_hash, const TrainConfig& cfg,
                         const EncoderConfig& enc, const std::string& base_fingerprint,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reporting

struct NicePair {
  std::string pretrain;
  std::string task;
  int improved = 0;
  int compared = 0;
  std::map<std::string, double> deltas;  // "<dataset>/<metric>" -> mean difference
  AffinityOverlap overlap;
};

struct Report {
  std::string markdown;
  std::string csv;
  std::vector<NicePair> nice_pairs;
};

// Seed means per (row, task, dataset), best values per column in bold,
// and the nice-pair list.
Report render_report(const ExperimentSpec& spec, const std::vector<CellResult>& results);

// Reads every completed cell under spec.output_dir and writes report.md and
// report.csv there.
Report emit_report(const ExperimentSpec& spec);

std::vector<CellResult> load_results(const std::filesystem::path& output_dir);

}  // namespace todpt

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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "todpt/common.hpp"
#include "todpt/corpus.hpp"
#include "todpt/downstream.hpp"
#include "todpt/experiments.hpp"
#include "todpt/model.hpp"
#include "todpt/taskgen.hpp"
#include "todpt/trainer.hpp"
#include "todpt/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace todpt;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kTraining = 3 };

// Relative input paths that do not exist under the working directory are
// looked up under $TODPT_DATA_DIR.
fs::path input_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* dir = std::getenv("TODPT_DATA_DIR"); dir && *dir) {
    fs::path alt = fs::path(dir) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

template <typename T>
void write_jsonl(const fs::path& out, std::vector<T> examples) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw DataError("cannot write " + out.string());
  for (const auto& e : examples) f << to_json(e).dump() << "\n";
}

// Train-config overrides shared by pretrain and finetune.
struct TrainFlags {
  std::string config;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> max_steps;
  std::optional<int> patience;
  std::optional<int> eval_every;
  std::optional<int> max_len;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON training config; flags below override its values");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--batch-size", batch_size, "Examples per objective per step");
    app->add_option("--max-steps", max_steps, "Optimizer step budget");
    app->add_option("--patience", patience, "Evaluations without improvement before stopping");
    app->add_option("--eval-every", eval_every, "Steps between validations (0: once per pass)");
    app->add_option("--max-len", max_len, "Input length limit in tokens");
  }

  TrainConfig resolve(TrainConfig base) const {
    if (!config.empty()) base = TrainConfig::load(input_path(config), base);
    if (lr) base.learning_rate = *lr;
    if (batch_size) base.batch_size = *batch_size;
    if (max_steps) base.max_steps = *max_steps;
    if (patience) base.patience = *patience;
    if (eval_every) base.eval_every = *eval_every;
    if (max_len) base.max_len = *max_len;
    base.validate();
    return base;
  }
};

json record_summary(const RunRecord& r) {
  json losses = json::object();
  for (const auto& [task, v] : r.task_losses)
    if (!v.empty()) losses[task] = v.back();
  return {{"steps", r.steps_executed},
          {"best_step", r.best_step},
          {"early_stopped", r.early_stopped},
          {"final_task_losses", losses},
          {"final_loss", r.step_losses.empty() ? json(nullptr) : json(r.step_losses.back())}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented dialogue further pre-training toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a dialogue dump and write canonical JSONL");
  std::string ingest_in, ingest_out, ingest_format = "canonical", ingest_name, ingest_split = "train";
  ingest->add_option("--in", ingest_in, "Input file")->required();
  ingest->add_option("--out", ingest_out, "Canonical JSONL output")->required();
  ingest->add_option("--format", ingest_format, "Input format")
      ->check(CLI::IsMember({"canonical", "multiwoz"}));
  ingest->add_option("--name", ingest_name, "Corpus name (default: input file stem)");
  ingest->add_option("--split", ingest_split, "Split label")->check(CLI::IsMember({"train", "valid", "test"}));

  // annotate
  auto* annotate = app.add_subcommand("annotate", "Add per-utterance entity counts");
  std::string ann_in, ann_out;
  annotate->add_option("--in", ann_in, "Canonical JSONL corpus")->required();
  annotate->add_option("--out", ann_out, "Annotated JSONL output")->required();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate pre-training examples from a corpus");
  std::string gen_task, gen_in, gen_out, gen_vocab;
  std::uint64_t gen_seed = 0;
  int gen_window = 3, gen_negatives = 9, gen_cmax = 10, gen_min_count = 1, gen_max_len = kDefaultMaxLen;
  double gen_corrupt = 0.5, gen_replace = 0.3, gen_mask = 0.15;
  gen->add_option("--task", gen_task, "mlm, dsp, crm, dcv, enp or dur")->required();
  gen->add_option("--in", gen_in, "Canonical JSONL corpus")->required();
  gen->add_option("--out", gen_out, "JSONL examples output")->required();
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--window", gen_window, "DUR shuffle window");
  gen->add_option("--negatives", gen_negatives, "CRM negatives per example");
  gen->add_option("--c-max", gen_cmax, "ENP count cap");
  gen->add_option("--corrupt-fraction", gen_corrupt, "DCV fraction of corrupted dialogues");
  gen->add_option("--replace-prob", gen_replace, "DCV per-utterance replacement probability");
  gen->add_option("--mask-rate", gen_mask, "MLM masking rate");
  gen->add_option("--max-len", gen_max_len, "MLM input length limit");
  gen->add_option("--vocab", gen_vocab, "MLM vocabulary file (default: built from the corpus)");
  gen->add_option("--vocab-min-count", gen_min_count, "Minimum count when building the vocabulary");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Further pre-train an encoder on a corpus");
  std::string pre_corpus, pre_out, pre_base, pre_tasks, pre_encoder, pre_record;
  bool pre_no_mlm = false;
  std::uint64_t pre_seed = 0;
  int pre_min_count = 1;
  TrainFlags pre_flags;
  pretrain->add_option("--corpus", pre_corpus, "Canonical JSONL corpus")->required();
  pretrain->add_option("--out", pre_out, "Checkpoint output")->required();
  pretrain->add_option("--tasks", pre_tasks, "Comma-separated tasks among dsp,crm,dcv,enp,dur (empty: MLM only)");
  pretrain->add_flag("--no-mlm", pre_no_mlm, "Do not add the MLM objective");
  pretrain->add_option("--base", pre_base, "Starting checkpoint (default: fresh encoder)");
  pretrain->add_option("--encoder", pre_encoder, "JSON encoder config for a fresh encoder");
  pretrain->add_option("--vocab-min-count", pre_min_count, "Vocabulary cut-off for a fresh encoder");
  pretrain->add_option("--seed", pre_seed, "Random seed");
  pretrain->add_option("--record", pre_record, "Write the full training record here");
  pre_flags.add(pretrain);

  // finetune
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune an encoder on a downstream task");
  std::string ft_task, ft_data, ft_base, ft_out, ft_record;
  std::uint64_t ft_seed = 1;
  TrainFlags ft_flags;
  finetune_cmd->add_option("--task", ft_task, "int, da, rs or dst")->required();
  finetune_cmd->add_option("--data", ft_data, "Downstream dataset directory")->required();
  finetune_cmd->add_option("--base", ft_base, "Encoder checkpoint")->required();
  finetune_cmd->add_option("--out", ft_out, "Fine-tuned checkpoint output")->required();
  finetune_cmd->add_option("--seed", ft_seed, "Random seed");
  finetune_cmd->add_option("--record", ft_record, "Write the full training record here");
  ft_flags.add(finetune_cmd);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  std::string ev_model, ev_data, ev_split = "test", ev_out;
  std::size_t ev_pool = 100;
  std::uint64_t ev_seed = EvalOptions{}.seed;
  eval->add_option("--model", ev_model, "Fine-tuned checkpoint")->required();
  eval->add_option("--data", ev_data, "Downstream dataset directory")->required();
  eval->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--rs-pool", ev_pool, "Response-selection candidate pool size");
  eval->add_option("--seed", ev_seed, "Candidate sampling seed");
  eval->add_option("--out", ev_out, "Also write the metrics JSON here");

  // matrix
  auto* matrix = app.add_subcommand("matrix", "Run a pretrain x downstream experiment grid");
  std::string mx_spec, mx_output;
  int mx_jobs = 1;
  std::vector<std::uint64_t> mx_seeds;
  matrix->add_option("--spec", mx_spec, "Experiment spec (JSON)")->required();
  matrix->add_option("--jobs", mx_jobs, "Parallel workers")->check(CLI::PositiveNumber);
  matrix->add_option("--output", mx_output, "Override the spec's output directory");
  matrix->add_option("--seeds", mx_seeds, "Override the spec's fine-tuning seeds")->delimiter(',');

  // report
  auto* report = app.add_subcommand("report", "Rebuild report.md and report.csv from stored cells");
  std::string rp_spec, rp_output;
  report->add_option("--spec", rp_spec, "Experiment spec (JSON)")->required();
  report->add_option("--output", rp_output, "Override the spec's output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kUsage;
  }

  try {
    if (*ingest) {
      const fs::path in = input_path(ingest_in);
      const std::string name = ingest_name.empty() ? in.stem().string() : ingest_name;
      Corpus c = ingest_format == "multiwoz" ? import_multiwoz(in, name) : load_corpus(in, parse_split(ingest_split));
      c.name = name;
      c.split = parse_split(ingest_split);
      validate(c);
      save_corpus(c, ingest_out);
      print({{"command", "ingest"},
             {"out", ingest_out},
             {"dialogues", c.dialogues.size()},
             {"utterances", c.utterance_count()},
             {"annotated", c.annotated()},
             {"hash", hex64(corpus_hash(c))}});
    } else if (*annotate) {
      Corpus c = annotate_entities(load_corpus(input_path(ann_in), Split::kTrain), RuleBasedAnnotator{});
      save_corpus(c, ann_out);
      long entities = 0;
      for (const auto& d : c.dialogues)
        for (const auto& u : d.utterances) entities += u.entity_count.value_or(0);
      print({{"command", "annotate"},
             {"out", ann_out},
             {"annotator", RuleBasedAnnotator{}.name()},
             {"dialogues", c.dialogues.size()},
             {"utterances", c.utterance_count()},
             {"entities", entities},
             {"hash", hex64(corpus_hash(c))}});
    } else if (*gen) {
      const PretrainTask task = parse_pretrain_task(gen_task);
      const Corpus c = load_corpus(input_path(gen_in), Split::kTrain);
      GenStats stats;
      auto run = [&](auto stream) {
        write_jsonl(gen_out, stream.collect());
        stats = stream.stats();
      };
      switch (task) {
        case PretrainTask::kMlm: {
          const Vocabulary vocab =
              gen_vocab.empty() ? Vocabulary::build(c, gen_min_count) : Vocabulary::load(input_path(gen_vocab));
          MlmOptions o;
          o.mask_rate = gen_mask;
          o.max_len = gen_max_len;
          run(gen_mlm(c, vocab, gen_seed, o));
          break;
        }
        case PretrainTask::kDsp: run(gen_dsp(c)); break;
        case PretrainTask::kCrm: run(gen_crm(c, gen_negatives, gen_seed)); break;
        case PretrainTask::kDcv: run(gen_dcv(c, gen_corrupt, gen_replace, gen_seed)); break;
        case PretrainTask::kEnp: run(gen_enp(c, gen_cmax)); break;
        case PretrainTask::kDur: run(gen_dur(c, gen_window, gen_seed)); break;
      }
      print({{"command", "gen"},
             {"task", std::string(to_string(task))},
             {"out", gen_out},
             {"seed", gen_seed},
             {"emitted", stats.emitted},
             {"skipped", stats.skipped}});
    } else if (*pretrain) {
      PretrainSpec spec;
      if (!pre_tasks.empty()) spec.tasks = parse_pretrain_tasks(pre_tasks);
      spec.mlm = !pre_no_mlm;
      if (spec.effective_tasks().empty()) throw UsageError("--no-mlm needs at least one task in --tasks");
      const TrainConfig cfg = pre_flags.resolve(TrainConfig::pretrain_defaults());
      const Corpus c = load_corpus(input_path(pre_corpus), Split::kTrain);
      EncoderConfig enc;
      if (!pre_encoder.empty()) {
        std::ifstream f(input_path(pre_encoder));
        if (!f) throw UsageError("cannot open " + pre_encoder);
        enc = EncoderConfig::from_json(json::parse(f));
      }
      const Model base = pre_base.empty() ? Model::create(enc, Vocabulary::build(c, pre_min_count), pre_seed)
                                          : load_checkpoint(input_path(pre_base));
      TrainResult r = further_pretrain(base, spec, c, cfg, pre_seed);
      save_checkpoint(r.model, pre_out);
      if (!pre_record.empty()) std::ofstream(pre_record) << r.record.to_json().dump() << "\n";
      json out = {{"command", "pretrain"}, {"out", pre_out}, {"tasks", spec.label()}, {"seed", pre_seed}};
      out.update(record_summary(r.record));
      print(out);
    } else if (*finetune_cmd) {
      const DownstreamTask task = parse_downstream_task(ft_task);
      TrainConfig cfg = ft_flags.resolve(TrainConfig::finetune_defaults(task));
      if (cfg.batch_size < 1) throw UsageError("--batch-size (or batch_size in --config) is required");
      const DownstreamData data = load_downstream(task, input_path(ft_data));
      TrainResult r = finetune(load_checkpoint(input_path(ft_base)), data, cfg, ft_seed);
      save_checkpoint(r.model, ft_out);
      if (!ft_record.empty()) std::ofstream(ft_record) << r.record.to_json().dump() << "\n";
      json out = {{"command", "finetune"},
                  {"task", std::string(to_string(task))},
                  {"dataset", data.name},
                  {"out", ft_out},
                  {"seed", ft_seed}};
      out.update(record_summary(r.record));
      print(out);
    } else if (*eval) {
      const Model m = load_checkpoint(input_path(ev_model));
      if (!m.metadata().contains("task")) throw UsageError("checkpoint is not fine-tuned for a task");
      const DownstreamTask task = parse_downstream_task(m.metadata()["task"].get<std::string>());
      const DownstreamData data = load_downstream(task, input_path(ev_data));
      EvalOptions o;
      o.rs_pool = ev_pool;
      o.seed = ev_seed;
      const MetricReport rep = evaluate(m, data, parse_split(ev_split), o);
      if (!ev_out.empty()) std::ofstream(ev_out) << rep.to_json().dump(2) << "\n";
      print({{"command", "eval"}, {"split", ev_split}, {"report", rep.to_json()}});
    } else if (*matrix) {
      ExperimentSpec spec = ExperimentSpec::load(input_path(mx_spec));
      if (!mx_output.empty()) spec.output_dir = mx_output;
      if (!mx_seeds.empty()) spec.seeds = mx_seeds;
      spec.validate();
      MatrixOptions o;
      o.jobs = mx_jobs;
      const MatrixSummary s = run_matrix(spec, o);
      json out = {{"command", "matrix"}, {"output_dir", spec.output_dir.string()}};
      out.update(s.to_json());
      print(out);
      if (s.cells_failed > 0) {
        std::cerr << "todpt: " << s.cells_failed << " cell(s) failed; see error.json under "
                  << (spec.output_dir / "cells").string() << "\n";
        return kTraining;
      }
    } else if (*report) {
      ExperimentSpec spec = ExperimentSpec::load(input_path(rp_spec));
      if (!rp_output.empty()) spec.output_dir = rp_output;
      const Report r = emit_report(spec);
      json pairs = json::array();
      for (const auto& p : r.nice_pairs) pairs.push_back({{"pretrain", p.pretrain}, {"task", p.task}});
      print({{"command", "report"},
             {"markdown", (spec.output_dir / "report.md").string()},
             {"csv", (spec.output_dir / "report.csv").string()},
             {"cells", load_results(spec.output_dir).size()},
             {"nice_pairs", pairs}});
    }
  } catch (const UsageError& e) {
    std::cerr << "todpt: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "todpt: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "todpt: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "todpt: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "todpt: " << e.what() << "\n";
    return kTraining;
  }
  return kOk;
}

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

#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "todpt/experiments.hpp"
#include "todpt/synthetic.hpp"

using namespace todpt;
using namespace todpt::testing;
using nlohmann::json;

namespace {

CellResult cell(const std::string& row, const std::string& task, const std::string& dataset,
                std::uint64_t seed, std::map<std::string, double> metrics) {
  CellResult c;
  c.cell_id = slug(row) + "__" + task + "__s" + std::to_string(seed);
  c.pretrain = row;
  c.task = task;
  c.dataset = dataset;
  c.seed = seed;
  c.ok = true;
  c.report.task = task;
  c.report.dataset = dataset;
  c.report.metrics = std::move(metrics);
  return c;
}

ExperimentSpec two_by_two(const std::filesystem::path& dir) {
  FixtureOptions opts;
  opts.dialogues = 16;
  opts.sizes = {12, 4, 6};
  opts.dim = 8;
  opts.layers = 1;
  opts.max_len = 48;
  opts.pretrain_steps = 3;
  opts.finetune_steps = 3;
  opts.batch_size = 2;
  opts.seeds = {1};
  opts.pretrain_rows = {"MLM³", "CRM"};
  opts.tasks = {"INT", "DA"};
  write_synthetic_fixtures(dir, opts);
  return ExperimentSpec::load(dir / "spec.json");
}

}  // namespace

TEST_CASE("affinity table matches its literal form") {
  CHECK(parse_affinity_literal(affinity_literal()) == affinity_table());
  CHECK(affinity_table().size() == 9);
  CHECK(affinity_overlap("CRM", "RS").structures.count(Structure::kSiamese) == 1);
  CHECK(affinity_overlap("CRM", "RS").abilities.count(Ability::kCoherence) == 1);
  CHECK(affinity_overlap("DSP", "DA").empty());
  CHECK(affinity_overlap("ENP", "INT").abilities.count(Ability::kSingleTurn) == 1);
  CHECK(affinity_overlap("DUR", "RS").abilities.count(Ability::kCoherence) == 1);
  CHECK(describe(affinity_overlap("DSP", "DA")) == "abilities: none; structures: none");
  CHECK_THROWS_AS(affinity_overlap("XYZ", "RS"), UsageError);
  CHECK_THROWS_AS(affinity_overlap("RS", "CRM"), UsageError);
}

TEST_CASE("row names and slugs") {
  CHECK(slug("MLM³") == "mlm3");
  CHECK(slug("BERT²") == "bert2");
  CHECK(slug("w.o. mlm") == "w-o-mlm");
  auto rows = standard_pretrain_configs();
  REQUIRE(rows.size() == 9);
  CHECK_FALSE(rows[0].spec.has_value());
  CHECK(rows[1].spec->tasks.empty());
  CHECK(rows[1].spec->mlm);
  CHECK(rows.back().spec->mlm == false);
  CHECK(rows.back().spec->tasks == std::vector<PretrainTask>{PretrainTask::kCrm});
  CHECK(standard_views().size() == 6);
}

TEST_CASE("experiment spec parsing") {
  json j = {{"output_dir", "out"},
            {"corpus", "c.jsonl"},
            {"seeds", {4}},
            {"finetune_config", {{"batch_size", 8}}},
            {"finetune_overrides", {{"DST", {{"batch_size", 2}}}}},
            {"pretrain", {{{"name", "A"}, {"tasks", {"crm"}}}, {{"name", "B"}, {"tasks", nullptr}}}},
            {"downstream", {{{"task", "DST"}, {"dataset", "d/syn"}}}}};
  ExperimentSpec s = ExperimentSpec::from_json(j, "/base");
  CHECK(s.output_dir == "/base/out");
  CHECK(s.corpus == "/base/c.jsonl");
  CHECK(s.downstream[0].name == "syn");
  CHECK(s.finetune_for(DownstreamTask::kDst).batch_size == 2);
  CHECK(s.finetune_for(DownstreamTask::kDst).learning_rate == doctest::Approx(3e-5));
  CHECK(s.finetune_for(DownstreamTask::kInt).batch_size == 8);
  CHECK_FALSE(s.pretrain[1].spec.has_value());
  ExperimentSpec back = ExperimentSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());

  json dup = j;
  dup["pretrain"] = {{{"name", "A"}, {"tasks", {"crm"}}}, {{"name", "A"}, {"tasks", {"dsp"}}}};
  CHECK_THROWS_AS(ExperimentSpec::from_json(dup), UsageError);
  json unknown = j;
  unknown["sedes"] = {1};
  CHECK_THROWS_AS(ExperimentSpec::from_json(unknown), UsageError);
  json no_batch = j;
  no_batch.erase("finetune_config");
  no_batch.erase("finetune_overrides");
  CHECK_THROWS_AS(ExperimentSpec::from_json(no_batch).validate(), UsageError);
}

TEST_CASE("report tables use the expected headers") {
  ExperimentSpec spec;
  spec.name = "T";
  spec.seeds = {1, 2};
  spec.pretrain = {{"MLM³", PretrainSpec{{}, true}}, {"CRM", PretrainSpec{{PretrainTask::kCrm}, true}}};
  spec.downstream = {{DownstreamTask::kInt, "x", "oos"},
                     {DownstreamTask::kDa, "x", "da"},
                     {DownstreamTask::kRs, "x", "rs"},
                     {DownstreamTask::kDst, "x", "mwoz"}};
  std::vector<CellResult> results = {
      cell("CRM", "RS", "rs", 1, {{"r100_at_1", 0.5}, {"r100_at_3", 0.7}}),
      cell("CRM", "RS", "rs", 2, {{"r100_at_1", 0.6}, {"r100_at_3", 0.8}}),
      cell("MLM³", "RS", "rs", 1, {{"r100_at_1", 0.4}, {"r100_at_3", 0.75}}),
  };
  Report r = render_report(spec, results);
  const std::string& md = r.markdown;
  CHECK(md.find("| Acc (all) | Acc (in) | Acc (out) | Recall (out) |") != std::string::npos);
  CHECK(md.find("| f1_micro | f1_macro |") != std::string::npos);
  CHECK(md.find("| R_100@1 | R_100@3 |") != std::string::npos);
  CHECK(md.find("| acc_joint | acc_slot |") != std::string::npos);
  CHECK(md.find("| CRM | **55.00** | **75.00** |") != std::string::npos);
  CHECK(md.find("| MLM³ | 40.00 | **75.00** |") != std::string::npos);
  CHECK(md.find("| CRM | - | - | - | - |") != std::string::npos);
  // CRM beats MLM³ on one of two RS columns only
  CHECK(r.nice_pairs.empty());
  CHECK(md.find("None.") != std::string::npos);
  CHECK(r.csv.find("CRM,RS,rs,r100_at_1,R_100@1,55.00,2\n") != std::string::npos);

  results.push_back(cell("CRM", "RS", "rs", 3, {{"r100_at_1", 0.5}, {"r100_at_3", 0.99}}));
  Report nice = render_report(spec, results);
  REQUIRE(nice.nice_pairs.size() == 1);
  CHECK(nice.nice_pairs[0].pretrain == "CRM");
  CHECK(nice.nice_pairs[0].task == "RS");
  CHECK(nice.nice_pairs[0].overlap.structures.count(Structure::kSiamese) == 1);
}

TEST_CASE("single-cell report") {
  ExperimentSpec spec;
  spec.pretrain = {{"CRM", PretrainSpec{{PretrainTask::kCrm}, true}}};
  spec.downstream = {{DownstreamTask::kDa, "x", "da"}};
  Report r = render_report(spec, {cell("CRM", "DA", "da", 1, {{"f1_micro", 0.25}, {"f1_macro", 0.125}})});
  CHECK(r.markdown.find("| CRM | **25.00** | **12.50** |") != std::string::npos);
  CHECK(r.csv == "row,task,dataset,metric,header,mean,seeds\nCRM,DA,da,f1_micro,f1_micro,25.00,1\n"
                 "CRM,DA,da,f1_macro,f1_macro,12.50,1\n");
}

TEST_CASE("a 2 x 2 grid runs once and is cached") {
  TempDir tmp;
  ExperimentSpec spec = two_by_two(tmp.path());
  MatrixSummary first = run_matrix(spec);
  CHECK(first.cells == 4);
  CHECK(first.cells_run == 4);
  CHECK(first.cells_failed == 0);
  CHECK(first.pretrain_runs == 2);
  CHECK(first.pretrain_steps > 0);
  CHECK(std::filesystem::exists(spec.output_dir / "report.md"));
  for (const auto& r : first.results) {
    CAPTURE(r.cell_id);
    CHECK(r.ok);
    CHECK(std::filesystem::exists(spec.output_dir / "cells" / r.cell_id / "metrics.json"));
  }

  MatrixSummary again = run_matrix(spec);
  CHECK(again.cells_run == 0);
  CHECK(again.cells_cached == 4);
  CHECK(again.pretrain_steps == 0);
  CHECK(again.finetune_steps == 0);
  CHECK(load_results(spec.output_dir).size() == 4);

  // a removed cell is the only one recomputed
  std::filesystem::remove_all(spec.output_dir / "cells" / first.results[0].cell_id);
  MatrixSummary third = run_matrix(spec);
  CHECK(third.cells_run == 1);
  CHECK(third.pretrain_steps == 0);
}

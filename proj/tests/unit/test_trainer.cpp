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

#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "todpt/synthetic.hpp"
#include "todpt/trainer.hpp"

using namespace todpt;
using namespace todpt::testing;
using nlohmann::json;

namespace {

Model small_model(const Corpus& c, std::uint64_t seed = 3, const std::vector<std::string>& extra = {}) {
  std::vector<std::string> texts = extra;
  for (const auto& d : c.dialogues)
    for (const auto& u : d.utterances) texts.push_back(u.text);
  return Model::create(tiny_encoder(16, 1, 96), Vocabulary::build(texts), seed);
}

TrainConfig quick(int steps, int batch = 4) {
  TrainConfig cfg = TrainConfig::pretrain_defaults();
  cfg.learning_rate = 1e-3;
  cfg.batch_size = batch;
  cfg.max_steps = steps;
  cfg.max_len = 96;
  cfg.max_valid_examples = 8;
  cfg.patience = 100;
  return cfg;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t n) {
  return std::accumulate(v.begin() + static_cast<long>(from), v.begin() + static_cast<long>(from + n), 0.0) /
         static_cast<double>(n);
}

std::vector<std::string> texts_of(const DownstreamData& d) {
  std::vector<std::string> out;
  for (int s = 0; s < 3; ++s) {
    for (const auto& e : d.intents[s]) out.push_back(e.text);
    for (const auto& e : d.acts[s])
      for (const auto& u : e.history) out.push_back(u.text);
    for (const auto& e : d.responses[s]) out.push_back(e.response);
    for (const auto& e : d.states[s])
      for (const auto& u : e.history) out.push_back(u.text);
  }
  for (const auto& vs : d.ontology.values)
    for (const auto& v : vs) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("training config defaults and json") {
  TrainConfig dst = TrainConfig::finetune_defaults(DownstreamTask::kDst);
  CHECK(dst.learning_rate == doctest::Approx(3e-5));
  CHECK(dst.batch_size == 0);
  CHECK(TrainConfig::finetune_defaults(DownstreamTask::kInt).learning_rate == doctest::Approx(5e-5));

  TrainConfig c = quick(10);
  c.task_weights["DSP"] = 0.5;
  TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  TrainConfig partial = TrainConfig::from_json(json{{"learning_rate", 0.1}}, c);
  CHECK(partial.learning_rate == 0.1);
  CHECK(partial.batch_size == c.batch_size);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"learning_rte", 0.1}}, c), UsageError);
  CHECK(c.weight("DSP") == 0.5);
  CHECK(c.weight("CRM") == 1.0);
  TrainConfig bad = c;
  bad.learning_rate = -1;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("adam takes learning-rate sized first steps and skips frozen parameters") {
  ag::ParameterStore s;
  auto& p = s.create_constant("p", 1, 2, 1.0);
  auto& frozen = s.create_constant("f", 1, 1, 1.0);
  frozen.trainable = false;
  p.grad = ag::Matrix::Constant(1, 2, 0.0);
  p.grad(0, 0) = 3.0;
  p.grad(0, 1) = -0.01;
  frozen.grad = ag::Matrix::Constant(1, 1, 1.0);
  Adam adam({0.1, 0.9, 0.999, 1e-12});
  adam.step(s);
  CHECK(p.value(0, 0) == doctest::Approx(0.9));
  CHECK(p.value(0, 1) == doctest::Approx(1.1));
  CHECK(frozen.value(0, 0) == 1.0);
  CHECK(p.grad.isZero());
  CHECK(adam.steps() == 1);
}

TEST_CASE("fit stops early and restores the best parameters") {
  Model m = small_model(load_fixture_corpus());
  auto& w = m.params().create_constant("head.toy.w", 1, 1, 0.0);
  auto loss = [&w](ag::Graph& g, const Encoder&, const double& target) -> std::optional<TaskLoss> {
    ag::Var d = ag::add(g.param(w), g.constant(ag::Matrix::Constant(1, 1, -target)));
    return TaskLoss{ag::matmul(d, d), false, {}};
  };
  // training pulls w toward 3, validation prefers 0.5
  std::vector<WeightedObjective> objs;
  objs.push_back({std::make_unique<ExampleObjective<double>>("TOY", std::vector<double>{3.0},
                                                             std::vector<double>{0.5}, loss),
                  1.0});
  TrainConfig cfg = quick(500, 1);
  cfg.learning_rate = 0.05;
  cfg.eval_every = 1;
  cfg.patience = 3;
  RunRecord rec = fit(m, objs, cfg, 1);
  CHECK(rec.early_stopped);
  CHECK(rec.steps_executed < 500);
  CHECK(rec.best_step == rec.steps_executed - 3);
  CHECK(rec.valid_trace.size() == static_cast<std::size_t>(rec.steps_executed));
  double best = INFINITY;
  for (const auto& v : rec.valid_trace)
    if (v.step == rec.best_step) best = v.loss;
  CHECK(std::pow(w.value(0, 0) - 0.5, 2) == doctest::Approx(best));
}

TEST_CASE("fit requires a batch size") {
  Model m = small_model(load_fixture_corpus());
  DownstreamData d = synthetic_downstream(DownstreamTask::kInt, {8, 2, 2}, 1, "i");
  TrainConfig cfg = TrainConfig::finetune_defaults(DownstreamTask::kInt);
  CHECK_THROWS_AS(finetune(m, d, cfg, 1), UsageError);
}

TEST_CASE("ENP refuses an unannotated corpus") {
  Corpus c = synthetic_corpus(10, 1);
  Model m = small_model(c);
  CHECK_THROWS_AS(further_pretrain(m, {{PretrainTask::kEnp}, true}, c, quick(2), 1), DataError);
}

TEST_CASE("multi-task steps sum the weighted task losses") {
  Corpus c = load_fixture_corpus();
  Model m = small_model(c);
  TrainConfig cfg = quick(4);
  cfg.task_weights["DSP"] = 0.5;
  auto r = further_pretrain(m, {{PretrainTask::kDsp}, true}, c, cfg, 2);
  REQUIRE(r.record.task_losses.count("MLM"));
  REQUIRE(r.record.task_losses.count("DSP"));
  for (std::size_t i = 0; i < r.record.step_losses.size(); ++i)
    CHECK(r.record.step_losses[i] ==
          doctest::Approx(r.record.task_losses["MLM"][i] + 0.5 * r.record.task_losses["DSP"][i]).epsilon(1e-12));
  CHECK(r.model.metadata().contains("pretrain"));
}

TEST_CASE("pre-training is deterministic for a fixed seed") {
  Corpus c = load_fixture_corpus();
  Model m = small_model(c);
  TrainConfig cfg = quick(6);
  PretrainSpec spec{{PretrainTask::kCrm, PretrainTask::kDur}, true};
  auto a = further_pretrain(m, spec, c, cfg, 9);
  auto b = further_pretrain(m, spec, c, cfg, 9);
  CHECK(a.record.step_losses == b.record.step_losses);
  for (const auto& [name, p] : a.model.params())
    CHECK((p.value.array() == b.model.params().get(name).value.array()).all());
  auto other = further_pretrain(m, spec, c, cfg, 10);
  CHECK(other.record.step_losses != a.record.step_losses);
}

TEST_CASE("pre-training loss drops on the fixture corpus") {
  Corpus c = load_fixture_corpus();
  Model m = small_model(c);
  TrainConfig cfg = quick(150, 8);
  auto r = further_pretrain(m, {{PretrainTask::kDsp}, false}, c, cfg, 4);
  const auto& l = r.record.step_losses;
  REQUIRE(l.size() >= 40);
  const double first = mean_of(l, 0, 10), last = mean_of(l, l.size() - 10, 10);
  INFO("first=" << first << " last=" << last);
  CHECK(last <= 0.7 * first);
}

TEST_CASE("fine-tuned models evaluate identically after a checkpoint round trip") {
  TempDir tmp;
  for (auto task : {DownstreamTask::kInt, DownstreamTask::kDa, DownstreamTask::kRs, DownstreamTask::kDst}) {
    CAPTURE(to_string(task));
    DownstreamData d = synthetic_downstream(task, {task == DownstreamTask::kRs ? 200u : 16u, 4, 6}, 2, "syn");
    Model base = small_model(load_fixture_corpus(), 3, texts_of(d));
    TrainConfig cfg = TrainConfig::finetune_defaults(task);
    cfg.batch_size = 4;
    cfg.max_steps = 3;
    cfg.max_len = 96;
    auto r = finetune(base, d, cfg, 1);
    EvalOptions eo;
    auto before = evaluate(r.model, d, Split::kTest, eo);
    save_checkpoint(r.model, tmp / "ft.ckpt");
    auto after = evaluate(load_checkpoint(tmp / "ft.ckpt"), d, Split::kTest, eo);
    CHECK(before.metrics == after.metrics);
    for (const auto& k : task_metric_keys(std::string(to_string(task)))) {
      if (k == "acc_in" || k == "recall_out") continue;
      CHECK(before.metrics.count(k) == 1);
    }
    if (task == DownstreamTask::kDst) {
      // the value cache is frozen during fine-tuning
      for (const auto& [name, p] : r.model.params())
        if (name.find(".values.") != std::string::npos) CHECK_FALSE(p.trainable);
    }
  }
}

TEST_CASE("DST value cache is unchanged by fine-tuning") {
  DownstreamData d = synthetic_downstream(DownstreamTask::kDst, {16, 4, 4}, 5, "syn");
  Model base = small_model(load_fixture_corpus(), 3, texts_of(d));
  TrainConfig cfg = TrainConfig::finetune_defaults(DownstreamTask::kDst);
  cfg.batch_size = 4;
  cfg.max_steps = 1;
  cfg.max_len = 96;
  cfg.learning_rate = 1e-6;
  auto one = finetune(base, d, cfg, 1);
  cfg.max_steps = 6;
  cfg.learning_rate = 1e-2;
  auto six = finetune(base, d, cfg, 1);
  for (const auto& [name, p] : one.model.params()) {
    if (name.find("head.dst.values.") != 0) continue;
    CHECK((p.value.array() == six.model.params().get(name).value.array()).all());
  }
}

TEST_CASE("response pools") {
  std::vector<std::string> responses;
  for (int i = 0; i < 150; ++i) responses.push_back("r" + std::to_string(i));
  Rng rng(1);
  auto pool = response_pool("r7", responses, 100, rng);
  REQUIRE(pool.size() == 100);
  CHECK(pool[0] == "r7");
  std::set<std::string> distinct(pool.begin(), pool.end());
  CHECK(distinct.size() == 100);
  std::vector<std::string> few(responses.begin(), responses.begin() + 50);
  CHECK_THROWS_AS(response_pool("r7", few, 100, rng), DataError);
}

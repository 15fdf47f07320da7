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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/corpus.hpp"
#include "todpt/downstream.hpp"
#include "todpt/heads.hpp"
#include "todpt/metrics.hpp"
#include "todpt/model.hpp"

namespace todpt {

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation with bias correction, no weight decay.
class Adam {
 public:
  explicit Adam(AdamOptions opts);
  // Applies one update from the accumulated gradients, then zeroes them.
  // Non-trainable parameters are left alone.
  void step(ag::ParameterStore& params);
  long steps() const { return t_; }

 private:
  AdamOptions opts_;
  long t_ = 0;
  std::map<std::string, std::pair<ag::Matrix, ag::Matrix>> moments_;
};

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 32;  // 0 = unset; fine-tuning requires an explicit value
  int max_len = kDefaultMaxLen;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int patience = 3;       // evaluations without improvement
  int max_steps = 10000;
  int eval_every = 0;     // 0 = once per epoch-equivalent
  int max_valid_examples = 256;  // per task
  double mlm_weight = 1.0;
  std::map<std::string, double> task_weights;  // by task id, default 1
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Stop as soon as every objective's batch accuracy reaches this value;
  // 0 disables.
  double target_train_accuracy = 0.0;

  // Example generation.
  double mask_rate = 0.15;
  int crm_negatives = 9;
  double dcv_corrupt_fraction = 0.5;
  double dcv_replace_prob = 0.3;
  int enp_c_max = 10;
  int dur_window = 3;
  int rs_negatives = 9;
  double similarity_temperature = 1.0;
  double da_threshold = 0.5;
  SplitRatios split = {};
  std::uint64_t split_seed = 0;

  void validate() const;
  double weight(const std::string& task) const;
  HeadOptions head_options() const;
  nlohmann::json to_json() const;
  // Keys missing from `j` keep the values of `base`; unknown keys are an error.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path, const TrainConfig& base);

  static TrainConfig pretrain_defaults();
  // Learning rate 5e-5 (3e-5 for DST), batch size unset.
  static TrainConfig finetune_defaults(DownstreamTask task);
};

struct ValidPoint {
  int step = 0;
  double loss = 0.0;
};

struct RunRecord {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<double> step_losses;
  std::map<std::string, std::vector<double>> task_losses;
  std::map<std::string, std::vector<double>> task_accuracy;
  std::vector<ValidPoint> valid_trace;
  int stopping_step = 0;
  int best_step = 0;
  int steps_executed = 0;
  bool early_stopped = false;
  std::map<std::string, std::size_t> skipped;
  std::string checkpoint;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

// One training signal: a pool of examples and a loss per example. Objectives
// are stepped round-robin, one batch from each per optimizer step.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::string name() const = 0;
  // Called before pass `epoch` over the examples (0-based); generators that
  // resample (masks, negatives, corruptions) do it here.
  virtual void prepare(int epoch) { (void)epoch; }
  virtual std::size_t size() const = 0;
  virtual std::optional<TaskLoss> loss(ag::Graph& g, const Encoder& enc, std::size_t i) const = 0;
  virtual std::size_t valid_size() const { return 0; }
  virtual std::optional<TaskLoss> valid_loss(ag::Graph& g, const Encoder& enc, std::size_t i) const {
    (void)g, (void)enc, (void)i;
    return std::nullopt;
  }
};

template <typename T>
class ExampleObjective final : public Objective {
 public:
  using LossFn = std::function<std::optional<TaskLoss>(ag::Graph&, const Encoder&, const T&)>;
  using Regenerate = std::function<std::vector<T>(int epoch)>;

  ExampleObjective(std::string name, std::vector<T> train, std::vector<T> valid, LossFn fn,
                   Regenerate regenerate = {})
      : name_(std::move(name)),
        train_(std::move(train)),
        valid_(std::move(valid)),
        fn_(std::move(fn)),
        regenerate_(std::move(regenerate)) {}

  std::string name() const override { return name_; }
  void prepare(int epoch) override {
    if (regenerate_ && epoch > 0) train_ = regenerate_(epoch);
  }
  std::size_t size() const override { return train_.size(); }
  std::optional<TaskLoss> loss(ag::Graph& g, const Encoder& enc, std::size_t i) const override {
    return fn_(g, enc, train_.at(i));
  }
  std::size_t valid_size() const override { return valid_.size(); }
  std::optional<TaskLoss> valid_loss(ag::Graph& g, const Encoder& enc, std::size_t i) const override {
    return fn_(g, enc, valid_.at(i));
  }
  const std::vector<T>& train() const { return train_; }

 private:
  std::string name_;
  std::vector<T> train_;
  std::vector<T> valid_;
  LossFn fn_;
  Regenerate regenerate_;
};

struct WeightedObjective {
  std::unique_ptr<Objective> objective;
  double weight = 1.0;
};

// The shared optimization loop. Each step sums weight * mean batch loss over
// the objectives, validates every `eval_every` steps (or once per pass over
// the largest objective), stops early after `patience` evaluations without
// improvement, and leaves the best-validation parameters in `model`.
RunRecord fit(Model& model, std::vector<WeightedObjective>& objectives, const TrainConfig& cfg,
              std::uint64_t seed);

// A further pre-training configuration. MLM is added unless `mlm` is false.
struct PretrainSpec {
  std::vector<PretrainTask> tasks;
  bool mlm = true;

  // Tasks actually trained, MLM first when enabled.
  std::vector<PretrainTask> effective_tasks() const;
  std::string label() const;
  nlohmann::json to_json() const;
  static PretrainSpec from_json(const nlohmann::json& j);
};

struct TrainResult {
  Model model;
  RunRecord record;
};

// Drops any existing heads, creates fresh pre-training heads and trains on
// the corpus's train split, validating on its valid split.
TrainResult further_pretrain(const Model& base, const PretrainSpec& spec, const Corpus& corpus,
                             const TrainConfig& cfg, std::uint64_t seed);

// Single-task fine-tuning with a freshly initialized task head.
TrainResult finetune(const Model& base, const DownstreamData& data, const TrainConfig& cfg,
                     std::uint64_t seed);

struct EvalOptions {
  std::size_t rs_pool = 100;
  std::uint64_t seed = 20211;
};

// Deterministic evaluation of a fine-tuned model on one split.
MetricReport evaluate(const Model& model, const DownstreamData& data, Split split = Split::kTest,
                      const EvalOptions& opts = {});

// Response-selection candidate pool for one example: the gold response at
// index 0 followed by pool-1 distinct other responses from `responses`.
std::vector<std::string> response_pool(const std::string& gold,
                                       const std::vector<std::string>& responses,
                                       std::size_t pool, Rng& rng);

// Distinct responses across every split, sorted.
std::vector<std::string> all_responses(const DownstreamData& data);

}  // namespace todpt

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

#include <optional>
#include <string>
#include <vector>

#include "todpt/autograd.hpp"
#include "todpt/downstream.hpp"
#include "todpt/encoder.hpp"
#include "todpt/taskgen.hpp"

namespace todpt {

// Loss for one example plus what the evaluation code needs from it.
struct TaskLoss {
  ag::Var loss;
  bool correct = false;
  std::vector<double> scores;

  double value() const { return loss.scalar(); }
};

// x * W + b over a [CLS] row. Parameters "<prefix>.weight" (d x c) and
// "<prefix>.bias" (1 x c).
class LinearHead {
 public:
  LinearHead(ag::ParameterStore& store, std::string prefix);
  static LinearHead create(ag::ParameterStore& store, const std::string& prefix, int in_dim,
                           int classes, Rng& rng, double stddev = 0.02);

  ag::Var apply(ag::Graph& g, ag::Var x) const;
  int classes() const;
  int in_dim() const;
  const std::string& prefix() const { return prefix_; }

 private:
  ag::ParameterStore* store_;
  std::string prefix_;
};

// One hidden layer of width d with GELU, then a scalar score.
class UtteranceScorer {
 public:
  UtteranceScorer(ag::ParameterStore& store, std::string prefix);
  static UtteranceScorer create(ag::ParameterStore& store, const std::string& prefix, int dim,
                                Rng& rng, double stddev = 0.02);
  ag::Var apply(ag::Graph& g, ag::Var rows) const;  // n x d -> n x 1

 private:
  ag::ParameterStore* store_;
  std::string prefix_;
};

// Per (domain, slot) pair: a d x d projection G_j and the frozen encodings of
// that pair's candidate values, stored as non-trainable parameters so they
// travel with checkpoints.
class SlotProjectionBank {
 public:
  SlotProjectionBank(ag::ParameterStore& store, std::string prefix, Ontology ontology);
  // Encodes every candidate value with `enc` once and freezes the result.
  static SlotProjectionBank create(ag::ParameterStore& store, const std::string& prefix,
                                   const Ontology& ontology, const Encoder& enc, Rng& rng,
                                   double stddev = 0.02);

  std::size_t size() const { return ontology_.size(); }
  const Ontology& ontology() const { return ontology_; }
  ag::Var project(ag::Graph& g, std::size_t pair, ag::Var x) const;
  const ag::Matrix& value_vectors(std::size_t pair) const;

 private:
  ag::ParameterStore* store_;
  std::string prefix_;
  Ontology ontology_;
};

struct HeadOptions {
  double similarity_temperature = 1.0;
  double dur_eps = 1e-8;
  double da_threshold = 0.5;
};

// Siamese similarity shared by context-response matching and response
// selection.
ag::Var similarity(ag::Var a, ag::Var b);

// Softmax cross-entropy over candidate similarities, gold at index 0.
TaskLoss contrastive_loss(ag::Graph& g, ag::Var context, std::span<const ag::Var> candidates,
                          double temperature);

TaskLoss dsp_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const SpeakerExample& ex);
TaskLoss dcv_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const CoherenceExample& ex);
TaskLoss enp_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const EntityCountExample& ex);
TaskLoss crm_loss(ag::Graph& g, const Encoder& enc, const MatchExample& ex,
                  const HeadOptions& opts = {});
// nullopt when truncation removed part of the shuffled window.
std::optional<TaskLoss> dur_loss(ag::Graph& g, const Encoder& enc, const UtteranceScorer& scorer,
                                 const ReorderExample& ex, const HeadOptions& opts = {});
TaskLoss mlm_loss(ag::Graph& g, const Encoder& enc, const LinearHead& lm_head,
                  const MaskedExample& ex);

TaskLoss int_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const IntentExample& ex);
int int_predict(const Encoder& enc, const LinearHead& head, std::string_view text);

TaskLoss da_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head, const ActExample& ex,
                 const HeadOptions& opts = {});
std::vector<int> da_predict(const Encoder& enc, const LinearHead& head,
                            std::span<const Utterance> history, const HeadOptions& opts = {});

TaskLoss rs_loss(ag::Graph& g, const Encoder& enc, const ResponseExample& ex,
                 std::span<const std::string> negatives, const HeadOptions& opts = {});
double rs_score(const Encoder& enc, std::span<const Utterance> history, std::string_view candidate);
// Scores candidates against one history, encoding the history once.
std::vector<double> rs_scores(const Encoder& enc, std::span<const Utterance> history,
                              std::span<const std::string> candidates);
// Candidate indices by descending score, ties by index.
std::vector<std::size_t> rank_candidates(std::span<const double> scores);

TaskLoss dst_loss(ag::Graph& g, const Encoder& enc, const SlotProjectionBank& bank,
                  const StateExample& ex, const HeadOptions& opts = {});
std::map<std::string, std::string> dst_predict(const Encoder& enc, const SlotProjectionBank& bank,
                                               std::span<const Utterance> history,
                                               const HeadOptions& opts = {});

}  // namespace todpt

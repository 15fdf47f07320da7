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

#include "todpt/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace todpt {

namespace {

int argmax(const ag::Matrix& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.cols(); ++i)
    if (row(0, i) > row(0, best)) best = i;
  return static_cast<int>(best);
}

std::vector<double> row_values(const ag::Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

void check_finite(const ag::Var& v, const char* what) {
  if (!v.value().allFinite()) throw TrainingError(std::string(what) + ": non-finite forward value");
}

}  // namespace

LinearHead::LinearHead(ag::ParameterStore& store, std::string prefix)
    : store_(&store), prefix_(std::move(prefix)) {
  const auto& w = store.get(prefix_ + ".weight");
  const auto& b = store.get(prefix_ + ".bias");
  if (w.value.cols() < 2) throw DataError("linear head '" + prefix_ + "' needs at least 2 classes");
  if (b.value.rows() != 1 || b.value.cols() != w.value.cols())
    throw DataError("linear head '" + prefix_ + "' bias shape mismatch");
}

LinearHead LinearHead::create(ag::ParameterStore& store, const std::string& prefix, int in_dim,
                              int classes, Rng& rng, double stddev) {
  if (classes < 2) throw UsageError("linear head '" + prefix + "' needs at least 2 classes");
  store.create_normal(prefix + ".weight", in_dim, classes, stddev, rng);
  store.create_constant(prefix + ".bias", 1, classes, 0.0);
  return LinearHead(store, prefix);
}

ag::Var LinearHead::apply(ag::Graph& g, ag::Var x) const {
  return ag::add_row(ag::matmul(x, g.param(store_->get(prefix_ + ".weight"))),
                     g.param(store_->get(prefix_ + ".bias")));
}

int LinearHead::classes() const {
  return static_cast<int>(store_->get(prefix_ + ".weight").value.cols());
}

int LinearHead::in_dim() const {
  return static_cast<int>(store_->get(prefix_ + ".weight").value.rows());
}

UtteranceScorer::UtteranceScorer(ag::ParameterStore& store, std::string prefix)
    : store_(&store), prefix_(std::move(prefix)) {
  store.get(prefix_ + ".hidden.weight");
  store.get(prefix_ + ".out.weight");
}

UtteranceScorer UtteranceScorer::create(ag::ParameterStore& store, const std::string& prefix,
                                        int dim, Rng& rng, double stddev) {
  store.create_normal(prefix + ".hidden.weight", dim, dim, stddev, rng);
  store.create_constant(prefix + ".hidden.bias", 1, dim, 0.0);
  // A scalar output bias would cancel inside the softmax, so there is none.
  store.create_normal(prefix + ".out.weight", 1, dim, stddev, rng);
  return UtteranceScorer(store, prefix);
}

ag::Var UtteranceScorer::apply(ag::Graph& g, ag::Var rows) const {
  ag::Var hidden = ag::gelu(ag::add_row(ag::matmul(rows, g.param(store_->get(prefix_ + ".hidden.weight"))),
                                        g.param(store_->get(prefix_ + ".hidden.bias"))));
  return ag::matmul_transposed(g.param(store_->get(prefix_ + ".out.weight")), hidden);
}

SlotProjectionBank::SlotProjectionBank(ag::ParameterStore& store, std::string prefix,
                                       Ontology ontology)
    : store_(&store), prefix_(std::move(prefix)), ontology_(std::move(ontology)) {
  for (std::size_t j = 0; j < ontology_.size(); ++j) {
    if (ontology_.values[j].size() < 2)
      throw DataError("(domain, slot) pair '" + ontology_.pairs[j] + "' has fewer than 2 values");
    const auto& v = store.get(prefix_ + ".values." + ontology_.pairs[j]);
    if (v.value.rows() != static_cast<Eigen::Index>(ontology_.values[j].size()))
      throw DataError("cached value vectors do not match ontology for '" + ontology_.pairs[j] + "'");
    store.get(prefix_ + ".proj." + ontology_.pairs[j] + ".weight");
  }
}

SlotProjectionBank SlotProjectionBank::create(ag::ParameterStore& store, const std::string& prefix,
                                              const Ontology& ontology, const Encoder& enc,
                                              Rng& rng, double stddev) {
  const int d = enc.dim();
  for (std::size_t j = 0; j < ontology.size(); ++j) {
    const auto& vals = ontology.values[j];
    if (vals.size() < 2)
      throw DataError("(domain, slot) pair '" + ontology.pairs[j] + "' has fewer than 2 values");
    const std::string& pair = ontology.pairs[j];
    // Identity-initialized projection plus noise keeps early similarities
    // informative.
    auto& w = store.create_normal(prefix + ".proj." + pair + ".weight", d, d, stddev, rng);
    w.value += ag::Matrix::Identity(d, d);
    store.create_constant(prefix + ".proj." + pair + ".bias", 1, d, 0.0);
    auto& cache = store.create(prefix + ".values." + pair, static_cast<Eigen::Index>(vals.size()), d);
    cache.trainable = false;
    for (std::size_t i = 0; i < vals.size(); ++i)
      cache.value.row(static_cast<Eigen::Index>(i)) =
          enc.encode(enc.tokenize(Utterance{Speaker::kUser, vals[i], {}})).cls_vector;
  }
  return SlotProjectionBank(store, prefix, ontology);
}

ag::Var SlotProjectionBank::project(ag::Graph& g, std::size_t pair, ag::Var x) const {
  const std::string& name = ontology_.pairs.at(pair);
  return ag::add_row(ag::matmul(x, g.param(store_->get(prefix_ + ".proj." + name + ".weight"))),
                     g.param(store_->get(prefix_ + ".proj." + name + ".bias")));
}

const ag::Matrix& SlotProjectionBank::value_vectors(std::size_t pair) const {
  return store_->get(prefix_ + ".values." + ontology_.pairs.at(pair)).value;
}

ag::Var similarity(ag::Var a, ag::Var b) { return ag::cosine(a, b); }

TaskLoss contrastive_loss(ag::Graph& g, ag::Var context, std::span<const ag::Var> candidates,
                          double temperature) {
  if (candidates.size() < 2) throw DataError("contrastive loss needs at least one negative");
  if (!(temperature > 0.0)) throw UsageError("similarity temperature must be positive");
  std::vector<ag::Var> sims;
  sims.reserve(candidates.size());
  for (const auto& c : candidates) sims.push_back(similarity(context, c));
  ag::Var logits = ag::scale(ag::concat_cols(sims), 1.0 / temperature);
  TaskLoss out;
  out.loss = ag::cross_entropy(logits, 0);
  out.scores = row_values(logits.value());
  auto order = rank_candidates(out.scores);
  out.correct = order.front() == 0;
  (void)g;
  return out;
}

TaskLoss dsp_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const SpeakerExample& ex) {
  if (head.classes() != 2) throw DataError("speaker head must have 2 classes");
  ag::Var logits = head.apply(g, enc.forward(g, enc.tokenize(ex.utterance)).cls());
  check_finite(logits, "dsp");
  TaskLoss out{ag::cross_entropy(logits, ex.label), argmax(logits.value()) == ex.label,
               row_values(logits.value())};
  return out;
}

TaskLoss dcv_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const CoherenceExample& ex) {
  if (head.classes() != 2) throw DataError("coherence head must have 2 classes");
  if (ex.label == 0 && ex.replaced_indices.empty())
    throw DataError("incoherent example without replaced utterances");
  ag::Var logits = head.apply(g, enc.forward(g, enc.tokenize(ex.dialogue)).cls());
  check_finite(logits, "dcv");
  return {ag::cross_entropy(logits, ex.label), argmax(logits.value()) == ex.label,
          row_values(logits.value())};
}

TaskLoss enp_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const EntityCountExample& ex) {
  if (ex.count_class < 0 || ex.count_class >= head.classes())
    throw DataError("entity count class outside the head's range");
  ag::Var logits = head.apply(g, enc.forward(g, enc.tokenize(ex.utterance)).cls());
  check_finite(logits, "enp");
  return {ag::cross_entropy(logits, ex.count_class), argmax(logits.value()) == ex.count_class,
          row_values(logits.value())};
}

TaskLoss crm_loss(ag::Graph& g, const Encoder& enc, const MatchExample& ex,
                  const HeadOptions& opts) {
  if (ex.negatives.empty()) throw DataError("match example has no negatives");
  ag::Var context = enc.forward(g, enc.tokenize(std::span<const Utterance>(ex.context))).cls();
  std::vector<ag::Var> cands;
  cands.push_back(enc.forward(g, enc.tokenize(ex.gold_response)).cls());
  for (const auto& n : ex.negatives) cands.push_back(enc.forward(g, enc.tokenize(n)).cls());
  return contrastive_loss(g, context, cands, opts.similarity_temperature);
}

std::optional<TaskLoss> dur_loss(ag::Graph& g, const Encoder& enc, const UtteranceScorer& scorer,
                                 const ReorderExample& ex, const HeadOptions& opts) {
  const int w = static_cast<int>(ex.permutation.size());
  if (w < 2 || static_cast<int>(ex.target_distribution.size()) != w)
    throw DataError("reorder example has inconsistent window");
  TokenSequence seq = enc.tokenize(ex.dialogue);
  std::vector<int> positions;
  for (int i = 0; i < w; ++i) {
    int pos = seq.marker_for_turn(ex.window_start + i);
    if (pos < 0) return std::nullopt;
    positions.push_back(pos);
  }
  ag::Var tokens = enc.forward(g, seq).token_vectors;
  ag::Var scores = scorer.apply(g, ag::gather_rows(tokens, positions));
  check_finite(scores, "dur");
  ag::RowVector target(w);
  for (int i = 0; i < w; ++i) target(i) = ex.target_distribution[static_cast<std::size_t>(i)];
  TaskLoss out;
  out.loss = ag::soft_cross_entropy(scores, target, opts.dur_eps);
  out.scores = row_values(scores.value());
  // Correct when the score order recovers the original order exactly.
  std::vector<int> by_score(static_cast<std::size_t>(w));
  std::iota(by_score.begin(), by_score.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](int a, int b) { return out.scores[static_cast<std::size_t>(a)] < out.scores[static_cast<std::size_t>(b)]; });
  out.correct = true;
  for (int rank = 0; rank < w; ++rank)
    if (ex.permutation[static_cast<std::size_t>(by_score[static_cast<std::size_t>(rank)])] != rank) out.correct = false;
  return out;
}

TaskLoss mlm_loss(ag::Graph& g, const Encoder& enc, const LinearHead& lm_head,
                  const MaskedExample& ex) {
  if (ex.masked_positions.empty() || ex.masked_positions.size() != ex.original_ids.size())
    throw DataError("masked example needs aligned, non-empty masked positions");
  TokenSequence seq;
  seq.ids = ex.tokens;
  ag::Var tokens = enc.forward(g, seq).token_vectors;
  ag::Var logits = lm_head.apply(g, ag::gather_rows(tokens, ex.masked_positions));
  check_finite(logits, "mlm");
  std::vector<ag::Var> losses;
  TaskLoss out;
  out.correct = true;
  for (std::size_t i = 0; i < ex.masked_positions.size(); ++i) {
    ag::Var r = ag::row(logits, static_cast<Eigen::Index>(i));
    losses.push_back(ag::cross_entropy(r, ex.original_ids[i]));
    bool hit = argmax(r.value()) == ex.original_ids[i];
    out.scores.push_back(hit ? 1.0 : 0.0);
    out.correct = out.correct && hit;
  }
  out.loss = ag::mean(losses);
  return out;
}

TaskLoss int_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head,
                  const IntentExample& ex) {
  if (ex.label < 0 || ex.label >= head.classes()) throw DataError("intent label out of range");
  ag::Var logits = head.apply(g, enc.forward(g, enc.tokenize(Utterance{Speaker::kUser, ex.text, {}})).cls());
  check_finite(logits, "int");
  return {ag::cross_entropy(logits, ex.label), argmax(logits.value()) == ex.label,
          row_values(logits.value())};
}

int int_predict(const Encoder& enc, const LinearHead& head, std::string_view text) {
  ag::Graph g;
  ag::Var logits =
      head.apply(g, enc.forward(g, enc.tokenize(Utterance{Speaker::kUser, std::string(text), {}})).cls());
  return argmax(logits.value());
}

namespace {

double threshold_logit(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("DA threshold must be in (0, 1)");
  return std::log(threshold / (1.0 - threshold));
}

std::vector<int> acts_above(const ag::Matrix& logits, double threshold) {
  const double cut = threshold_logit(threshold);
  std::vector<int> out;
  for (Eigen::Index i = 0; i < logits.cols(); ++i)
    if (logits(0, i) > cut) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

TaskLoss da_loss(ag::Graph& g, const Encoder& enc, const LinearHead& head, const ActExample& ex,
                 const HeadOptions& opts) {
  ag::RowVector targets = ag::RowVector::Zero(head.classes());
  for (int a : ex.acts) {
    if (a < 0 || a >= head.classes()) throw DataError("act label out of range");
    targets(a) = 1.0;
  }
  ag::Var logits =
      head.apply(g, enc.forward(g, enc.tokenize(std::span<const Utterance>(ex.history))).cls());
  check_finite(logits, "da");
  return {ag::bce_with_logits(logits, targets), acts_above(logits.value(), opts.da_threshold) == ex.acts,
          row_values(logits.value())};
}

std::vector<int> da_predict(const Encoder& enc, const LinearHead& head,
                            std::span<const Utterance> history, const HeadOptions& opts) {
  ag::Graph g;
  ag::Var logits = head.apply(g, enc.forward(g, enc.tokenize(history)).cls());
  return acts_above(logits.value(), opts.da_threshold);
}

TaskLoss rs_loss(ag::Graph& g, const Encoder& enc, const ResponseExample& ex,
                 std::span<const std::string> negatives, const HeadOptions& opts) {
  ag::Var context = enc.forward(g, enc.tokenize(std::span<const Utterance>(ex.history))).cls();
  std::vector<ag::Var> cands;
  cands.push_back(enc.forward(g, enc.tokenize(Utterance{Speaker::kSystem, ex.response, {}})).cls());
  for (const auto& n : negatives)
    cands.push_back(enc.forward(g, enc.tokenize(Utterance{Speaker::kSystem, n, {}})).cls());
  return contrastive_loss(g, context, cands, opts.similarity_temperature);
}

std::vector<double> rs_scores(const Encoder& enc, std::span<const Utterance> history,
                              std::span<const std::string> candidates) {
  ag::Graph g;
  ag::Var context = g.constant(enc.encode(enc.tokenize(history)).cls_vector);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    ag::Var cv = g.constant(enc.encode(enc.tokenize(Utterance{Speaker::kSystem, c, {}})).cls_vector);
    scores.push_back(similarity(context, cv).scalar());
  }
  return scores;
}

double rs_score(const Encoder& enc, std::span<const Utterance> history, std::string_view candidate) {
  std::string c(candidate);
  return rs_scores(enc, history, std::span<const std::string>(&c, 1)).front();
}

std::vector<std::size_t> rank_candidates(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

ag::Var pair_logits(ag::Graph& g, const SlotProjectionBank& bank, std::size_t pair, ag::Var x,
                    double temperature) {
  ag::Var proj = bank.project(g, pair, x);
  const ag::Matrix& values = bank.value_vectors(pair);
  std::vector<ag::Var> sims;
  sims.reserve(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    sims.push_back(similarity(proj, g.constant(values.row(i))));
  return ag::scale(ag::concat_cols(sims), 1.0 / temperature);
}

}  // namespace

TaskLoss dst_loss(ag::Graph& g, const Encoder& enc, const SlotProjectionBank& bank,
                  const StateExample& ex, const HeadOptions& opts) {
  if (!(opts.similarity_temperature > 0.0)) throw UsageError("similarity temperature must be positive");
  ag::Var x = enc.forward(g, enc.tokenize(std::span<const Utterance>(ex.history))).cls();
  const Ontology& onto = bank.ontology();
  std::vector<ag::Var> losses;
  TaskLoss out;
  out.correct = true;
  for (std::size_t j = 0; j < onto.size(); ++j) {
    auto it = ex.state.find(onto.pairs[j]);
    if (it == ex.state.end()) throw DataError("state is missing pair '" + onto.pairs[j] + "'");
    int gold = onto.value_index(j, it->second);
    if (gold < 0) throw DataError("value '" + it->second + "' not in ontology");
    ag::Var logits = pair_logits(g, bank, j, x, opts.similarity_temperature);
    losses.push_back(ag::cross_entropy(logits, gold));
    bool hit = argmax(logits.value()) == gold;
    out.scores.push_back(hit ? 1.0 : 0.0);
    out.correct = out.correct && hit;
  }
  out.loss = ag::sum(losses);
  return out;
}

std::map<std::string, std::string> dst_predict(const Encoder& enc, const SlotProjectionBank& bank,
                                               std::span<const Utterance> history,
                                               const HeadOptions& opts) {
  ag::Graph g;
  ag::Var x = g.constant(enc.encode(enc.tokenize(history)).cls_vector);
  const Ontology& onto = bank.ontology();
  std::map<std::string, std::string> out;
  for (std::size_t j = 0; j < onto.size(); ++j) {
    ag::Var logits = pair_logits(g, bank, j, x, opts.similarity_temperature);
    out[onto.pairs[j]] = onto.values[j][static_cast<std::size_t>(argmax(logits.value()))];
  }
  return out;
}

}  // namespace todpt

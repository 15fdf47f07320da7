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

#include "todpt/encoder.hpp"

#include <cmath>
#include <numeric>

namespace todpt {

std::vector<int> TokenSequence::marker_positions(Speaker role) const {
  std::vector<int> out;
  for (const auto& m : markers)
    if (m.role == role) out.push_back(m.position);
  return out;
}

int TokenSequence::marker_for_turn(int turn) const {
  for (const auto& m : markers)
    if (m.turn == turn) return m.position;
  return -1;
}

TokenSequence tokenize_text(std::string_view text, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw UsageError("max_len must be at least 2");
  TokenSequence seq;
  seq.ids.push_back(special::kCls);
  for (const auto& w : word_tokens(text)) {
    if (static_cast<int>(seq.ids.size()) >= max_len - 1) break;
    seq.ids.push_back(vocab.id(w));
  }
  seq.ids.push_back(special::kSep);
  return seq;
}

TokenSequence tokenize_utterance(const Utterance& u, const Vocabulary& vocab, int max_len) {
  return tokenize_text(u.text, vocab, max_len);
}

TokenSequence tokenize_turns(std::span<const Utterance> turns, const Vocabulary& vocab,
                             int max_len) {
  if (max_len < 3) throw UsageError("max_len must be at least 3 for dialogues");
  std::vector<std::vector<TokenId>> per_turn;
  per_turn.reserve(turns.size());
  for (const auto& u : turns) {
    std::vector<TokenId> ids;
    for (const auto& w : word_tokens(u.text)) ids.push_back(vocab.id(w));
    per_turn.push_back(std::move(ids));
  }
  std::size_t total = 2;
  for (const auto& t : per_turn) total += 1 + t.size();
  std::size_t first = 0;
  while (first < per_turn.size() && total > static_cast<std::size_t>(max_len)) {
    total -= 1 + per_turn[first].size();
    ++first;
  }
  if (first == per_turn.size())
    throw DataError("dialogue truncates to zero turns at max_len " + std::to_string(max_len));

  TokenSequence seq;
  seq.dropped_turns = static_cast<int>(first);
  seq.ids.reserve(total);
  seq.ids.push_back(special::kCls);
  for (std::size_t t = first; t < per_turn.size(); ++t) {
    seq.markers.push_back({turns[t].speaker, static_cast<int>(t),
                           static_cast<int>(seq.ids.size())});
    seq.ids.push_back(Vocabulary::role_marker(turns[t].speaker));
    seq.ids.insert(seq.ids.end(), per_turn[t].begin(), per_turn[t].end());
  }
  seq.ids.push_back(special::kSep);
  return seq;
}

TokenSequence tokenize_dialogue(const Dialogue& d, const Vocabulary& vocab, int max_len) {
  return tokenize_turns(d.utterances, vocab, max_len);
}

EncoderOutput Encoder::encode(const TokenSequence& seq) const {
  check_parameters();
  ag::Graph g;
  EncodedSequence enc = forward(g, seq);
  EncoderOutput out;
  out.token_vectors = enc.token_vectors.value();
  out.cls_vector = out.token_vectors.row(0);
  return out;
}

void EncoderConfig::validate() const {
  if (dim < 1 || layers < 1 || heads < 1) throw UsageError("encoder dims must be positive");
  if (dim % heads != 0) throw UsageError("encoder dim must be divisible by heads");
  if (max_len < 3) throw UsageError("encoder max_len must be at least 3");
  if (ff_dim < 0) throw UsageError("encoder ff_dim must be non-negative");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"dim", dim},         {"layers", layers},   {"heads", heads},
          {"ff_dim", ff_dim},   {"max_len", max_len}, {"init_stddev", init_stddev}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.init_stddev = j.value("init_stddev", c.init_stddev);
  c.validate();
  return c;
}

namespace {

std::string layer_name(int l, const char* what) {
  return "encoder.layer" + std::to_string(l) + "." + what;
}

}  // namespace

void ReferenceEncoder::initialize(const EncoderConfig& c, std::size_t vocab_size,
                                  ag::ParameterStore& store, std::uint64_t seed) {
  c.validate();
  Rng rng(mix64(seed ^ 0xe4c0de4ULL));
  const auto d = static_cast<Eigen::Index>(c.dim);
  const auto f = static_cast<Eigen::Index>(c.ffn_width());
  const double s = c.init_stddev;
  store.create_normal("encoder.token_embedding", static_cast<Eigen::Index>(vocab_size), d, s, rng);
  store.create_normal("encoder.position_embedding", c.max_len, d, s, rng);
  store.create_constant("encoder.embedding_norm.gamma", 1, d, 1.0);
  store.create_constant("encoder.embedding_norm.beta", 1, d, 0.0);
  for (int l = 0; l < c.layers; ++l) {
    for (const char* w : {"attn.query", "attn.key", "attn.value", "attn.output"}) {
      store.create_normal(layer_name(l, w) + ".weight", d, d, s, rng);
      store.create_constant(layer_name(l, w) + ".bias", 1, d, 0.0);
    }
    store.create_constant(layer_name(l, "attn_norm.gamma"), 1, d, 1.0);
    store.create_constant(layer_name(l, "attn_norm.beta"), 1, d, 0.0);
    store.create_normal(layer_name(l, "ffn.in.weight"), d, f, s, rng);
    store.create_constant(layer_name(l, "ffn.in.bias"), 1, f, 0.0);
    store.create_normal(layer_name(l, "ffn.out.weight"), f, d, s, rng);
    store.create_constant(layer_name(l, "ffn.out.bias"), 1, d, 0.0);
    store.create_constant(layer_name(l, "ffn_norm.gamma"), 1, d, 1.0);
    store.create_constant(layer_name(l, "ffn_norm.beta"), 1, d, 0.0);
  }
}

ReferenceEncoder::ReferenceEncoder(EncoderConfig config, Vocabulary vocab,
                                   ag::ParameterStore& store)
    : config_(std::move(config)), vocab_(std::move(vocab)), store_(&store) {
  config_.validate();
  const auto& emb = store.get("encoder.token_embedding");
  if (emb.value.rows() != static_cast<Eigen::Index>(vocab_.size()) ||
      emb.value.cols() != config_.dim)
    throw DataError("token embedding shape does not match vocabulary/config");
  if (store.get("encoder.position_embedding").value.rows() < config_.max_len)
    throw DataError("position embedding shorter than max_len");
}

void ReferenceEncoder::check_parameters() const {
  for (const auto& [name, param] : *store_)
    if (name.rfind("encoder.", 0) == 0 && !param.value.allFinite())
      throw TrainingError("non-finite value in parameter '" + name + "'");
}

ag::Parameter& ReferenceEncoder::p(const std::string& name) const { return store_->get(name); }

EncodedSequence ReferenceEncoder::forward(ag::Graph& g, const TokenSequence& seq) const {
  const int n = static_cast<int>(seq.size());
  if (n < 2) throw DataError("encoder input must have at least 2 tokens");
  if (n > config_.max_len) throw DataError("encoder input longer than max_len");

  std::vector<int> ids(seq.ids.begin(), seq.ids.end());
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
      throw DataError("token id out of vocabulary range");
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), 0);

  ag::Var x = ag::add(ag::gather_rows(g.param(p("encoder.token_embedding")), ids),
                      ag::gather_rows(g.param(p("encoder.position_embedding")), positions));
  x = ag::layer_norm(x, g.param(p("encoder.embedding_norm.gamma")),
                     g.param(p("encoder.embedding_norm.beta")));

  const int heads = config_.heads;
  const int head_dim = config_.dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  auto linear = [&](ag::Var in, int l, const char* w) {
    return ag::add_row(ag::matmul(in, g.param(p(layer_name(l, w) + std::string(".weight")))),
                       g.param(p(layer_name(l, w) + std::string(".bias"))));
  };

  for (int l = 0; l < config_.layers; ++l) {
    ag::Var q = linear(x, l, "attn.query");
    ag::Var k = linear(x, l, "attn.key");
    ag::Var v = linear(x, l, "attn.value");
    std::vector<ag::Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      ag::Var qh = heads == 1 ? q : ag::slice_cols(q, h * head_dim, head_dim);
      ag::Var kh = heads == 1 ? k : ag::slice_cols(k, h * head_dim, head_dim);
      ag::Var vh = heads == 1 ? v : ag::slice_cols(v, h * head_dim, head_dim);
      ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul_transposed(qh, kh), inv_sqrt));
      outs.push_back(ag::matmul(attn, vh));
    }
    ag::Var merged = heads == 1 ? outs[0] : ag::concat_cols(outs);
    ag::Var attn_out = linear(merged, l, "attn.output");
    x = ag::layer_norm(ag::add(x, attn_out), g.param(p(layer_name(l, "attn_norm.gamma"))),
                       g.param(p(layer_name(l, "attn_norm.beta"))));
    ag::Var hidden = ag::gelu(linear(x, l, "ffn.in"));
    ag::Var ffn = linear(hidden, l, "ffn.out");
    x = ag::layer_norm(ag::add(x, ffn), g.param(p(layer_name(l, "ffn_norm.gamma"))),
                       g.param(p(layer_name(l, "ffn_norm.beta"))));
  }
  return {x};
}

std::vector<ag::RowVector> marker_representations(const EncoderOutput& out,
                                                  const TokenSequence& seq) {
  if (seq.markers.empty()) throw DataError("sequence has no role markers");
  std::vector<ag::RowVector> reps;
  reps.reserve(seq.markers.size());
  for (const auto& m : seq.markers) {
    if (m.position < 0 || m.position >= out.token_vectors.rows())
      throw DataError("marker position " + std::to_string(m.position) + " out of range");
    reps.push_back(out.token_vectors.row(m.position));
  }
  return reps;
}

}  // namespace todpt

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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/autograd.hpp"
#include "todpt/corpus.hpp"
#include "todpt/vocab.hpp"

namespace todpt {

struct Marker {
  Speaker role;
  int turn;      // index into the source dialogue's utterances
  int position;  // index into TokenSequence::ids
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<Marker> markers;  // dialogue order; empty for single utterances
  int dropped_turns = 0;        // oldest turns removed by truncation

  std::size_t size() const { return ids.size(); }
  std::vector<int> marker_positions(Speaker role) const;
  // Position of the marker for a given dialogue turn, or -1 if truncated away.
  int marker_for_turn(int turn) const;
};

inline constexpr int kDefaultMaxLen = 512;

// [CLS] tokens [SEP], truncated to max_len keeping both specials.
TokenSequence tokenize_utterance(const Utterance& u, const Vocabulary& vocab,
                                 int max_len = kDefaultMaxLen);
TokenSequence tokenize_text(std::string_view text, const Vocabulary& vocab,
                            int max_len = kDefaultMaxLen);

// [CLS] ([USR]|[SYS] tokens)* [SEP]. Oldest turns are dropped first; throws
// DataError when not even the final turn fits.
TokenSequence tokenize_dialogue(const Dialogue& d, const Vocabulary& vocab,
                                int max_len = kDefaultMaxLen);
TokenSequence tokenize_turns(std::span<const Utterance> turns, const Vocabulary& vocab,
                             int max_len = kDefaultMaxLen);

struct EncoderOutput {
  ag::Matrix token_vectors;  // length x dim
  ag::RowVector cls_vector;
};

// Graph-level forward result: token_vectors row 0 is the [CLS] summary.
struct EncodedSequence {
  ag::Var token_vectors;
  ag::Var cls() const { return ag::row(token_vectors, 0); }
};

// Bidirectional sequence encoder. External pre-trained encoders plug in by
// implementing this interface over their own parameters and tokenizer.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual int dim() const = 0;
  virtual int max_len() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;

  virtual TokenSequence tokenize(const Utterance& u) const {
    return tokenize_utterance(u, vocabulary(), max_len());
  }
  virtual TokenSequence tokenize(const Dialogue& d) const {
    return tokenize_dialogue(d, vocabulary(), max_len());
  }
  virtual TokenSequence tokenize(std::span<const Utterance> turns) const {
    return tokenize_turns(turns, vocabulary(), max_len());
  }

  virtual EncodedSequence forward(ag::Graph& g, const TokenSequence& seq) const = 0;

  // Throws when any parameter is non-finite.
  virtual void check_parameters() const {}

  // Inference-only forward pass.
  EncoderOutput encode(const TokenSequence& seq) const;
};

struct EncoderConfig {
  int dim = 64;
  int layers = 2;
  int heads = 2;
  int ff_dim = 0;  // 0 means 4 * dim
  int max_len = kDefaultMaxLen;
  double init_stddev = 0.02;

  int ffn_width() const { return ff_dim > 0 ? ff_dim : 4 * dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Post-norm transformer: learned token and position embeddings, multi-head
// self-attention without masking, GELU feed-forward. Parameters live in a
// shared store under the "encoder." prefix.
class ReferenceEncoder final : public Encoder {
 public:
  ReferenceEncoder(EncoderConfig config, Vocabulary vocab, ag::ParameterStore& store);

  // Adds freshly initialized encoder parameters to the store.
  static void initialize(const EncoderConfig& config, std::size_t vocab_size,
                         ag::ParameterStore& store, std::uint64_t seed);

  int dim() const override { return config_.dim; }
  int max_len() const override { return config_.max_len; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  const EncoderConfig& config() const { return config_; }

  EncodedSequence forward(ag::Graph& g, const TokenSequence& seq) const override;
  void check_parameters() const override;

 private:
  ag::Parameter& p(const std::string& name) const;

  EncoderConfig config_;
  Vocabulary vocab_;
  ag::ParameterStore* store_;
};

// One vector per surviving marker, in dialogue order.
std::vector<ag::RowVector> marker_representations(const EncoderOutput& out,
                                                  const TokenSequence& seq);

}  // namespace todpt

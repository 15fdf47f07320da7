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

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/corpus.hpp"
#include "todpt/vocab.hpp"

namespace todpt {

struct MaskedExample {
  std::string dialogue_id;
  std::vector<TokenId> tokens;  // after substitution
  std::vector<int> masked_positions;
  std::vector<TokenId> original_ids;
};

struct SpeakerExample {
  std::string dialogue_id;
  int turn = 0;
  Utterance utterance;
  int label = 0;  // USER=0, SYSTEM=1
};

struct MatchExample {
  std::string dialogue_id;
  int turn = 0;
  std::vector<Utterance> context;
  Utterance gold_response;
  std::vector<Utterance> negatives;
};

struct CoherenceExample {
  Dialogue dialogue;
  int label = 1;  // coherent=1, incoherent=0
  std::vector<int> replaced_indices;
};

struct EntityCountExample {
  std::string dialogue_id;
  int turn = 0;
  Utterance utterance;
  int count_class = 0;
};

struct ReorderExample {
  Dialogue dialogue;  // with the window already shuffled
  int window_start = 0;
  std::vector<int> permutation;  // shuffled slot i holds original slot permutation[i]
  std::vector<double> target_distribution;
};

// Counters a generator updates while it is consumed.
struct GenStats {
  std::size_t emitted = 0;
  std::size_t skipped = 0;
};

// Pull-based example stream; examples are produced lazily in a fixed order.
template <typename T>
class ExampleStream {
 public:
  using Producer = std::function<std::optional<T>()>;

  ExampleStream(Producer producer, std::shared_ptr<GenStats> stats)
      : producer_(std::move(producer)), stats_(std::move(stats)) {}

  std::optional<T> next() {
    auto ex = producer_();
    if (ex) ++stats_->emitted;
    return ex;
  }

  std::vector<T> collect() {
    std::vector<T> out;
    while (auto ex = next()) out.push_back(std::move(*ex));
    return out;
  }

  const GenStats& stats() const { return *stats_; }

 private:
  Producer producer_;
  std::shared_ptr<GenStats> stats_;
};

struct MlmOptions {
  double mask_rate = 0.15;
  double mask_token_prob = 0.8;
  double random_token_prob = 0.1;
  int max_len = 512;
};

// Masks ceil(rate * eligible) non-special positions of ids with the 80/10/10
// substitution rule. Returns nullopt when fewer than 2 eligible tokens exist.
std::optional<MaskedExample> mask_tokens(const std::vector<TokenId>& ids,
                                         std::size_t vocab_size, const MlmOptions& opts,
                                         Rng& rng);

ExampleStream<MaskedExample> gen_mlm(const Corpus& corpus, const Vocabulary& vocab,
                                     std::uint64_t seed, const MlmOptions& opts = {});
ExampleStream<SpeakerExample> gen_dsp(const Corpus& corpus);
ExampleStream<MatchExample> gen_crm(const Corpus& corpus, int k_neg, std::uint64_t seed);
ExampleStream<CoherenceExample> gen_dcv(const Corpus& corpus, double corrupt_fraction,
                                        double replace_prob, std::uint64_t seed);
ExampleStream<EntityCountExample> gen_enp(const Corpus& corpus, int c_max);
ExampleStream<ReorderExample> gen_dur(const Corpus& corpus, int window, std::uint64_t seed);

// softmax over 1-based relative positions.
std::vector<double> position_target(const std::vector<int>& relative_positions);

nlohmann::json to_json(const MaskedExample& e);
nlohmann::json to_json(const SpeakerExample& e);
nlohmann::json to_json(const MatchExample& e);
nlohmann::json to_json(const CoherenceExample& e);
nlohmann::json to_json(const EntityCountExample& e);
nlohmann::json to_json(const ReorderExample& e);

MaskedExample masked_from_json(const nlohmann::json& j);
SpeakerExample speaker_from_json(const nlohmann::json& j);
MatchExample match_from_json(const nlohmann::json& j);
CoherenceExample coherence_from_json(const nlohmann::json& j);
EntityCountExample entity_count_from_json(const nlohmann::json& j);
ReorderExample reorder_from_json(const nlohmann::json& j);

// Writes one example per line; returns the number written.
template <typename T>
std::size_t write_jsonl(ExampleStream<T>& stream, std::ostream& out);

}  // namespace todpt

#include <ostream>

template <typename T>
std::size_t todpt::write_jsonl(ExampleStream<T>& stream, std::ostream& out) {
  std::size_t n = 0;
  while (auto ex = stream.next()) {
    out << to_json(*ex).dump() << '\n';
    ++n;
  }
  return n;
}

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

#include "todpt/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "todpt/encoder.hpp"

namespace todpt {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSaltMlm = 0x11;
constexpr std::uint64_t kSaltCrm = 0x22;
constexpr std::uint64_t kSaltDcv = 0x33;
constexpr std::uint64_t kSaltDur = 0x44;

struct PoolEntry {
  std::size_t dialogue;
  std::size_t turn;
};

std::shared_ptr<const Corpus> share(const Corpus& c) { return std::make_shared<const Corpus>(c); }

json utterance_json(const Utterance& u) {
  json j = {{"speaker", to_string(u.speaker)}, {"text", u.text}};
  if (u.entity_count) j["entity_count"] = *u.entity_count;
  return j;
}

Utterance utterance_from(const json& j) {
  Utterance u;
  u.speaker = parse_speaker(j.at("speaker").get<std::string>());
  u.text = j.at("text").get<std::string>();
  if (j.contains("entity_count") && !j["entity_count"].is_null())
    u.entity_count = j["entity_count"].get<int>();
  return u;
}

json utterances_json(const std::vector<Utterance>& us) {
  json a = json::array();
  for (const auto& u : us) a.push_back(utterance_json(u));
  return a;
}

std::vector<Utterance> utterances_from(const json& j) {
  std::vector<Utterance> out;
  for (const auto& u : j) out.push_back(utterance_from(u));
  return out;
}

}  // namespace

std::optional<MaskedExample> mask_tokens(const std::vector<TokenId>& ids,
                                         std::size_t vocab_size, const MlmOptions& opts,
                                         Rng& rng) {
  if (!(opts.mask_rate > 0.0 && opts.mask_rate < 1.0))
    throw UsageError("mask_rate must be in (0, 1)");
  std::vector<int> eligible;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!Vocabulary::is_special(ids[i])) eligible.push_back(static_cast<int>(i));
  if (eligible.size() < 2) return std::nullopt;

  auto count = static_cast<std::size_t>(
      std::ceil(opts.mask_rate * static_cast<double>(eligible.size()) - 1e-12));
  count = std::clamp<std::size_t>(count, 1, eligible.size());
  // Partial Fisher-Yates for the first `count` picks.
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + uniform_index(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  std::vector<int> picked(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(picked.begin(), picked.end());

  MaskedExample ex;
  ex.tokens = ids;
  ex.masked_positions = picked;
  const std::size_t regular = vocab_size > static_cast<std::size_t>(special::kCount)
                                  ? vocab_size - static_cast<std::size_t>(special::kCount)
                                  : 0;
  for (int pos : picked) {
    TokenId original = ids[static_cast<std::size_t>(pos)];
    ex.original_ids.push_back(original);
    double r = uniform01(rng);
    if (r < opts.mask_token_prob) {
      ex.tokens[static_cast<std::size_t>(pos)] = special::kMask;
    } else if (r < opts.mask_token_prob + opts.random_token_prob && regular > 0) {
      ex.tokens[static_cast<std::size_t>(pos)] =
          static_cast<TokenId>(special::kCount + static_cast<TokenId>(uniform_index(rng, regular)));
    }
  }
  return ex;
}

ExampleStream<MaskedExample> gen_mlm(const Corpus& corpus, const Vocabulary& vocab,
                                     std::uint64_t seed, const MlmOptions& opts) {
  if (corpus.dialogues.empty()) throw DataError("gen_mlm: corpus is empty");
  if (!(opts.mask_rate > 0.0 && opts.mask_rate < 1.0))
    throw UsageError("mask_rate must be in (0, 1)");
  auto stats = std::make_shared<GenStats>();
  auto data = share(corpus);
  auto v = std::make_shared<const Vocabulary>(vocab);
  std::size_t next = 0;
  return {[=]() mutable -> std::optional<MaskedExample> {
            while (next < data->dialogues.size()) {
              const Dialogue& d = data->dialogues[next++];
              TokenSequence seq = tokenize_dialogue(d, *v, opts.max_len);
              Rng rng(derive_seed(seed, d.id, kSaltMlm));
              auto ex = mask_tokens(seq.ids, v->size(), opts, rng);
              if (!ex) {
                ++stats->skipped;
                continue;
              }
              ex->dialogue_id = d.id;
              return ex;
            }
            return std::nullopt;
          },
          stats};
}

ExampleStream<SpeakerExample> gen_dsp(const Corpus& corpus) {
  if (corpus.dialogues.empty()) throw DataError("gen_dsp: corpus is empty");
  auto stats = std::make_shared<GenStats>();
  auto data = share(corpus);
  std::size_t di = 0;
  std::size_t ti = 0;
  return {[=]() mutable -> std::optional<SpeakerExample> {
            while (di < data->dialogues.size()) {
              const Dialogue& d = data->dialogues[di];
              if (ti < d.utterances.size()) {
                const Utterance& u = d.utterances[ti];
                SpeakerExample ex{d.id, static_cast<int>(ti), u,
                                  u.speaker == Speaker::kUser ? 0 : 1};
                ++ti;
                return ex;
              }
              ++di;
              ti = 0;
            }
            return std::nullopt;
          },
          stats};
}

ExampleStream<MatchExample> gen_crm(const Corpus& corpus, int k_neg, std::uint64_t seed) {
  if (k_neg < 1) throw UsageError("k_neg must be at least 1");
  if (corpus.dialogues.size() < 2)
    throw DataError("gen_crm needs at least 2 dialogues for a negative pool");
  auto data = share(corpus);
  auto pool = std::make_shared<std::vector<PoolEntry>>();
  for (std::size_t i = 0; i < data->dialogues.size(); ++i)
    for (std::size_t t = 0; t < data->dialogues[i].utterances.size(); ++t)
      if (data->dialogues[i].utterances[t].speaker == Speaker::kSystem) pool->push_back({i, t});

  auto stats = std::make_shared<GenStats>();
  std::size_t di = 0;
  std::size_t ti = 1;
  return {[=]() mutable -> std::optional<MatchExample> {
            while (di < data->dialogues.size()) {
              const Dialogue& d = data->dialogues[di];
              while (ti < d.utterances.size() && d.utterances[ti].speaker != Speaker::kSystem) ++ti;
              if (ti >= d.utterances.size()) {
                ++di;
                ti = 1;
                continue;
              }
              MatchExample ex;
              ex.dialogue_id = d.id;
              ex.turn = static_cast<int>(ti);
              ex.context.assign(d.utterances.begin(),
                                d.utterances.begin() + static_cast<std::ptrdiff_t>(ti));
              ex.gold_response = d.utterances[ti];
              Rng rng(derive_seed(seed, d.id, kSaltCrm * 1000003ULL + ti));
              std::unordered_set<std::string> chosen;
              auto acceptable = [&](const PoolEntry& e) {
                const std::string& text = data->dialogues[e.dialogue].utterances[e.turn].text;
                return e.dialogue != di && text != ex.gold_response.text && !chosen.count(text);
              };
              const std::size_t max_draws = 64 * static_cast<std::size_t>(k_neg) + 64;
              for (std::size_t draws = 0;
                   draws < max_draws && ex.negatives.size() < static_cast<std::size_t>(k_neg);
                   ++draws) {
                const PoolEntry& e = (*pool)[uniform_index(rng, pool->size())];
                if (!acceptable(e)) continue;
                const Utterance& u = data->dialogues[e.dialogue].utterances[e.turn];
                chosen.insert(u.text);
                ex.negatives.push_back(u);
              }
              if (ex.negatives.size() < static_cast<std::size_t>(k_neg)) {
                // Rejection sampling stalled: draw from the explicit eligible set.
                std::vector<PoolEntry> eligible;
                for (const auto& e : *pool)
                  if (acceptable(e)) eligible.push_back(e);
                while (ex.negatives.size() < static_cast<std::size_t>(k_neg) && !eligible.empty()) {
                  std::size_t k = uniform_index(rng, eligible.size());
                  const Utterance& u =
                      data->dialogues[eligible[k].dialogue].utterances[eligible[k].turn];
                  chosen.insert(u.text);
                  ex.negatives.push_back(u);
                  std::erase_if(eligible, [&](const PoolEntry& e) { return !acceptable(e); });
                }
                if (ex.negatives.size() < static_cast<std::size_t>(k_neg))
                  throw DataError("gen_crm: negative pool has fewer than k_neg distinct "
                                  "responses for dialogue '" + d.id + "'");
              }
              ++ti;
              return ex;
            }
            return std::nullopt;
          },
          stats};
}

ExampleStream<CoherenceExample> gen_dcv(const Corpus& corpus, double corrupt_fraction,
                                        double replace_prob, std::uint64_t seed) {
  if (!(corrupt_fraction > 0.0 && corrupt_fraction < 1.0))
    throw UsageError("corrupt_fraction must be in (0, 1)");
  if (!(replace_prob > 0.0 && replace_prob <= 1.0))
    throw UsageError("replace_prob must be in (0, 1]");
  if (corpus.dialogues.size() < 2)
    throw DataError("gen_dcv needs at least 2 dialogues for a replacement pool");
  auto data = share(corpus);
  const std::size_t n = data->dialogues.size();

  // Same-role pools so role markers cannot reveal a replacement.
  auto pools = std::make_shared<std::array<std::vector<PoolEntry>, 2>>();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < data->dialogues[i].utterances.size(); ++t)
      (*pools)[static_cast<int>(data->dialogues[i].utterances[t].speaker)].push_back({i, t});

  auto corrupted = std::make_shared<std::vector<bool>>(n, false);
  {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix64(seed ^ (kSaltDcv << 32)));
    shuffle_in_place(order, rng);
    auto k = static_cast<std::size_t>(std::floor(corrupt_fraction * static_cast<double>(n) + 0.5));
    for (std::size_t i = 0; i < k; ++i) (*corrupted)[order[i]] = true;
  }

  auto stats = std::make_shared<GenStats>();
  std::size_t next = 0;
  return {[=]() mutable -> std::optional<CoherenceExample> {
            if (next >= n) return std::nullopt;
            const std::size_t di = next++;
            const Dialogue& d = data->dialogues[di];
            CoherenceExample ex;
            ex.dialogue = d;
            if (!(*corrupted)[di]) return ex;

            Rng rng(derive_seed(seed, d.id, kSaltDcv));
            const std::size_t len = d.utterances.size();
            std::vector<bool> selected(len, false);
            for (std::size_t t = 0; t < len; ++t) selected[t] = uniform01(rng) < replace_prob;
            if (std::none_of(selected.begin(), selected.end(), [](bool b) { return b; }))
              selected[uniform_index(rng, len)] = true;

            auto replacement = [&](std::size_t t) -> std::optional<Utterance> {
              const Utterance& orig = d.utterances[t];
              const auto& pool = (*pools)[static_cast<int>(orig.speaker)];
              auto ok = [&](const PoolEntry& e) {
                return e.dialogue != di &&
                       data->dialogues[e.dialogue].utterances[e.turn].text != orig.text;
              };
              for (int attempt = 0; attempt < 64; ++attempt) {
                const PoolEntry& e = pool[uniform_index(rng, pool.size())];
                if (ok(e)) return data->dialogues[e.dialogue].utterances[e.turn];
              }
              std::vector<PoolEntry> eligible;
              for (const auto& e : pool)
                if (ok(e)) eligible.push_back(e);
              if (eligible.empty()) return std::nullopt;
              const PoolEntry& e = eligible[uniform_index(rng, eligible.size())];
              return data->dialogues[e.dialogue].utterances[e.turn];
            };

            for (std::size_t t = 0; t < len; ++t) {
              if (!selected[t]) continue;
              if (auto r = replacement(t)) {
                ex.dialogue.utterances[t] = *r;
                ex.replaced_indices.push_back(static_cast<int>(t));
              }
            }
            if (ex.replaced_indices.empty())
              throw DataError("gen_dcv: no same-role replacement available for dialogue '" +
                              d.id + "'");
            ex.label = 0;
            return ex;
          },
          stats};
}

ExampleStream<EntityCountExample> gen_enp(const Corpus& corpus, int c_max) {
  if (c_max < 1) throw UsageError("c_max must be at least 1");
  if (corpus.dialogues.empty()) throw DataError("gen_enp: corpus is empty");
  if (!corpus.annotated())
    throw DataError("gen_enp: corpus has unannotated utterances; run annotate_entities first");
  auto stats = std::make_shared<GenStats>();
  auto data = share(corpus);
  std::size_t di = 0;
  std::size_t ti = 0;
  return {[=]() mutable -> std::optional<EntityCountExample> {
            while (di < data->dialogues.size()) {
              const Dialogue& d = data->dialogues[di];
              if (ti < d.utterances.size()) {
                const Utterance& u = d.utterances[ti];
                EntityCountExample ex{d.id, static_cast<int>(ti), u,
                                      std::min(*u.entity_count, c_max)};
                ++ti;
                return ex;
              }
              ++di;
              ti = 0;
            }
            return std::nullopt;
          },
          stats};
}

std::vector<double> position_target(const std::vector<int>& relative_positions) {
  if (relative_positions.empty()) return {};
  double m = *std::max_element(relative_positions.begin(), relative_positions.end());
  std::vector<double> p;
  double z = 0.0;
  for (int r : relative_positions) {
    p.push_back(std::exp(static_cast<double>(r) - m));
    z += p.back();
  }
  for (double& x : p) x /= z;
  return p;
}

ExampleStream<ReorderExample> gen_dur(const Corpus& corpus, int window, std::uint64_t seed) {
  if (window < 2) throw UsageError("window must be at least 2");
  if (corpus.dialogues.empty()) throw DataError("gen_dur: corpus is empty");
  auto stats = std::make_shared<GenStats>();
  auto data = share(corpus);
  std::size_t next = 0;
  return {[=]() mutable -> std::optional<ReorderExample> {
            while (next < data->dialogues.size()) {
              const Dialogue& d = data->dialogues[next++];
              const auto len = static_cast<int>(d.utterances.size());
              if (len < window) {
                ++stats->skipped;
                continue;
              }
              Rng rng(derive_seed(seed, d.id, kSaltDur));
              ReorderExample ex;
              ex.window_start = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(len - window + 1)));
              ex.permutation.resize(static_cast<std::size_t>(window));
              std::iota(ex.permutation.begin(), ex.permutation.end(), 0);
              const std::vector<int> identity = ex.permutation;
              while (ex.permutation == identity) shuffle_in_place(ex.permutation, rng);
              ex.dialogue = d;
              std::vector<int> relative;
              for (int i = 0; i < window; ++i) {
                ex.dialogue.utterances[static_cast<std::size_t>(ex.window_start + i)] =
                    d.utterances[static_cast<std::size_t>(ex.window_start + ex.permutation[static_cast<std::size_t>(i)])];
                relative.push_back(ex.permutation[static_cast<std::size_t>(i)] + 1);
              }
              ex.target_distribution = position_target(relative);
              return ex;
            }
            return std::nullopt;
          },
          stats};
}

json to_json(const MaskedExample& e) {
  return {{"dialogue_id", e.dialogue_id},
          {"tokens", e.tokens},
          {"masked_positions", e.masked_positions},
          {"original_ids", e.original_ids}};
}

json to_json(const SpeakerExample& e) {
  return {{"dialogue_id", e.dialogue_id},
          {"turn", e.turn},
          {"utterance", utterance_json(e.utterance)},
          {"label", e.label}};
}

json to_json(const MatchExample& e) {
  return {{"dialogue_id", e.dialogue_id},
          {"turn", e.turn},
          {"context", utterances_json(e.context)},
          {"gold_response", utterance_json(e.gold_response)},
          {"negatives", utterances_json(e.negatives)}};
}

json to_json(const CoherenceExample& e) {
  return {{"dialogue", dialogue_to_json(e.dialogue)},
          {"label", e.label},
          {"replaced_indices", e.replaced_indices}};
}

json to_json(const EntityCountExample& e) {
  return {{"dialogue_id", e.dialogue_id},
          {"turn", e.turn},
          {"utterance", utterance_json(e.utterance)},
          {"count_class", e.count_class}};
}

json to_json(const ReorderExample& e) {
  return {{"dialogue", dialogue_to_json(e.dialogue)},
          {"window_start", e.window_start},
          {"permutation", e.permutation},
          {"target_distribution", e.target_distribution}};
}

MaskedExample masked_from_json(const json& j) {
  MaskedExample e;
  e.dialogue_id = j.value("dialogue_id", "");
  e.tokens = j.at("tokens").get<std::vector<TokenId>>();
  e.masked_positions = j.at("masked_positions").get<std::vector<int>>();
  e.original_ids = j.at("original_ids").get<std::vector<TokenId>>();
  return e;
}

SpeakerExample speaker_from_json(const json& j) {
  return {j.value("dialogue_id", ""), j.value("turn", 0), utterance_from(j.at("utterance")),
          j.at("label").get<int>()};
}

MatchExample match_from_json(const json& j) {
  MatchExample e;
  e.dialogue_id = j.value("dialogue_id", "");
  e.turn = j.value("turn", 0);
  e.context = utterances_from(j.at("context"));
  e.gold_response = utterance_from(j.at("gold_response"));
  e.negatives = utterances_from(j.at("negatives"));
  return e;
}

CoherenceExample coherence_from_json(const json& j) {
  CoherenceExample e;
  e.dialogue = dialogue_from_json(j.at("dialogue"));
  e.label = j.at("label").get<int>();
  e.replaced_indices = j.at("replaced_indices").get<std::vector<int>>();
  return e;
}

EntityCountExample entity_count_from_json(const json& j) {
  return {j.value("dialogue_id", ""), j.value("turn", 0), utterance_from(j.at("utterance")),
          j.at("count_class").get<int>()};
}

ReorderExample reorder_from_json(const json& j) {
  ReorderExample e;
  e.dialogue = dialogue_from_json(j.at("dialogue"));
  e.window_start = j.at("window_start").get<int>();
  e.permutation = j.at("permutation").get<std::vector<int>>();
  e.target_distribution = j.at("target_distribution").get<std::vector<double>>();
  return e;
}

}  // namespace todpt

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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/corpus.hpp"

namespace todpt {

enum class PretrainTask { kMlm, kDsp, kCrm, kDcv, kEnp, kDur };
enum class DownstreamTask { kInt, kDa, kRs, kDst };

std::string_view to_string(PretrainTask t);
std::string_view to_string(DownstreamTask t);
PretrainTask parse_pretrain_task(std::string_view s);  // case-insensitive
DownstreamTask parse_downstream_task(std::string_view s);
std::vector<PretrainTask> parse_pretrain_tasks(std::string_view comma_list);

// Intent recognition: one utterance, one label.
struct IntentExample {
  std::string text;
  int label = 0;
};

// Dialogue-act prediction: dialogue history, set of act labels.
struct ActExample {
  std::vector<Utterance> history;
  std::vector<int> acts;  // sorted, unique
};

// Response selection: dialogue history and the gold next system response.
struct ResponseExample {
  std::vector<Utterance> history;
  std::string response;
};

// Dialogue state tracking: history and a value for every (domain, slot) pair.
struct StateExample {
  std::vector<Utterance> history;
  std::map<std::string, std::string> state;
};

// Ordered (domain-slot) -> candidate values.
struct Ontology {
  std::vector<std::string> pairs;
  std::vector<std::vector<std::string>> values;

  std::size_t size() const { return pairs.size(); }
  int pair_index(std::string_view pair) const;
  int value_index(std::size_t pair, std::string_view value) const;

  static Ontology from_json(const nlohmann::json& j);
  static Ontology load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct LabelSet {
  std::vector<std::string> labels;
  std::optional<std::string> oos_label;  // intent datasets only

  int index(std::string_view label) const;  // -1 if unknown
  std::optional<int> oos_index() const;

  static LabelSet load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// A downstream dataset directory:
//   train.jsonl valid.jsonl test.jsonl
//   labels.json   (INT, DA)   {"labels": [...], "oos_label": "oos"?}
//   ontology.json (DST)       {"domain-slot": [values...]}
// Record shapes:
//   INT {"text": str, "intent": str}
//   DA  {"history": [turn], "acts": [str]}
//   RS  {"history": [turn], "response": str}
//   DST {"history": [turn], "state": {"domain-slot": value}}
// where turn = {"speaker": "USER"|"SYSTEM", "text": str}.
struct DownstreamData {
  DownstreamTask task = DownstreamTask::kInt;
  std::string name;
  LabelSet labels;
  Ontology ontology;

  std::vector<IntentExample> intents[3];
  std::vector<ActExample> acts[3];
  std::vector<ResponseExample> responses[3];
  std::vector<StateExample> states[3];

  std::size_t size(Split s) const;
  std::uint64_t content_hash() const;
};

DownstreamData load_downstream(DownstreamTask task, const std::filesystem::path& dir);
// Writes the directory layout load_downstream reads.
void save_downstream(const DownstreamData& data, const std::filesystem::path& dir);

IntentExample intent_from_json(const nlohmann::json& j, const LabelSet& labels);
ActExample act_from_json(const nlohmann::json& j, const LabelSet& labels);
ResponseExample response_from_json(const nlohmann::json& j);
StateExample state_from_json(const nlohmann::json& j, const Ontology& ontology);

nlohmann::json to_json(const IntentExample& e, const LabelSet& labels);
nlohmann::json to_json(const ActExample& e, const LabelSet& labels);
nlohmann::json to_json(const ResponseExample& e);
nlohmann::json to_json(const StateExample& e);

}  // namespace todpt

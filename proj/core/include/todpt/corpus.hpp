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

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/common.hpp"

namespace todpt {

enum class Speaker { kUser = 0, kSystem = 1 };
enum class Split { kTrain, kValid, kTest };

std::string_view to_string(Speaker s);
Speaker parse_speaker(std::string_view s);
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Utterance {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::optional<int> entity_count;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
  std::string id;
  std::optional<std::string> domain;
  std::vector<Utterance> utterances;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

struct Corpus {
  std::string name;
  std::vector<Dialogue> dialogues;
  Split split = Split::kTrain;

  std::size_t utterance_count() const;
  bool annotated() const;
};

// Throws DataError when an invariant does not hold.
void validate(const Utterance& u);
void validate(const Dialogue& d);
void validate(const Corpus& c);

// Canonical JSONL record <-> Dialogue.
Dialogue dialogue_from_json(const nlohmann::json& j);
nlohmann::json dialogue_to_json(const Dialogue& d);

Corpus load_corpus(const std::filesystem::path& path, Split split);
Corpus parse_corpus(std::istream& in, std::string name, Split split);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, std::ostream& out);

// Stable content hash over ids, speakers, texts and annotations.
std::uint64_t corpus_hash(const Corpus& corpus);

struct EntitySpan {
  std::size_t begin = 0;  // byte offsets into the text, [begin, end)
  std::size_t end = 0;

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

class EntityAnnotator {
 public:
  virtual ~EntityAnnotator() = default;
  virtual std::string name() const = 0;
  virtual std::vector<EntitySpan> annotate(std::string_view text) const = 0;
};

// Maximal runs of capitalized tokens plus standalone digit tokens, one entity
// per run. A lone capitalized stopword at the start of a sentence ("The",
// "I", "Please") is not an entity.
class RuleBasedAnnotator final : public EntityAnnotator {
 public:
  std::string name() const override { return "rule-based"; }
  std::vector<EntitySpan> annotate(std::string_view text) const override;
};

Corpus annotate_entities(const Corpus& corpus, const EntityAnnotator& annotator);

struct SplitRatios {
  double train = 0.9;
  double valid = 0.05;
  double test = 0.05;
};

struct CorpusSplits {
  Corpus train;
  Corpus valid;
  Corpus test;
};

CorpusSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed);

// Adapter for MultiWOZ-style dumps: a JSON object keyed by dialogue id whose
// values carry a "log" array of {"text": ...} turns alternating user/system.
Corpus import_multiwoz(const std::filesystem::path& path, std::string name);

}  // namespace todpt

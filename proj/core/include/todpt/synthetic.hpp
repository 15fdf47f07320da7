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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "todpt/corpus.hpp"
#include "todpt/downstream.hpp"

namespace todpt {

// Templated restaurant / hotel / taxi conversations for fixtures, smoke
// tests and benchmarks. Every generator is a pure function of its seed.

struct SyntheticTurn {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::vector<std::string> acts;             // system turns only
  std::map<std::string, std::string> state;  // belief state after this turn
};

std::vector<SyntheticTurn> synthetic_dialogue(Rng& rng);

// Unannotated corpus of `dialogues` dialogues with ids "syn-<seed>-<i>".
Corpus synthetic_corpus(std::size_t dialogues, std::uint64_t seed,
                        const std::string& name = "synthetic");

struct SyntheticSizes {
  std::size_t train = 200;
  std::size_t valid = 40;
  std::size_t test = 40;
};

// Label inventories and ontology used by the synthetic datasets.
const std::vector<std::string>& synthetic_intents();  // last entry is "oos"
const std::vector<std::string>& synthetic_acts();
Ontology synthetic_ontology();

DownstreamData synthetic_downstream(DownstreamTask task, const SyntheticSizes& sizes,
                                    std::uint64_t seed, const std::string& name = "");

struct FixtureOptions {
  std::uint64_t seed = 7;
  std::size_t dialogues = 120;
  SyntheticSizes sizes = {64, 16, 32};
  int dim = 16;
  int layers = 2;
  int max_len = 64;
  int pretrain_steps = 120;
  int finetune_steps = 80;
  int batch_size = 8;
  std::vector<std::uint64_t> seeds = {1, 2};
  // Row names, or empty for the full standard set.
  std::vector<std::string> pretrain_rows;
  // Task ids, or empty for all four.
  std::vector<std::string> tasks;
};

// Writes corpus.jsonl, one dataset directory per downstream task
// ("syn-int", ...) and spec.json, an experiment spec over them with
// output_dir "runs". Returns a short JSON summary.
nlohmann::json write_synthetic_fixtures(const std::filesystem::path& dir, const FixtureOptions& opts = {});

}  // namespace todpt

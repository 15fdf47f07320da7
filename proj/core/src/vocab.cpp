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

#include "todpt/vocab.hpp"

#include <algorithm>
#include <fstream>

namespace todpt {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"[PAD]", "[CLS]", "[SEP]", "[MASK]",
                                             "[USR]", "[SYS]", "[UNK]"};
  return r;
}

std::vector<std::string> word_tokens(std::string_view text) {
  auto toks = split_whitespace(text);
  for (auto& t : toks) t = to_lower(t);
  return toks;
}

Vocabulary::Vocabulary() {
  for (const auto& t : reserved_tokens()) add(t);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  const auto& r = reserved_tokens();
  if (tokens.size() < r.size() || !std::equal(r.begin(), r.end(), tokens.begin()))
    throw DataError("vocabulary must start with the reserved tokens in canonical order");
  for (const auto& t : tokens) {
    if (index_.count(t)) throw DataError("duplicate vocabulary token '" + t + "'");
    add(t);
  }
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DataError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& text : texts)
    for (auto& w : word_tokens(text)) ++counts[w];
  std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [w, c] : items)
    if (c >= min_count) v.add(w);
  return v;
}

Vocabulary Vocabulary::build(const Corpus& corpus, int min_count) {
  std::vector<std::string> texts;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) texts.push_back(u.text);
  return build(texts, min_count);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) toks.push_back(line);
  }
  return Vocabulary(toks);
}

}  // namespace todpt

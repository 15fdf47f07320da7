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
#include <string_view>
#include <unordered_map>
#include <vector>

#include "todpt/corpus.hpp"

namespace todpt {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kUsr = 4;
inline constexpr TokenId kSys = 5;
inline constexpr TokenId kUnk = 6;
inline constexpr TokenId kCount = 7;
}  // namespace special

// Dense token <-> id map. Ids 0..6 are the reserved markers, in the order
// [PAD] [CLS] [SEP] [MASK] [USR] [SYS] [UNK].
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId add(std::string_view token);

  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }
  static TokenId role_marker(Speaker s) {
    return s == Speaker::kUser ? special::kUsr : special::kSys;
  }

  // Corpus-built vocabulary over lowercased whitespace tokens, ordered by
  // descending frequency then lexicographically.
  static Vocabulary build(const std::vector<std::string>& texts, int min_count = 1);
  static Vocabulary build(const Corpus& corpus, int min_count = 1);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

const std::vector<std::string>& reserved_tokens();

// Lowercased whitespace tokens, the reference tokenizer's word split.
std::vector<std::string> word_tokens(std::string_view text);

}  // namespace todpt

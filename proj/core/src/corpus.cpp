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

#include "todpt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace todpt {

using nlohmann::json;

std::string_view to_string(Speaker s) {
  return s == Speaker::kUser ? "USER" : "SYSTEM";
}

Speaker parse_speaker(std::string_view s) {
  if (s == "USER") return Speaker::kUser;
  if (s == "SYSTEM") return Speaker::kSystem;
  throw DataError("unknown speaker role '" + std::string(s) +
                  "' (expected USER or SYSTEM)");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid" || s == "validation" || s == "dev") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw UsageError("unknown split '" + std::string(s) + "'");
}

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogues) n += d.utterances.size();
  return n;
}

bool Corpus::annotated() const {
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances)
      if (!u.entity_count) return false;
  return true;
}

void validate(const Utterance& u) {
  if (trim(u.text).empty()) throw DataError("utterance text is empty");
  if (u.entity_count && *u.entity_count < 0)
    throw DataError("entity_count must be non-negative");
}

void validate(const Dialogue& d) {
  if (d.id.empty()) throw DataError("dialogue id is empty");
  if (d.utterances.size() < 2)
    throw DataError("dialogue '" + d.id + "' has fewer than 2 utterances");
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    try {
      validate(d.utterances[i]);
    } catch (const DataError& e) {
      throw DataError("dialogue '" + d.id + "' turn " + std::to_string(i) +
                      ": " + e.what());
    }
  }
}

void validate(const Corpus& c) {
  if (c.dialogues.empty()) throw DataError("corpus '" + c.name + "' is empty");
  std::unordered_set<std::string> ids;
  for (const auto& d : c.dialogues) {
    validate(d);
    if (!ids.insert(d.id).second)
      throw DataError("duplicate dialogue id '" + d.id + "'");
  }
}

Dialogue dialogue_from_json(const json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  Dialogue d;
  auto id = j.find("id");
  if (id == j.end() || !id->is_string())
    throw DataError("missing or non-string field 'id'");
  d.id = id->get<std::string>();
  if (auto dom = j.find("domain"); dom != j.end() && !dom->is_null()) {
    if (!dom->is_string()) throw DataError("field 'domain' must be string or null");
    d.domain = dom->get<std::string>();
  }
  auto turns = j.find("turns");
  if (turns == j.end() || !turns->is_array())
    throw DataError("missing or non-array field 'turns'");
  for (std::size_t i = 0; i < turns->size(); ++i) {
    const json& t = (*turns)[i];
    if (!t.is_object()) throw DataError("turn " + std::to_string(i) + " is not an object");
    Utterance u;
    auto sp = t.find("speaker");
    if (sp == t.end() || !sp->is_string())
      throw DataError("turn " + std::to_string(i) + ": missing field 'speaker'");
    u.speaker = parse_speaker(sp->get<std::string>());
    auto tx = t.find("text");
    if (tx == t.end() || !tx->is_string())
      throw DataError("turn " + std::to_string(i) + ": missing field 'text'");
    u.text = tx->get<std::string>();
    if (auto ec = t.find("entity_count"); ec != t.end() && !ec->is_null()) {
      if (!ec->is_number_integer())
        throw DataError("turn " + std::to_string(i) + ": entity_count must be an integer");
      u.entity_count = ec->get<int>();
    }
    d.utterances.push_back(std::move(u));
  }
  validate(d);
  return d;
}

json dialogue_to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& u : d.utterances) {
    json t = {{"speaker", to_string(u.speaker)}, {"text", u.text}};
    if (u.entity_count) t["entity_count"] = *u.entity_count;
    turns.push_back(std::move(t));
  }
  json j;
  j["id"] = d.id;
  j["domain"] = d.domain ? json(*d.domain) : json(nullptr);
  j["turns"] = std::move(turns);
  return j;
}

Corpus parse_corpus(std::istream& in, std::string name, Split split) {
  Corpus c;
  c.name = std::move(name);
  c.split = split;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      Dialogue d = dialogue_from_json(j);
      if (!ids.insert(d.id).second)
        throw DataError("duplicate dialogue id '" + d.id + "'");
      c.dialogues.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw DataError(c.name + ": line " + std::to_string(lineno) +
                      ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(c.name + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (c.dialogues.empty()) throw DataError(c.name + ": corpus file has no records");
  return c;
}

Corpus load_corpus(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  return parse_corpus(in, path.stem().string(), split);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.dialogues) out << dialogue_to_json(d).dump() << '\n';
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_corpus(corpus, out);
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  std::uint64_t h = fnv1a(corpus.name);
  for (const auto& d : corpus.dialogues) {
    h = fnv1a(d.id, h);
    h = fnv1a(d.domain.value_or("\x01"), h);
    for (const auto& u : d.utterances) {
      h = fnv1a(to_string(u.speaker), h);
      h = fnv1a(u.text, h);
      h = fnv1a(u.entity_count ? std::to_string(*u.entity_count) : "-", h);
    }
    h = mix64(h);
  }
  return h;
}

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",      "an",     "the",    "i",      "i'm",    "i'd",    "i'll",
      "i've",   "we",     "you",    "he",     "she",    "it",     "they",
      "my",     "our",    "your",   "this",   "that",   "these",  "those",
      "is",     "are",    "was",    "were",   "be",     "do",     "does",
      "did",    "can",    "could",  "would",  "will",   "shall",  "should",
      "may",    "might",  "what",   "where",  "when",   "which",  "who",
      "how",    "why",    "yes",    "no",     "ok",     "okay",   "sure",
      "hi",     "hello",  "hey",    "thanks", "thank",  "please", "and",
      "or",     "but",    "so",     "there",  "here",   "in",     "on",
      "at",     "for",    "to",     "of",     "with",   "from",   "by",
      "great",  "good",   "perfect", "alright", "well",  "also",  "any",
      "is",     "let",    "let's",  "have",   "has",    "just",   "not"};
  return words;
}

bool is_pronoun_i(const std::string& lower) {
  return lower == "i" || lower == "i'm" || lower == "i'd" || lower == "i'll" ||
         lower == "i've";
}

struct RawToken {
  std::size_t begin;  // core span, punctuation stripped
  std::size_t end;
  bool ends_sentence;  // token followed by . ! or ?
  bool ends_clause;    // any trailing punctuation breaks a run
};

std::vector<RawToken> raw_tokens(std::string_view text) {
  std::vector<RawToken> out;
  std::size_t i = 0;
  auto is_edge_punct = [](unsigned char c) {
    return std::ispunct(c) && c != '\'' && c != '&' && c != '-';
  };
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && is_edge_punct(static_cast<unsigned char>(text[b]))) ++b;
    bool sentence = false;
    bool clause = false;
    while (e > b && is_edge_punct(static_cast<unsigned char>(text[e - 1]))) {
      char c = text[e - 1];
      if (c == '.' || c == '!' || c == '?') sentence = true;
      clause = true;
      --e;
    }
    if (e > b) out.push_back({b, e, sentence, clause});
    i = j;
  }
  return out;
}

}  // namespace

std::vector<EntitySpan> RuleBasedAnnotator::annotate(std::string_view text) const {
  std::vector<RawToken> toks = raw_tokens(text);
  std::vector<EntitySpan> spans;
  bool sentence_start = true;
  std::size_t i = 0;
  while (i < toks.size()) {
    const RawToken& t = toks[i];
    std::string_view word = text.substr(t.begin, t.end - t.begin);
    bool digits = std::all_of(word.begin(), word.end(),
                              [](unsigned char c) { return std::isdigit(c); });
    if (digits) {
      spans.push_back({t.begin, t.end});
      sentence_start = t.ends_sentence;
      ++i;
      continue;
    }
    auto capitalized = [&](const RawToken& r) {
      std::string_view w = text.substr(r.begin, r.end - r.begin);
      return std::isupper(static_cast<unsigned char>(w.front())) &&
             !is_pronoun_i(to_lower(w));
    };
    if (!capitalized(t)) {
      sentence_start = t.ends_sentence;
      ++i;
      continue;
    }
    // Extend a maximal run of capitalized, non-digit tokens.
    std::size_t j = i;
    while (true) {
      const RawToken& cur = toks[j];
      if (cur.ends_clause || j + 1 >= toks.size() || !capitalized(toks[j + 1])) break;
      ++j;
    }
    bool lone_stopword = (j == i) && sentence_start &&
                         stopwords().count(to_lower(word)) > 0;
    if (!lone_stopword) spans.push_back({toks[i].begin, toks[j].end});
    sentence_start = toks[j].ends_sentence;
    i = j + 1;
  }
  return spans;
}

Corpus annotate_entities(const Corpus& corpus, const EntityAnnotator& annotator) {
  Corpus out = corpus;
  for (auto& d : out.dialogues) {
    for (std::size_t t = 0; t < d.utterances.size(); ++t) {
      auto& u = d.utterances[t];
      try {
        auto spans = annotator.annotate(u.text);
        std::size_t prev_end = 0;
        for (const auto& s : spans) {
          if (s.begin >= s.end || s.end > u.text.size() || s.begin < prev_end)
            throw Error("annotator '" + annotator.name() +
                        "' returned an invalid or overlapping span");
          prev_end = s.end;
        }
        u.entity_count = static_cast<int>(spans.size());
      } catch (const std::exception& e) {
        throw DataError("annotation failed for dialogue '" + d.id + "' turn " +
                        std::to_string(t) + ": " + e.what());
      }
    }
  }
  return out;
}

CorpusSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.valid, ratios.test};
  for (double x : r)
    if (!(x > 0.0)) throw UsageError("split ratios must be positive");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw UsageError("split ratios must sum to 1");

  const std::size_t n = corpus.dialogues.size();
  // Largest-remainder apportionment.
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double exact = r[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (frac[k] > frac[best] + 1e-12) best = k;
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  if (n >= 3) {
    for (int k = 0; k < 3; ++k)
      if (sizes[k] == 0)
        throw UsageError("split ratios leave the " +
                         std::string(to_string(static_cast<Split>(k))) +
                         " split empty");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix64(seed ^ 0x5b1175eedULL));
  shuffle_in_place(order, rng);

  CorpusSplits out;
  Corpus* parts[3] = {&out.train, &out.valid, &out.test};
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    parts[k]->name = corpus.name;
    parts[k]->split = static_cast<Split>(k);
    std::vector<std::size_t> idx(order.begin() + pos, order.begin() + pos + sizes[k]);
    std::sort(idx.begin(), idx.end());  // keep source order within a split
    for (std::size_t i : idx) parts[k]->dialogues.push_back(corpus.dialogues[i]);
    pos += sizes[k];
  }
  return out;
}

Corpus import_multiwoz(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!root.is_object()) throw DataError(path.string() + ": expected an object keyed by dialogue id");
  Corpus c;
  c.name = std::move(name);
  for (auto it = root.begin(); it != root.end(); ++it) {
    const json& rec = it.value();
    auto log = rec.find("log");
    if (log == rec.end() || !log->is_array())
      throw DataError("dialogue '" + it.key() + "': missing 'log' array");
    Dialogue d;
    d.id = it.key();
    if (auto dom = rec.find("domain"); dom != rec.end() && dom->is_string())
      d.domain = dom->get<std::string>();
    for (std::size_t i = 0; i < log->size(); ++i) {
      const json& turn = (*log)[i];
      auto text = turn.find("text");
      if (text == turn.end() || !text->is_string())
        throw DataError("dialogue '" + it.key() + "' turn " + std::to_string(i) +
                        ": missing 'text'");
      d.utterances.push_back(
          {i % 2 == 0 ? Speaker::kUser : Speaker::kSystem, text->get<std::string>(), {}});
    }
    validate(d);
    c.dialogues.push_back(std::move(d));
  }
  validate(c);
  return c;
}

}  // namespace todpt

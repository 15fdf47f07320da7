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

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "todpt/corpus.hpp"

using namespace todpt;
using namespace todpt::testing;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in, "mem", Split::kTrain);
}

const char* kTwo =
    R"({"id":"d1","turns":[{"speaker":"USER","text":"hi"},{"speaker":"SYSTEM","text":"hello"}]})"
    "\n"
    R"({"id":"d2","domain":"taxi","turns":[{"speaker":"USER","text":"taxi please"},{"speaker":"SYSTEM","text":"where to ?","entity_count":0}]})"
    "\n";

}  // namespace

TEST_CASE("two valid records parse into two dialogues") {
  Corpus c = parse(kTwo);
  REQUIRE(c.dialogues.size() == 2);
  CHECK(c.dialogues[0].id == "d1");
  CHECK_FALSE(c.dialogues[0].domain.has_value());
  CHECK(*c.dialogues[1].domain == "taxi");
  CHECK(c.dialogues[1].utterances[1].entity_count == 0);
  CHECK(c.utterance_count() == 4);
  CHECK_FALSE(c.annotated());
}

TEST_CASE("blank lines are ignored") {
  Corpus c = parse(std::string("\n") + kTwo + "\n\n");
  CHECK(c.dialogues.size() == 2);
}

TEST_CASE("empty utterance text is a schema error naming the line") {
  std::string bad = std::string(kTwo) +
                    R"({"id":"d3","turns":[{"speaker":"USER","text":""},{"speaker":"SYSTEM","text":"x"}]})" + "\n";
  try {
    parse(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("malformed input is rejected") {
  CHECK_THROWS_AS(parse("{not json}\n"), DataError);
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(parse(R"({"id":"a","turns":[{"speaker":"USER","text":"only one"}]})"), DataError);
  CHECK_THROWS_AS(parse(R"({"id":"a","turns":[{"speaker":"BOT","text":"x"},{"speaker":"USER","text":"y"}]})"),
                  DataError);
  CHECK_THROWS_AS(parse(R"({"turns":[{"speaker":"USER","text":"x"},{"speaker":"SYSTEM","text":"y"}]})"), DataError);
  CHECK_THROWS_AS(parse(std::string(kTwo) + kTwo), DataError);  // duplicate ids
  CHECK_THROWS_AS(
      parse(R"({"id":"a","turns":[{"speaker":"USER","text":"x","entity_count":-1},{"speaker":"SYSTEM","text":"y"}]})"),
      DataError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl", Split::kTrain), DataError);
}

TEST_CASE("fixture corpus has 50 dialogues and 412 utterances") {
  Corpus c = load_fixture_corpus();
  CHECK(c.dialogues.size() == 50);
  CHECK(c.utterance_count() == 412);
}

TEST_CASE("save and load round-trip preserves content and hash") {
  TempDir tmp;
  Corpus c = annotate_entities(load_fixture_corpus(), RuleBasedAnnotator{});
  save_corpus(c, tmp / "c.jsonl");
  Corpus back = load_corpus(tmp / "c.jsonl", Split::kTrain);
  back.name = c.name;
  CHECK(back.dialogues == c.dialogues);
  CHECK(corpus_hash(back) == corpus_hash(c));
  Corpus changed = c;
  changed.dialogues[3].utterances[1].text += " x";
  CHECK(corpus_hash(changed) != corpus_hash(c));
}

TEST_CASE("rule-based annotator") {
  RuleBasedAnnotator a;
  // Golden Wok | Cambridge | 3
  CHECK(a.annotate("book Golden Wok in Cambridge for 3").size() == 3);
  CHECK(a.annotate("ok").empty());
  CHECK(a.annotate("The hotel is nice .").empty());
  CHECK(a.annotate("I need a room").empty());
  CHECK(a.annotate("Please book it").empty());
  CHECK(a.annotate("Cambridge Lodge , please").size() == 1);
  CHECK(a.annotate("from Ely to Norwich at 10:15").size() == 2);
  auto spans = a.annotate("go to Kings College now");
  REQUIRE(spans.size() == 1);
  CHECK(std::string("go to Kings College now").substr(spans[0].begin, spans[0].end - spans[0].begin) ==
        "Kings College");
}

TEST_CASE("annotation sets counts and is idempotent") {
  Corpus c;
  c.name = "t";
  c.dialogues.push_back(dialogue("a", {"book Golden Wok in Cambridge for 3", "ok"}));
  Corpus once = annotate_entities(c, RuleBasedAnnotator{});
  CHECK(once.annotated());
  CHECK(once.dialogues[0].utterances[0].entity_count == 3);
  CHECK(once.dialogues[0].utterances[1].entity_count == 0);
  Corpus twice = annotate_entities(once, RuleBasedAnnotator{});
  CHECK(twice.dialogues == once.dialogues);
}

namespace {
struct Broken final : EntityAnnotator {
  std::string name() const override { return "broken"; }
  std::vector<EntitySpan> annotate(std::string_view text) const override {
    if (text == "boom") throw std::runtime_error("boom");
    return {};
  }
};
}  // namespace

TEST_CASE("annotator failure names the dialogue and turn") {
  Corpus c;
  c.dialogues.push_back(dialogue("zz", {"fine", "boom"}));
  try {
    annotate_entities(c, Broken{});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    std::string msg = e.what();
    CHECK(msg.find("'zz'") != std::string::npos);
    CHECK(msg.find("turn 1") != std::string::npos);
  }
}

TEST_CASE("split_corpus") {
  Corpus c;
  for (int i = 0; i < 10; ++i) c.dialogues.push_back(dialogue("d" + std::to_string(i), {"a", "b"}));
  auto s = split_corpus(c, {0.8, 0.1, 0.1}, 7);
  CHECK(s.train.dialogues.size() == 8);
  CHECK(s.valid.dialogues.size() == 1);
  CHECK(s.test.dialogues.size() == 1);
  auto again = split_corpus(c, {0.8, 0.1, 0.1}, 7);
  CHECK(again.train.dialogues == s.train.dialogues);
  CHECK(again.test.dialogues == s.test.dialogues);

  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.valid, &s.test})
    for (const auto& d : part->dialogues) ids.insert(d.id);
  CHECK(ids.size() == 10);

  CHECK_THROWS_AS(split_corpus(c, {0.5, 0.5, 0.2}, 7), UsageError);
  CHECK_THROWS_AS(split_corpus(c, {1.0, 0.0, 0.0}, 7), UsageError);
  CHECK_THROWS_AS(split_corpus(c, {0.98, 0.01, 0.01}, 7), UsageError);  // valid would be empty
}

TEST_CASE("split sizes sum to the corpus size for many ratios") {
  Corpus c;
  for (int n = 0; n < 40; ++n) {
    c.dialogues.push_back(dialogue("d" + std::to_string(n), {"a", "b"}));
    if (c.dialogues.size() < 4) continue;
    auto s = split_corpus(c, {0.6, 0.2, 0.2}, static_cast<std::uint64_t>(n));
    CHECK(s.train.dialogues.size() + s.valid.dialogues.size() + s.test.dialogues.size() == c.dialogues.size());
  }
}

TEST_CASE("MultiWOZ-style import alternates roles") {
  TempDir tmp;
  std::ofstream(tmp / "mw.json")
      << R"({"SNG01.json":{"log":[{"text":"i need a train"},{"text":"where to ?"},{"text":"Ely"}]},)"
      << R"("PMUL2.json":{"log":[{"text":"a hotel"},{"text":"which area ?"}]}})";
  Corpus c = import_multiwoz(tmp / "mw.json", "mw");
  REQUIRE(c.dialogues.size() == 2);
  const Dialogue& d = c.dialogues[0].id == "SNG01.json" ? c.dialogues[0] : c.dialogues[1];
  REQUIRE(d.utterances.size() == 3);
  CHECK(d.utterances[0].speaker == Speaker::kUser);
  CHECK(d.utterances[1].speaker == Speaker::kSystem);
  CHECK(d.utterances[2].text == "Ely");
  std::ofstream(tmp / "bad.json") << R"({"x":{"turns":[]}})";
  CHECK_THROWS_AS(import_multiwoz(tmp / "bad.json", "bad"), DataError);
}

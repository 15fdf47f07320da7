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

#include "helpers.hpp"
#include "todpt/encoder.hpp"
#include "todpt/vocab.hpp"

using namespace todpt;
using namespace todpt::testing;

TEST_CASE("reserved ids") {
  Vocabulary v;
  CHECK(v.size() == 7);
  CHECK(v.id("[PAD]") == special::kPad);
  CHECK(v.id("[CLS]") == special::kCls);
  CHECK(v.id("[SEP]") == special::kSep);
  CHECK(v.id("[MASK]") == special::kMask);
  CHECK(v.id("[USR]") == special::kUsr);
  CHECK(v.id("[SYS]") == special::kSys);
  CHECK(v.id("[UNK]") == special::kUnk);
  CHECK(v.id("never-seen") == special::kUnk);
  CHECK(Vocabulary::role_marker(Speaker::kUser) == special::kUsr);
  CHECK(Vocabulary::role_marker(Speaker::kSystem) == special::kSys);
  CHECK_THROWS_AS(v.token(99), DataError);
}

TEST_CASE("build orders by frequency and honours min_count") {
  Vocabulary v = Vocabulary::build(std::vector<std::string>{"b a a", "A c"}, 1);
  CHECK(v.token(7) == "a");  // 3 occurrences after lower-casing
  CHECK(v.size() == 10);
  Vocabulary cut = Vocabulary::build(std::vector<std::string>{"b a a", "A c"}, 2);
  CHECK(cut.size() == 8);
  CHECK(cut.id("b") == special::kUnk);
}

TEST_CASE("vocabulary save/load round trip and validation") {
  TempDir tmp;
  Vocabulary v = Vocabulary::build(load_fixture_corpus());
  v.save(tmp / "vocab.txt");
  CHECK(Vocabulary::load(tmp / "vocab.txt") == v);
  CHECK_THROWS_AS(Vocabulary(std::vector<std::string>{"a", "b"}), DataError);
}

TEST_CASE("single utterance tokenization") {
  Vocabulary v = Vocabulary::build(std::vector<std::string>{"hello there"});
  auto seq = tokenize_text("hello there", v);
  REQUIRE(seq.size() == 4);
  CHECK(seq.ids[0] == special::kCls);
  CHECK(v.token(seq.ids[1]) == "hello");
  CHECK(v.token(seq.ids[2]) == "there");
  CHECK(seq.ids[3] == special::kSep);
  CHECK(seq.markers.empty());

  std::string long_text;
  for (int i = 0; i < 600; ++i) long_text += "w ";
  auto cut = tokenize_text(long_text, v, 512);
  CHECK(cut.size() == 512);
  CHECK(cut.ids.front() == special::kCls);
  CHECK(cut.ids.back() == special::kSep);
}

TEST_CASE("dialogue flattening and markers") {
  Vocabulary v;
  Dialogue d = dialogue("d", {"hi there", "hello"});
  auto seq = tokenize_dialogue(d, v);
  CHECK(seq.marker_positions(Speaker::kUser) == std::vector<int>{1});
  CHECK(seq.marker_positions(Speaker::kSystem) == std::vector<int>{4});
  CHECK(seq.ids[1] == special::kUsr);
  CHECK(seq.ids[4] == special::kSys);
  CHECK(seq.size() == 7);

  Dialogue three = dialogue("d", {"a", "b c", "d"});
  auto s3 = tokenize_dialogue(three, v);
  CHECK(s3.markers.size() == 3);
  CHECK(s3.dropped_turns == 0);
}

TEST_CASE("truncation drops oldest turns and keeps the final turn whole") {
  Vocabulary v;
  Dialogue d = dialogue("d", {"one two three four", "five six", "seven eight nine", "ten eleven"});
  // full length: 2 + (1+4) + (1+2) + (1+3) + (1+2) = 17
  CHECK(tokenize_dialogue(d, v, 17).dropped_turns == 0);
  auto seq = tokenize_dialogue(d, v, 12);
  CHECK(seq.dropped_turns == 1);
  CHECK(seq.markers.size() == 3);
  CHECK(seq.size() <= 12);
  CHECK(seq.markers.back().turn == 3);
  CHECK(seq.marker_for_turn(0) == -1);
  CHECK(seq.ids[static_cast<std::size_t>(seq.markers.back().position)] == special::kSys);
  auto tight = tokenize_dialogue(d, v, 5);
  CHECK(tight.markers.size() == 1);
  CHECK(tight.size() == 5);
  CHECK_THROWS_AS(tokenize_dialogue(d, v, 4), DataError);
}

TEST_CASE("marker count equals turn count without truncation") {
  Corpus c = load_fixture_corpus();
  Vocabulary v = Vocabulary::build(c);
  for (const auto& d : c.dialogues) {
    auto seq = tokenize_dialogue(d, v);
    REQUIRE(seq.dropped_turns == 0);
    CHECK(seq.markers.size() == d.utterances.size());
  }
}

TEST_CASE("reference encoder forward") {
  Corpus c = load_fixture_corpus();
  Vocabulary v = Vocabulary::build(c);
  ag::ParameterStore store;
  EncoderConfig cfg = tiny_encoder();
  ReferenceEncoder::initialize(cfg, v.size(), store, 3);
  ReferenceEncoder enc(cfg, v, store);
  const Dialogue& d = c.dialogues[0];
  auto seq = enc.tokenize(std::span<const Utterance>(d.utterances.data(), 3));
  EncoderOutput a = enc.encode(seq);
  EncoderOutput b = enc.encode(seq);
  CHECK(a.token_vectors.rows() == static_cast<Eigen::Index>(seq.size()));
  CHECK(a.token_vectors.cols() == 16);
  CHECK((a.token_vectors.array() == b.token_vectors.array()).all());
  CHECK(a.cls_vector == a.token_vectors.row(0));

  auto reps = marker_representations(a, seq);
  REQUIRE(reps.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(reps[i] == a.token_vectors.row(seq.markers[i].position));

  store.get("encoder.layer0.ffn.in.weight").value(0, 0) = std::nan("");
  CHECK_THROWS_AS(enc.encode(seq), TrainingError);
}

TEST_CASE("marker representations after truncation") {
  Vocabulary v;
  ag::ParameterStore store;
  EncoderConfig cfg = tiny_encoder(16, 1, 12);
  ReferenceEncoder::initialize(cfg, v.size(), store, 1);
  ReferenceEncoder enc(cfg, v, store);
  Dialogue d = dialogue("d", {"one two three four", "five six", "seven eight nine", "ten eleven"});
  auto seq = enc.tokenize(d);
  CHECK(marker_representations(enc.encode(seq), seq).size() == 3);
  TokenSequence plain = tokenize_text("one", v);
  CHECK_THROWS_AS(marker_representations(enc.encode(plain), plain), DataError);
}

TEST_CASE("encoder config validation and json") {
  EncoderConfig c = tiny_encoder();
  CHECK(EncoderConfig::from_json(c.to_json()) == c);
  EncoderConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("encoder gradients match central differences") {
  Corpus c = load_fixture_corpus();
  Vocabulary v = Vocabulary::build(c);
  ag::ParameterStore store;
  EncoderConfig cfg = tiny_encoder(16, 2, 64);
  ReferenceEncoder::initialize(cfg, v.size(), store, 11);
  // Larger weights than the default init so every path carries signal.
  Rng rng(4);
  for (auto& [name, p] : store)
    if (name.find("norm") == std::string::npos)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 0.3 * ag::standard_normal(rng);
  ReferenceEncoder enc(cfg, v, store);
  auto seq = enc.tokenize(std::span<const Utterance>(c.dialogues[1].utterances.data(), 2));
  ag::Matrix probe = ag::Matrix::Zero(static_cast<Eigen::Index>(seq.size()), 16);
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = ag::standard_normal(rng);
  auto loss = [&](ag::Graph& g) {
    auto out = enc.forward(g, seq).token_vectors;
    ag::Var w = g.constant(probe);
    // sum(out .* probe) via a 1 x 1 product of flattened rows
    std::vector<ag::Var> terms;
    for (Eigen::Index r = 0; r < probe.rows(); ++r)
      terms.push_back(ag::matmul_transposed(ag::row(out, r), ag::row(w, r)));
    return ag::sum(terms);
  };
  GradCheck gc = check_gradients(store, loss, rng, 200);
  INFO(gc.worst);
  CHECK(gc.max_rel_error < 1e-4);
}

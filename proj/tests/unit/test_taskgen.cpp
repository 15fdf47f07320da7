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

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "todpt/encoder.hpp"
#include "todpt/taskgen.hpp"

using namespace todpt;
using namespace todpt::testing;

namespace {

std::vector<TokenId> plain_ids(int words) {
  std::vector<TokenId> ids = {special::kCls};
  for (int i = 0; i < words; ++i) ids.push_back(special::kCount + i);
  ids.push_back(special::kSep);
  return ids;
}

Corpus two_roles(std::size_t n, std::size_t len) {
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> texts;
    for (std::size_t t = 0; t < len; ++t) texts.push_back("d" + std::to_string(i) + " t" + std::to_string(t));
    c.dialogues.push_back(dialogue("d" + std::to_string(i), texts));
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// MLM

TEST_CASE("masking a 10-token utterance picks exactly 2 positions") {
  Rng rng(1);
  auto ex = mask_tokens(plain_ids(10), 100, {}, rng);
  REQUIRE(ex);
  CHECK(ex->masked_positions.size() == 2);
  Rng again(1);
  CHECK(mask_tokens(plain_ids(10), 100, {}, again)->masked_positions == ex->masked_positions);
}

TEST_CASE("masking never touches special tokens and records originals") {
  Rng rng(2);
  std::vector<TokenId> ids = {special::kCls, special::kUsr, 10, 11, special::kSys, 12, 13, 14, special::kSep};
  for (int k = 0; k < 200; ++k) {
    auto ex = mask_tokens(ids, 50, {}, rng);
    REQUIRE(ex);
    for (std::size_t i = 0; i < ex->masked_positions.size(); ++i) {
      auto pos = static_cast<std::size_t>(ex->masked_positions[i]);
      CHECK_FALSE(Vocabulary::is_special(ids[pos]));
      CHECK(ex->original_ids[i] == ids[pos]);
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (Vocabulary::is_special(ids[i])) CHECK(ex->tokens[i] == ids[i]);
  }
}

TEST_CASE("masking needs at least two eligible tokens") {
  Rng rng(3);
  CHECK_FALSE(mask_tokens(plain_ids(1), 100, {}, rng).has_value());
  CHECK(mask_tokens(plain_ids(2), 100, {}, rng).has_value());
  MlmOptions bad;
  bad.mask_rate = 0;
  CHECK_THROWS_AS(mask_tokens(plain_ids(5), 100, bad, rng), UsageError);
}

TEST_CASE("substitution frequencies follow 80/10/10") {
  Rng rng(4);
  int masked = 0, random_tok = 0, kept = 0, total = 0;
  for (int k = 0; k < 1000; ++k) {
    auto ids = plain_ids(20);
    auto ex = mask_tokens(ids, 1000, {}, rng);
    for (std::size_t i = 0; i < ex->masked_positions.size(); ++i) {
      auto pos = static_cast<std::size_t>(ex->masked_positions[i]);
      ++total;
      if (ex->tokens[pos] == special::kMask) ++masked;
      else if (ex->tokens[pos] == ids[pos]) ++kept;
      else ++random_tok;
    }
  }
  const double f = static_cast<double>(masked) / total;
  CHECK(f > 0.76);
  CHECK(f < 0.84);
  CHECK(static_cast<double>(random_tok) / total == doctest::Approx(0.1).epsilon(0.3));
  CHECK(kept > 0);
}

TEST_CASE("gen_mlm skips dialogues with fewer than 2 eligible tokens") {
  Corpus c;
  c.dialogues.push_back(dialogue("short", {"a", "b"}));
  c.dialogues.push_back(dialogue("tiny", {"x", "y"}));
  Vocabulary v = Vocabulary::build(c);
  auto s = gen_mlm(c, v, 1);
  auto all = s.collect();
  CHECK(all.size() == 2);
  Corpus empty;
  CHECK_THROWS_AS(gen_mlm(empty, v, 1), DataError);
}

// ---------------------------------------------------------------------------
// DSP

TEST_CASE("speaker prediction labels") {
  Corpus c;
  c.dialogues.push_back(dialogue("d", {"a", "b", "c", "d"}));
  auto ex = gen_dsp(c).collect();
  REQUIRE(ex.size() == 4);
  std::vector<int> labels;
  for (const auto& e : ex) labels.push_back(e.label);
  CHECK(labels == std::vector<int>{0, 1, 0, 1});
  CHECK(gen_dsp(load_fixture_corpus()).collect().size() == 412);
  CHECK_THROWS_AS(gen_dsp(Corpus{}), DataError);
}

// ---------------------------------------------------------------------------
// CRM

TEST_CASE("context-response matching examples") {
  Corpus c = two_roles(6, 4);
  auto ex = gen_crm(c, 3, 5).collect();
  CHECK(ex.size() == 12);  // one per SYSTEM turn
  for (const auto& e : ex) {
    CHECK(e.negatives.size() == 3);
    CHECK(e.gold_response.speaker == Speaker::kSystem);
    CHECK(static_cast<int>(e.context.size()) == e.turn);
    std::set<std::string> seen;
    for (const auto& n : e.negatives) {
      CHECK(n.text != e.gold_response.text);
      CHECK(n.text.rfind(e.dialogue_id + " ", 0) != 0);
      seen.insert(n.text);
    }
    CHECK(seen.size() == 3);
  }
  auto again = gen_crm(c, 3, 5).collect();
  for (std::size_t i = 0; i < ex.size(); ++i) CHECK(again[i].negatives == ex[i].negatives);

  Corpus one = two_roles(1, 4);
  CHECK_THROWS_AS(gen_crm(one, 3, 5), DataError);
  Corpus small = two_roles(2, 2);
  CHECK_THROWS_AS(gen_crm(small, 3, 5).collect(), DataError);
}

// ---------------------------------------------------------------------------
// DCV

TEST_CASE("coherence verification balance and replacements") {
  Corpus c = two_roles(100, 6);
  auto ex = gen_dcv(c, 0.5, 0.3, 9).collect();
  REQUIRE(ex.size() == 100);
  int zeros = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto& e = ex[i];
    if (e.label == 1) {
      CHECK(e.replaced_indices.empty());
      CHECK(e.dialogue == c.dialogues[i]);
      continue;
    }
    ++zeros;
    REQUIRE_FALSE(e.replaced_indices.empty());
    for (int t : e.replaced_indices) {
      const auto& orig = c.dialogues[i].utterances[static_cast<std::size_t>(t)];
      const auto& repl = e.dialogue.utterances[static_cast<std::size_t>(t)];
      CHECK(repl.text != orig.text);
      CHECK(repl.speaker == orig.speaker);
    }
  }
  CHECK(zeros == 50);
  CHECK_THROWS_AS(gen_dcv(two_roles(1, 4), 0.5, 0.3, 1), DataError);
  CHECK_THROWS_AS(gen_dcv(c, 1.0, 0.3, 1), UsageError);
}

TEST_CASE("mean replacement count matches a simulation of the sampling procedure") {
  Corpus c = two_roles(2000, 10);
  auto ex = gen_dcv(c, 0.5, 0.3, 21).collect();
  double sum = 0;
  int n = 0;
  for (const auto& e : ex)
    if (e.label == 0) {
      sum += static_cast<double>(e.replaced_indices.size());
      ++n;
    }
  CHECK(n == 1000);
  // Independent simulation: Bernoulli(0.3) per turn, at least one replaced.
  std::mt19937 sim(99);
  std::bernoulli_distribution coin(0.3);
  double sim_sum = 0;
  for (int k = 0; k < 200000; ++k) {
    int r = 0;
    for (int t = 0; t < 10; ++t) r += coin(sim);
    sim_sum += std::max(r, 1);
  }
  const double expected = sim_sum / 200000.0;
  CHECK(expected == doctest::Approx(3.0 + std::pow(0.7, 10)).epsilon(0.01));
  CHECK(std::abs(sum / n - expected) < 0.15);
  CHECK(std::abs(sum / n - 3.0) < 0.4);
}

// ---------------------------------------------------------------------------
// ENP

TEST_CASE("entity number classes") {
  Corpus c;
  Dialogue d = dialogue("d", {"a", "b", "c"});
  d.utterances[0].entity_count = 0;
  d.utterances[1].entity_count = 14;
  d.utterances[2].entity_count = 10;
  c.dialogues.push_back(d);
  auto ex = gen_enp(c, 10).collect();
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].count_class == 0);
  CHECK(ex[1].count_class == 10);
  CHECK(ex[2].count_class == 10);
  c.dialogues[0].utterances[0].entity_count.reset();
  CHECK_THROWS_AS(gen_enp(c, 10), DataError);
}

TEST_CASE("ENP class histogram equals a recount of the annotations") {
  Corpus c = annotate_entities(load_fixture_corpus(), RuleBasedAnnotator{});
  std::map<int, int> from_gen, recount;
  for (const auto& e : gen_enp(c, 10).collect()) ++from_gen[e.count_class];
  RuleBasedAnnotator a;
  for (const auto& d : c.dialogues)
    for (const auto& u : d.utterances) ++recount[std::min<int>(static_cast<int>(a.annotate(u.text).size()), 10)];
  CHECK(from_gen == recount);
}

// ---------------------------------------------------------------------------
// DUR

TEST_CASE("position targets") {
  auto t = position_target({2, 1, 3});
  REQUIRE(t.size() == 3);
  CHECK(t[0] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(t[1] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(t[2] == doctest::Approx(0.6652).epsilon(1e-3));
  auto two = position_target({2, 1});
  CHECK(two[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(two[1] == doctest::Approx(0.2689).epsilon(1e-3));
}

TEST_CASE("utterance reordering examples") {
  Corpus c = load_fixture_corpus();
  c.dialogues.push_back(dialogue("short", {"a", "b"}));
  auto stream = gen_dur(c, 3, 7);
  auto ex = stream.collect();
  CHECK(ex.size() == 50);
  CHECK(stream.stats().skipped == 1);
  for (const auto& e : ex) {
    std::vector<int> id(3);
    std::iota(id.begin(), id.end(), 0);
    CHECK(e.permutation != id);
    CHECK(std::accumulate(e.target_distribution.begin(), e.target_distribution.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
    const Dialogue* src = nullptr;
    for (const auto& d : c.dialogues)
      if (d.id == e.dialogue.id) src = &d;
    REQUIRE(src);
    for (int i = 0; i < 3; ++i)
      CHECK(e.dialogue.utterances[static_cast<std::size_t>(e.window_start + i)] ==
            src->utterances[static_cast<std::size_t>(e.window_start + e.permutation[static_cast<std::size_t>(i)])]);
  }
  CHECK_THROWS_AS(gen_dur(c, 1, 7), UsageError);
}

// ---------------------------------------------------------------------------
// Serialization and properties

TEST_CASE("examples survive a JSON round trip") {
  Corpus c = annotate_entities(load_fixture_corpus(), RuleBasedAnnotator{});
  Vocabulary v = Vocabulary::build(c);
  auto m = gen_mlm(c, v, 1).collect().front();
  CHECK(to_json(masked_from_json(to_json(m))) == to_json(m));
  auto s = gen_dsp(c).collect().front();
  CHECK(to_json(speaker_from_json(to_json(s))) == to_json(s));
  auto k = gen_crm(c, 3, 1).collect().front();
  CHECK(to_json(match_from_json(to_json(k))) == to_json(k));
  for (const auto& d : gen_dcv(c, 0.5, 0.3, 1).collect())
    CHECK(to_json(coherence_from_json(to_json(d))) == to_json(d));
  auto e = gen_enp(c, 10).collect().front();
  CHECK(to_json(entity_count_from_json(to_json(e))) == to_json(e));
  auto r = gen_dur(c, 3, 1).collect().front();
  CHECK(to_json(reorder_from_json(to_json(r))) == to_json(r));
}

TEST_CASE("generator invariants hold on random corpora") {
  Rng meta(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t seed = meta();
    Rng rng(seed);
    Corpus c = random_corpus(rng);
    Vocabulary v = Vocabulary::build(c);
    CAPTURE(trial);

    // MLM: markers untouched; deterministic.
    auto m1 = gen_mlm(c, v, seed).collect();
    auto m2 = gen_mlm(c, v, seed).collect();
    REQUIRE(m1.size() == m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i) {
      CHECK(m1[i].tokens == m2[i].tokens);
      for (TokenId o : m1[i].original_ids) CHECK_FALSE(Vocabulary::is_special(o));
    }

    // DCV: balance within 1.
    auto dcv = gen_dcv(c, 0.5, 0.3, seed).collect();
    long zeros = std::count_if(dcv.begin(), dcv.end(), [](const auto& e) { return e.label == 0; });
    CHECK(std::abs(2 * zeros - static_cast<long>(dcv.size())) <= 1);

    // CRM: gold never among negatives.
    for (const auto& e : gen_crm(c, 1, seed).collect())
      for (const auto& n : e.negatives) CHECK(n.text != e.gold_response.text);

    // DUR: never the identity; target sums to 1.
    auto d1 = gen_dur(c, 3, seed).collect();
    auto d2 = gen_dur(c, 3, seed).collect();
    REQUIRE(d1.size() == d2.size());
    for (std::size_t i = 0; i < d1.size(); ++i) {
      CHECK(d1[i].permutation == d2[i].permutation);
      CHECK_FALSE(std::is_sorted(d1[i].permutation.begin(), d1[i].permutation.end()));
      double s = std::accumulate(d1[i].target_distribution.begin(), d1[i].target_distribution.end(), 0.0);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

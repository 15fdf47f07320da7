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

#include <benchmark/benchmark.h>

#include "todpt/heads.hpp"
#include "todpt/model.hpp"
#include "todpt/synthetic.hpp"
#include "todpt/taskgen.hpp"

namespace {

using namespace todpt;

struct Fixture {
  Corpus corpus = synthetic_corpus(32, 3, "bench");
  Vocabulary vocab = Vocabulary::build(corpus);

  Model model(int dim, int layers) const {
    EncoderConfig c;
    c.dim = dim;
    c.layers = layers;
    c.heads = 2;
    c.max_len = 128;
    return Model::create(c, vocab, 1);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_EncoderForward(benchmark::State& state) {
  const Model m = fixture().model(static_cast<int>(state.range(0)), 2);
  const TokenSequence seq = m.encoder().tokenize(fixture().corpus.dialogues.front());
  for (auto _ : state) {
    EncoderOutput out = m.encoder().encode(seq);
    benchmark::DoNotOptimize(out.cls_vector.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seq.size()));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64)->Arg(128);

void BM_EncoderForwardBackward(benchmark::State& state) {
  Model m = fixture().model(static_cast<int>(state.range(0)), 2);
  Rng rng(2);
  LinearHead head = LinearHead::create(m.params(), "head.dsp", m.encoder().dim(), 2, rng);
  const auto examples = gen_dsp(fixture().corpus).collect();
  std::size_t i = 0;
  for (auto _ : state) {
    ag::Graph g;
    TaskLoss l = dsp_loss(g, m.encoder(), head, examples[i++ % examples.size()]);
    g.backward(l.loss);
    m.params().zero_grad();
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(64);

void BM_DialogueLossBackward(benchmark::State& state) {
  Model m = fixture().model(64, 2);
  Rng rng(2);
  UtteranceScorer scorer = UtteranceScorer::create(m.params(), "head.dur", 64, rng);
  const auto examples = gen_dur(fixture().corpus, 3, 4).collect();
  std::size_t i = 0;
  for (auto _ : state) {
    ag::Graph g;
    auto l = dur_loss(g, m.encoder(), scorer, examples[i++ % examples.size()]);
    if (l) g.backward(l->loss);
    m.params().zero_grad();
  }
}
BENCHMARK(BM_DialogueLossBackward);

}  // namespace

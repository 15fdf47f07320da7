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

#include "todpt/common.hpp"
#include "todpt/metrics.hpp"

namespace {

using namespace todpt;

void BM_RecallAtK(benchmark::State& state) {
  Rng rng(1);
  std::vector<std::vector<std::pair<double, bool>>> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& pool : scores) {
    for (int k = 0; k < 100; ++k) pool.emplace_back(uniform01(rng), k == 0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(recall_at_k(scores, {1, 3, 10}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RecallAtK)->Arg(100)->Arg(1000);

void BM_F1Multilabel(benchmark::State& state) {
  Rng rng(2);
  std::vector<LabelSetIds> preds(static_cast<std::size_t>(state.range(0))), golds(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int l = 0; l < 19; ++l) {
      if (uniform01(rng) < 0.15) preds[i].insert(l);
      if (uniform01(rng) < 0.15) golds[i].insert(l);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(f1_multilabel(preds, golds, 19));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_F1Multilabel)->Arg(1000);

void BM_DstMetrics(benchmark::State& state) {
  Rng rng(3);
  std::vector<SlotState> preds(1000), golds(1000);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int s = 0; s < 30; ++s) {
      const std::string key = "slot-" + std::to_string(s);
      golds[i][key] = std::to_string(uniform_index(rng, 4));
      preds[i][key] = uniform01(rng) < 0.9 ? golds[i][key] : "none";
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(dst_metrics(preds, golds));
}
BENCHMARK(BM_DstMetrics);

}  // namespace

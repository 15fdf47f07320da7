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

#include "metric_oracles.hpp"
#include "todpt/metrics.hpp"

using namespace todpt;
using namespace todpt::testing;

TEST_CASE("multi-label F1 hand case") {
  // predictions {A}, {B} against gold {A}, {A}
  std::vector<LabelSetIds> preds = {{0}, {1}}, golds = {{0}, {0}};
  auto s = f1_multilabel(preds, golds, 2);
  CHECK(s.micro == doctest::Approx(0.5));
  CHECK(s.macro == doctest::Approx(1.0 / 3.0));
  auto occurring = f1_multilabel(preds, golds);
  CHECK(occurring.macro == doctest::Approx(1.0 / 3.0));
  // an unused third label counts as zero
  CHECK(f1_multilabel(preds, golds, 3).macro == doctest::Approx(2.0 / 9.0));
  // empty predictions against empty gold
  std::vector<LabelSetIds> none = {{}, {}};
  CHECK(f1_multilabel(none, none).micro == 1.0);
  CHECK_THROWS_AS(f1_multilabel(preds, none, 1), DataError);
  CHECK_THROWS_AS(f1_multilabel({}, {}), DataError);
}

TEST_CASE("intent metrics hand case") {
  const int oos = 2;
  std::vector<int> golds = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  std::vector<int> preds = {0, 0, 1, 1, 1, 2, 2, 2, 0, 1};
  auto s = intent_metrics(preds, golds, oos);
  CHECK(s.acc_all == doctest::Approx(0.6));
  REQUIRE(s.acc_in);
  CHECK(*s.acc_in == doctest::Approx(4.0 / 6.0));
  CHECK(s.acc_out == doctest::Approx(0.7));
  REQUIRE(s.recall_out);
  CHECK(*s.recall_out == doctest::Approx(0.5));

  auto in_only = intent_metrics({0, 1}, {0, 0}, oos);
  CHECK_FALSE(in_only.recall_out.has_value());
  CHECK(in_only.acc_out == 1.0);
  auto out_only = intent_metrics({2, 0}, {2, 2}, oos);
  CHECK_FALSE(out_only.acc_in.has_value());
  CHECK(*out_only.recall_out == 0.5);
}

TEST_CASE("recall at k counts ties against the gold") {
  std::vector<std::pair<double, bool>> c(100, {0.0, false});
  c[5] = {0.5, true};
  c[2] = {0.5, false};  // tie with a smaller index ranks first
  c[9] = {0.5, false};
  auto r = recall_at_k({c}, {1, 3});
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(3) == 1.0);
  c[2].first = 0.4;
  CHECK(recall_at_k({c}, {1}).at(1) == 1.0);
  std::vector<std::pair<double, bool>> short_pool(10, {0.0, false});
  short_pool[0].second = true;
  CHECK_THROWS_AS(recall_at_k({short_pool}, {1}), DataError);
  CHECK(recall_at_k({short_pool}, {1}, 10).at(1) == 1.0);
}

TEST_CASE("dst metrics hand case") {
  std::vector<SlotState> gold = {{{"a", "x"}, {"b", "y"}}, {{"a", "x"}, {"b", "y"}}};
  std::vector<SlotState> pred = {{{"a", "x"}, {"b", "y"}}, {{"a", "x"}, {"b", "z"}}};
  auto s = dst_metrics(pred, gold);
  CHECK(s.acc_slot == doctest::Approx(0.75));
  CHECK(s.acc_joint == doctest::Approx(0.5));
  std::vector<SlotState> missing = {{{"a", "x"}}, {{"a", "x"}}};
  CHECK_THROWS_AS(dst_metrics(missing, gold), DataError);
}

TEST_CASE("metrics agree with brute-force oracles") {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    MetricCase c = random_metric_case(rng);
    std::string diff = compare_metric_case(c);
    CAPTURE(t);
    CHECK(diff.empty());
  }
}

TEST_CASE("metric reports") {
  CHECK(metric_header("r100_at_1") == "R_100@1");
  CHECK(metric_header("acc_in") == "Acc (in)");
  CHECK(task_metric_keys("DST") == std::vector<std::string>{"acc_joint", "acc_slot"});
  CHECK_THROWS_AS(task_metric_keys("CRM"), UsageError);

  MetricReport a{"DA", "syn", {{"f1_micro", 0.5}, {"f1_macro", 0.25}}, {}, {}};
  MetricReport b{"DA", "syn", {{"f1_micro", 0.7}, {"f1_macro", 0.35}}, {}, {"note"}};
  MetricReport agg = MetricReport::aggregate({a, b});
  CHECK(agg.per_seed.size() == 2);
  CHECK(agg.mean().at("f1_micro") == doctest::Approx(0.6));
  CHECK(agg.csv_header() == std::vector<std::string>{"task", "dataset", "f1_micro", "f1_macro"});
  CHECK(agg.csv_row() == std::vector<std::string>{"DA", "syn", "60.00", "30.00"});
  MetricReport back = MetricReport::from_json(agg.to_json());
  CHECK(back.mean() == agg.mean());
  CHECK(back.notes == std::vector<std::string>{"note"});
  MetricReport other{"INT", "syn", {}, {}, {}};
  CHECK_THROWS_AS(MetricReport::aggregate({a, other}), DataError);
}

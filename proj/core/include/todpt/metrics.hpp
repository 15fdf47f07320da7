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

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace todpt {

using LabelSetIds = std::set<int>;

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
};

// Micro F1 pools TP/FP/FN over all labels; macro averages per-label F1 over
// labels 0..num_labels-1 (a label with no gold and no predicted occurrence
// scores 0). num_labels < 0 averages over the labels that occur instead.
// When nothing is predicted and nothing is gold, micro F1 is 1.
F1Scores f1_multilabel(const std::vector<LabelSetIds>& preds,
                       const std::vector<LabelSetIds>& golds, int num_labels = -1);

struct IntentScores {
  double acc_all = 0.0;
  std::optional<double> acc_in;      // absent without in-scope gold examples
  double acc_out = 0.0;              // binary in-scope/out-of-scope accuracy
  std::optional<double> recall_out;  // absent without out-of-scope gold examples
};

IntentScores intent_metrics(const std::vector<int>& preds, const std::vector<int>& golds,
                            int oos_class);

// scores[e] holds (candidate score, is_gold) for every candidate of example e.
// Rank of the gold = candidates scoring strictly higher plus tied candidates
// with a smaller index.
std::map<int, double> recall_at_k(const std::vector<std::vector<std::pair<double, bool>>>& scores,
                                  const std::vector<int>& ks, std::size_t pool = 100);

using SlotState = std::map<std::string, std::string>;

struct DstScores {
  double acc_joint = 0.0;
  double acc_slot = 0.0;
};

DstScores dst_metrics(const std::vector<SlotState>& preds, const std::vector<SlotState>& golds);

// Metric key -> table header.
const std::vector<std::pair<std::string, std::string>>& metric_headers();
std::string metric_header(const std::string& key);

struct MetricReport {
  std::string task;
  std::string dataset;
  std::map<std::string, double> metrics;  // fractions in [0, 1]
  std::vector<std::map<std::string, double>> per_seed;
  std::vector<std::string> notes;

  // Mean over per_seed where present, else `metrics`.
  std::map<std::string, double> mean() const;
  static MetricReport aggregate(const std::vector<MetricReport>& runs);

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  // Header columns for this task, percentages with two decimals.
  std::vector<std::string> csv_header() const;
  std::vector<std::string> csv_row() const;
};

// Ordered metric keys reported for a downstream task id ("INT", "DA", ...).
const std::vector<std::string>& task_metric_keys(const std::string& task);

}  // namespace todpt

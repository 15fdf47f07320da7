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

#include "todpt/metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "todpt/common.hpp"

namespace todpt {

namespace {

double f1(double tp, double fp, double fn) {
  double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

}  // namespace

F1Scores f1_multilabel(const std::vector<LabelSetIds>& preds, const std::vector<LabelSetIds>& golds,
                       int num_labels) {
  if (preds.size() != golds.size())
    throw DataError("f1_multilabel: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(golds.size()) + " gold sets");
  if (preds.empty()) throw DataError("f1_multilabel: no examples");

  std::map<int, std::array<double, 3>> counts;  // label -> tp, fp, fn
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int p : preds[i]) {
      if (golds[i].count(p)) {
        ++counts[p][0];
        ++tp;
      } else {
        ++counts[p][1];
        ++fp;
      }
    }
    for (int g : golds[i]) {
      if (!preds[i].count(g)) {
        ++counts[g][2];
        ++fn;
      }
    }
  }
  F1Scores out;
  out.micro = (tp + fp + fn == 0.0) ? 1.0 : f1(tp, fp, fn);
  if (num_labels >= 0) {
    for (const auto& [label, _] : counts)
      if (label < 0 || label >= num_labels) throw DataError("f1_multilabel: label out of range");
    double total = 0.0;
    for (int l = 0; l < num_labels; ++l) {
      auto it = counts.find(l);
      if (it != counts.end()) total += f1(it->second[0], it->second[1], it->second[2]);
    }
    out.macro = num_labels == 0 ? 0.0 : total / num_labels;
  } else if (counts.empty()) {
    out.macro = 1.0;
  } else {
    double total = 0.0;
    for (const auto& [_, c] : counts) total += f1(c[0], c[1], c[2]);
    out.macro = total / static_cast<double>(counts.size());
  }
  return out;
}

IntentScores intent_metrics(const std::vector<int>& preds, const std::vector<int>& golds,
                            int oos_class) {
  if (preds.size() != golds.size()) throw DataError("intent_metrics: length mismatch");
  if (preds.empty()) throw DataError("intent_metrics: no examples");
  if (oos_class < 0) throw DataError("intent_metrics: invalid out-of-scope class");
  std::size_t correct = 0, in_total = 0, in_correct = 0, out_total = 0, out_hit = 0, binary = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool gold_oos = golds[i] == oos_class;
    const bool pred_oos = preds[i] == oos_class;
    if (preds[i] == golds[i]) ++correct;
    if (gold_oos == pred_oos) ++binary;
    if (gold_oos) {
      ++out_total;
      if (pred_oos) ++out_hit;
    } else {
      ++in_total;
      if (preds[i] == golds[i]) ++in_correct;
    }
  }
  const auto n = static_cast<double>(preds.size());
  IntentScores s;
  s.acc_all = static_cast<double>(correct) / n;
  s.acc_out = static_cast<double>(binary) / n;
  if (in_total > 0) s.acc_in = static_cast<double>(in_correct) / static_cast<double>(in_total);
  if (out_total > 0) s.recall_out = static_cast<double>(out_hit) / static_cast<double>(out_total);
  return s;
}

std::map<int, double> recall_at_k(const std::vector<std::vector<std::pair<double, bool>>>& scores,
                                  const std::vector<int>& ks, std::size_t pool) {
  if (scores.empty()) throw DataError("recall_at_k: no examples");
  for (int k : ks)
    if (k < 1) throw DataError("recall_at_k: k must be positive");
  std::map<int, std::size_t> hits;
  for (int k : ks) hits[k] = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    const auto& cands = scores[e];
    if (cands.size() != pool)
      throw DataError("recall_at_k: example " + std::to_string(e) + " has " +
                      std::to_string(cands.size()) + " candidates, expected " + std::to_string(pool));
    std::size_t gold = cands.size();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (!cands[c].second) continue;
      if (gold != cands.size()) throw DataError("recall_at_k: more than one gold candidate");
      gold = c;
    }
    if (gold == cands.size()) throw DataError("recall_at_k: no gold candidate");
    std::size_t rank = 0;
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (cands[c].first > cands[gold].first || (cands[c].first == cands[gold].first && c < gold))
        ++rank;
    }
    for (int k : ks)
      if (rank < static_cast<std::size_t>(k)) ++hits[k];
  }
  std::map<int, double> out;
  for (const auto& [k, h] : hits) out[k] = static_cast<double>(h) / static_cast<double>(scores.size());
  return out;
}

DstScores dst_metrics(const std::vector<SlotState>& preds, const std::vector<SlotState>& golds) {
  if (preds.size() != golds.size()) throw DataError("dst_metrics: length mismatch");
  if (preds.empty()) throw DataError("dst_metrics: no turns");
  std::size_t slots = 0, slot_hits = 0, joint = 0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    if (preds[t].size() != golds[t].size())
      throw DataError("dst_metrics: turn " + std::to_string(t) + " has mismatched pair keys");
    bool all = true;
    for (const auto& [pair, value] : golds[t]) {
      auto it = preds[t].find(pair);
      if (it == preds[t].end())
        throw DataError("dst_metrics: turn " + std::to_string(t) + " lacks pair '" + pair + "'");
      ++slots;
      if (it->second == value)
        ++slot_hits;
      else
        all = false;
    }
    if (all) ++joint;
  }
  DstScores s;
  s.acc_joint = static_cast<double>(joint) / static_cast<double>(preds.size());
  s.acc_slot = slots == 0 ? 1.0 : static_cast<double>(slot_hits) / static_cast<double>(slots);
  return s;
}

const std::vector<std::pair<std::string, std::string>>& metric_headers() {
  static const std::vector<std::pair<std::string, std::string>> h = {
      {"f1_micro", "f1_micro"},     {"f1_macro", "f1_macro"},     {"acc_all", "Acc (all)"},
      {"acc_in", "Acc (in)"},       {"acc_out", "Acc (out)"},     {"recall_out", "Recall (out)"},
      {"r100_at_1", "R_100@1"},     {"r100_at_3", "R_100@3"},     {"acc_joint", "acc_joint"},
      {"acc_slot", "acc_slot"}};
  return h;
}

std::string metric_header(const std::string& key) {
  for (const auto& [k, h] : metric_headers())
    if (k == key) return h;
  return key;
}

const std::vector<std::string>& task_metric_keys(const std::string& task) {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"INT", {"acc_all", "acc_in", "acc_out", "recall_out"}},
      {"DA", {"f1_micro", "f1_macro"}},
      {"RS", {"r100_at_1", "r100_at_3"}},
      {"DST", {"acc_joint", "acc_slot"}}};
  auto it = keys.find(task);
  if (it == keys.end()) throw UsageError("no metrics defined for task '" + task + "'");
  return it->second;
}

std::map<std::string, double> MetricReport::mean() const {
  if (per_seed.empty()) return metrics;
  std::map<std::string, double> sums;
  std::map<std::string, int> counts;
  for (const auto& run : per_seed)
    for (const auto& [k, v] : run) {
      sums[k] += v;
      ++counts[k];
    }
  for (auto& [k, v] : sums) v /= counts[k];
  return sums;
}

MetricReport MetricReport::aggregate(const std::vector<MetricReport>& runs) {
  if (runs.empty()) throw DataError("aggregate: no runs");
  MetricReport out;
  out.task = runs.front().task;
  out.dataset = runs.front().dataset;
  for (const auto& r : runs) {
    if (r.task != out.task || r.dataset != out.dataset)
      throw DataError("aggregate: runs disagree on task/dataset");
    out.per_seed.push_back(r.metrics);
    for (const auto& n : r.notes)
      if (std::find(out.notes.begin(), out.notes.end(), n) == out.notes.end()) out.notes.push_back(n);
  }
  out.metrics = out.mean();
  return out;
}

nlohmann::json MetricReport::to_json() const {
  return {{"task", task},         {"dataset", dataset}, {"metrics", metrics},
          {"per_seed", per_seed}, {"mean", mean()},     {"notes", notes}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.task = j.at("task").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  if (j.contains("per_seed"))
    r.per_seed = j["per_seed"].get<std::vector<std::map<std::string, double>>>();
  if (j.contains("notes")) r.notes = j["notes"].get<std::vector<std::string>>();
  return r;
}

std::vector<std::string> MetricReport::csv_header() const {
  std::vector<std::string> out = {"task", "dataset"};
  for (const auto& k : task_metric_keys(task)) out.push_back(metric_header(k));
  return out;
}

std::vector<std::string> MetricReport::csv_row() const {
  std::vector<std::string> out = {task, dataset};
  auto m = mean();
  for (const auto& k : task_metric_keys(task)) {
    auto it = m.find(k);
    if (it == m.end()) {
      out.emplace_back();
      continue;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * it->second);
    out.emplace_back(buf);
  }
  return out;
}

}  // namespace todpt

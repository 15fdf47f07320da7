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

#include "todpt/downstream.hpp"

#include <algorithm>
#include <fstream>

namespace todpt {

using nlohmann::json;

std::string_view to_string(PretrainTask t) {
  switch (t) {
    case PretrainTask::kMlm: return "MLM";
    case PretrainTask::kDsp: return "DSP";
    case PretrainTask::kCrm: return "CRM";
    case PretrainTask::kDcv: return "DCV";
    case PretrainTask::kEnp: return "ENP";
    case PretrainTask::kDur: return "DUR";
  }
  return "MLM";
}

std::string_view to_string(DownstreamTask t) {
  switch (t) {
    case DownstreamTask::kInt: return "INT";
    case DownstreamTask::kDa: return "DA";
    case DownstreamTask::kRs: return "RS";
    case DownstreamTask::kDst: return "DST";
  }
  return "INT";
}

namespace {

const json& require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw DataError(std::string("missing field '") + field + "'");
  return *it;
}

std::vector<Utterance> history_from(const json& j) {
  const json& h = require(j, "history");
  if (!h.is_array() || h.empty()) throw DataError("field 'history' must be a non-empty array");
  std::vector<Utterance> out;
  for (const auto& t : h) {
    Utterance u;
    u.speaker = parse_speaker(require(t, "speaker").get<std::string>());
    u.text = require(t, "text").get<std::string>();
    validate(u);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

PretrainTask parse_pretrain_task(std::string_view s) {
  std::string u = to_upper(s);
  for (auto t : {PretrainTask::kMlm, PretrainTask::kDsp, PretrainTask::kCrm, PretrainTask::kDcv,
                 PretrainTask::kEnp, PretrainTask::kDur})
    if (u == to_string(t)) return t;
  throw UsageError("unknown pre-training task '" + std::string(s) + "'");
}

DownstreamTask parse_downstream_task(std::string_view s) {
  std::string u = to_upper(s);
  for (auto t : {DownstreamTask::kInt, DownstreamTask::kDa, DownstreamTask::kRs,
                 DownstreamTask::kDst})
    if (u == to_string(t)) return t;
  throw UsageError("unknown downstream task '" + std::string(s) + "'");
}

std::vector<PretrainTask> parse_pretrain_tasks(std::string_view list) {
  std::vector<PretrainTask> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    std::size_t comma = list.find(',', start);
    std::string item = trim(list.substr(start, comma == std::string_view::npos ? list.npos : comma - start));
    if (!item.empty()) {
      PretrainTask t = parse_pretrain_task(item);
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

int Ontology::pair_index(std::string_view pair) const {
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i] == pair) return static_cast<int>(i);
  return -1;
}

int Ontology::value_index(std::size_t pair, std::string_view value) const {
  const auto& vs = values.at(pair);
  for (std::size_t i = 0; i < vs.size(); ++i)
    if (vs[i] == value) return static_cast<int>(i);
  return -1;
}

Ontology Ontology::from_json(const json& j) {
  if (!j.is_object() || j.empty()) throw DataError("ontology must be a non-empty JSON object");
  Ontology o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) throw DataError("ontology entry '" + it.key() + "' is not a list");
    o.pairs.push_back(it.key());
    o.values.push_back(it.value().get<std::vector<std::string>>());
  }
  return o;
}

Ontology Ontology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ontology " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json Ontology::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < pairs.size(); ++i) j[pairs[i]] = values[i];
  return j;
}

int LabelSet::index(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

std::optional<int> LabelSet::oos_index() const {
  if (!oos_label) return std::nullopt;
  int i = index(*oos_label);
  if (i < 0) return std::nullopt;
  return i;
}

LabelSet LabelSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path.string());
  LabelSet s;
  try {
    json j = json::parse(in);
    s.labels = require(j, "labels").get<std::vector<std::string>>();
    if (j.contains("oos_label") && !j["oos_label"].is_null())
      s.oos_label = j["oos_label"].get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (s.labels.size() < 2) throw DataError(path.string() + ": need at least 2 labels");
  if (s.oos_label && s.index(*s.oos_label) < 0)
    throw DataError(path.string() + ": oos_label is not in labels");
  return s;
}

json LabelSet::to_json() const {
  json j = {{"labels", labels}};
  if (oos_label) j["oos_label"] = *oos_label;
  return j;
}

IntentExample intent_from_json(const json& j, const LabelSet& labels) {
  IntentExample e;
  e.text = require(j, "text").get<std::string>();
  if (trim(e.text).empty()) throw DataError("intent text is empty");
  std::string intent = require(j, "intent").get<std::string>();
  e.label = labels.index(intent);
  if (e.label < 0) throw DataError("intent '" + intent + "' is not in labels.json");
  return e;
}

ActExample act_from_json(const json& j, const LabelSet& labels) {
  ActExample e;
  e.history = history_from(j);
  for (const auto& a : require(j, "acts")) {
    int idx = labels.index(a.get<std::string>());
    if (idx < 0) throw DataError("act '" + a.get<std::string>() + "' is not in labels.json");
    e.acts.push_back(idx);
  }
  std::sort(e.acts.begin(), e.acts.end());
  e.acts.erase(std::unique(e.acts.begin(), e.acts.end()), e.acts.end());
  return e;
}

ResponseExample response_from_json(const json& j) {
  ResponseExample e;
  e.history = history_from(j);
  e.response = require(j, "response").get<std::string>();
  if (trim(e.response).empty()) throw DataError("response text is empty");
  return e;
}

StateExample state_from_json(const json& j, const Ontology& ontology) {
  StateExample e;
  e.history = history_from(j);
  const json& st = require(j, "state");
  if (!st.is_object()) throw DataError("field 'state' must be an object");
  for (std::size_t p = 0; p < ontology.size(); ++p) {
    auto it = st.find(ontology.pairs[p]);
    if (it == st.end()) throw DataError("missing field 'state." + ontology.pairs[p] + "'");
    std::string v = it->get<std::string>();
    if (ontology.value_index(p, v) < 0)
      throw DataError("value '" + v + "' for '" + ontology.pairs[p] + "' is not in the ontology");
    e.state[ontology.pairs[p]] = v;
  }
  return e;
}

std::size_t DownstreamData::size(Split s) const {
  auto k = static_cast<int>(s);
  switch (task) {
    case DownstreamTask::kInt: return intents[k].size();
    case DownstreamTask::kDa: return acts[k].size();
    case DownstreamTask::kRs: return responses[k].size();
    case DownstreamTask::kDst: return states[k].size();
  }
  return 0;
}

std::uint64_t DownstreamData::content_hash() const {
  std::uint64_t h = fnv1a(to_string(task));
  h = fnv1a(labels.to_json().dump(), h);
  h = fnv1a(ontology.to_json().dump(), h);
  auto hist = [&](const std::vector<Utterance>& us) {
    for (const auto& u : us) {
      h = fnv1a(to_string(u.speaker), h);
      h = fnv1a(u.text, h);
    }
  };
  for (int k = 0; k < 3; ++k) {
    h = mix64(h + static_cast<std::uint64_t>(k));
    for (const auto& e : intents[k]) h = fnv1a(e.text + "\x1f" + std::to_string(e.label), h);
    for (const auto& e : acts[k]) {
      hist(e.history);
      for (int a : e.acts) h = fnv1a(std::to_string(a), h);
    }
    for (const auto& e : responses[k]) {
      hist(e.history);
      h = fnv1a(e.response, h);
    }
    for (const auto& e : states[k]) {
      hist(e.history);
      for (const auto& [p, v] : e.state) h = fnv1a(p + "=" + v, h);
    }
  }
  return h;
}

namespace {

json history_json(const std::vector<Utterance>& h) {
  json a = json::array();
  for (const auto& u : h) a.push_back({{"speaker", std::string(to_string(u.speaker))}, {"text", u.text}});
  return a;
}

}  // namespace

json to_json(const IntentExample& e, const LabelSet& labels) {
  return {{"text", e.text}, {"intent", labels.labels.at(static_cast<std::size_t>(e.label))}};
}

json to_json(const ActExample& e, const LabelSet& labels) {
  json acts = json::array();
  for (int a : e.acts) acts.push_back(labels.labels.at(static_cast<std::size_t>(a)));
  return {{"history", history_json(e.history)}, {"acts", acts}};
}

json to_json(const ResponseExample& e) {
  return {{"history", history_json(e.history)}, {"response", e.response}};
}

json to_json(const StateExample& e) { return {{"history", history_json(e.history)}, {"state", e.state}}; }

void save_downstream(const DownstreamData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_json = [&](const std::filesystem::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << j.dump(2) << '\n';
  };
  if (data.task == DownstreamTask::kInt || data.task == DownstreamTask::kDa)
    write_json(dir / "labels.json", data.labels.to_json());
  if (data.task == DownstreamTask::kDst) write_json(dir / "ontology.json", data.ontology.to_json());
  for (int k = 0; k < 3; ++k) {
    const auto file = dir / (std::string(to_string(static_cast<Split>(k))) + ".jsonl");
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    switch (data.task) {
      case DownstreamTask::kInt:
        for (const auto& e : data.intents[k]) out << to_json(e, data.labels).dump() << '\n';
        break;
      case DownstreamTask::kDa:
        for (const auto& e : data.acts[k]) out << to_json(e, data.labels).dump() << '\n';
        break;
      case DownstreamTask::kRs:
        for (const auto& e : data.responses[k]) out << to_json(e).dump() << '\n';
        break;
      case DownstreamTask::kDst:
        for (const auto& e : data.states[k]) out << to_json(e).dump() << '\n';
        break;
    }
  }
}

DownstreamData load_downstream(DownstreamTask task, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " not found");
  DownstreamData data;
  data.task = task;
  data.name = dir.filename().string();
  if (data.name.empty()) data.name = dir.parent_path().filename().string();
  if (task == DownstreamTask::kInt || task == DownstreamTask::kDa)
    data.labels = LabelSet::load(dir / "labels.json");
  if (task == DownstreamTask::kDst) {
    data.ontology = Ontology::load(dir / "ontology.json");
    for (std::size_t p = 0; p < data.ontology.size(); ++p)
      if (data.ontology.values[p].size() < 2)
        throw DataError("ontology pair '" + data.ontology.pairs[p] + "' has fewer than 2 values");
  }
  for (int k = 0; k < 3; ++k) {
    const fs::path file = dir / (std::string(to_string(static_cast<Split>(k))) + ".jsonl");
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        json j = json::parse(line);
        switch (task) {
          case DownstreamTask::kInt: data.intents[k].push_back(intent_from_json(j, data.labels)); break;
          case DownstreamTask::kDa: data.acts[k].push_back(act_from_json(j, data.labels)); break;
          case DownstreamTask::kRs: data.responses[k].push_back(response_from_json(j)); break;
          case DownstreamTask::kDst: data.states[k].push_back(state_from_json(j, data.ontology)); break;
        }
      } catch (const json::exception& e) {
        throw DataError(file.string() + ": line " + std::to_string(lineno) + ": " + e.what());
      } catch (const DataError& e) {
        throw DataError(file.string() + ": line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  if (data.size(Split::kTrain) == 0) throw DataError(dir.string() + ": train split is empty");
  return data;
}

}  // namespace todpt

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

#include "todpt/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "todpt/corpus.hpp"
#include "todpt/model.hpp"

namespace todpt {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Affinity

std::string_view to_string(Ability a) {
  switch (a) {
    case Ability::kSingleTurn: return "single-turn representation";
    case Ability::kMultiTurn: return "multi-turn representation";
    case Ability::kCoherence: return "coherence";
    case Ability::kEntity: return "entity information";
  }
  return "";
}

std::string_view to_string(Structure s) {
  switch (s) {
    case Structure::kSingleTurnClassifier: return "single-turn classifier";
    case Structure::kMultiTurnClassifier: return "multi-turn classifier";
    case Structure::kSiamese: return "siamese model";
    case Structure::kRankLoss: return "rank loss";
  }
  return "";
}

const std::vector<AffinityRow>& affinity_table() {
  using A = Ability;
  using S = Structure;
  static const std::vector<AffinityRow> table = {
      {"INT", true, {A::kSingleTurn, A::kEntity}, {S::kSingleTurnClassifier}},
      {"DA", true, {A::kMultiTurn}, {S::kMultiTurnClassifier}},
      {"RS", true, {A::kCoherence}, {S::kSiamese}},
      {"DST", true, {A::kMultiTurn, A::kEntity}, {S::kMultiTurnClassifier}},
      {"DSP", false, {A::kSingleTurn}, {S::kSingleTurnClassifier}},
      {"CRM", false, {A::kCoherence}, {S::kSiamese}},
      {"DCV", false, {A::kMultiTurn}, {S::kMultiTurnClassifier}},
      {"ENP", false, {A::kSingleTurn, A::kEntity}, {S::kSingleTurnClassifier}},
      {"DUR", false, {A::kCoherence}, {S::kRankLoss}},
  };
  return table;
}

std::string_view affinity_literal() {
  return "INT | ※ . . ※ ※ . . .\n"
         "DA  | . ※ . . . ※ . .\n"
         "RS  | . . ※ . . . ※ .\n"
         "DST | . ※ . ※ . ※ . .\n"
         "DSP | ※ . . . ※ . . .\n"
         "CRM | . . ※ . . . ※ .\n"
         "DCV | . ※ . . . ※ . .\n"
         "ENP | ※ . . ※ ※ . . .\n"
         "DUR | . . ※ . . . . ※\n";
}

std::vector<AffinityRow> parse_affinity_literal(std::string_view text) {
  static const std::set<std::string> downstream = {"INT", "DA", "RS", "DST"};
  std::vector<AffinityRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto bar = line.find('|');
    if (bar == std::string::npos) throw DataError("affinity literal: missing '|'");
    AffinityRow r;
    r.task = trim(line.substr(0, bar));
    r.downstream = downstream.count(r.task) > 0;
    auto cells = split_whitespace(line.substr(bar + 1));
    if (cells.size() != 8) throw DataError("affinity literal: row " + r.task + " needs 8 cells");
    for (int c = 0; c < 8; ++c) {
      const std::string& cell = cells[static_cast<std::size_t>(c)];
      if (cell == ".") continue;
      if (cell != "※") throw DataError("affinity literal: bad cell '" + cell + "'");
      if (c < 4) r.abilities.insert(static_cast<Ability>(c));
      else r.structures.insert(static_cast<Structure>(c - 4));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

const AffinityRow& affinity_row(std::string_view task) {
  const std::string t = to_upper(task);
  for (const auto& r : affinity_table())
    if (r.task == t) return r;
  throw UsageError("unknown task '" + std::string(task) + "' for affinity lookup");
}

template <typename T>
std::set<T> intersect(const std::set<T>& a, const std::set<T>& b) {
  std::set<T> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.begin()));
  return out;
}

}  // namespace

AffinityOverlap affinity_overlap(std::string_view pretrain, std::string_view downstream) {
  const AffinityRow& p = affinity_row(pretrain);
  const AffinityRow& d = affinity_row(downstream);
  if (p.downstream) throw UsageError("'" + std::string(pretrain) + "' is not a pre-training task");
  if (!d.downstream) throw UsageError("'" + std::string(downstream) + "' is not a downstream task");
  return {intersect(p.abilities, d.abilities), intersect(p.structures, d.structures)};
}

std::string describe(const AffinityOverlap& o) {
  auto join = [](const auto& set) {
    if (set.empty()) return std::string("none");
    std::string s;
    for (const auto& x : set) {
      if (!s.empty()) s += ", ";
      s += to_string(x);
    }
    return s;
  };
  return "abilities: " + join(o.abilities) + "; structures: " + join(o.structures);
}

// ---------------------------------------------------------------------------
// Spec

std::string slug(std::string_view name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(name[i]);
    if (std::isalnum(c)) {
      out += static_cast<char>(std::tolower(c));
    } else if (c == 0xC2 && i + 1 < name.size() &&
               (static_cast<unsigned char>(name[i + 1]) == 0xB2 || static_cast<unsigned char>(name[i + 1]) == 0xB3)) {
      out += static_cast<unsigned char>(name[i + 1]) == 0xB2 ? '2' : '3';
      ++i;
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "x" : out;
}

std::vector<PretrainConfig> standard_pretrain_configs() {
  using P = PretrainTask;
  return {{"BERT²", std::nullopt},
          {"MLM³", PretrainSpec{{}, true}},
          {"DSP", PretrainSpec{{P::kDsp}, true}},
          {"CRM", PretrainSpec{{P::kCrm}, true}},
          {"DCV", PretrainSpec{{P::kDcv}, true}},
          {"ENP", PretrainSpec{{P::kEnp}, true}},
          {"DUR", PretrainSpec{{P::kDur}, true}},
          {"Joint", PretrainSpec{{P::kEnp, P::kCrm}, true}},
          {"w.o. mlm", PretrainSpec{{P::kCrm}, false}}};
}

std::vector<ReportView> standard_views() {
  return {{"Data-level further pre-training", {"BERT²", "MLM³"}},
          {"Task-level further pre-training", {"MLM³", "DSP", "CRM", "DCV"}},
          {"Effect of ability", {"DSP", "ENP"}},
          {"Effect of structure", {"DUR", "CRM"}},
          {"Joint further pre-training", {"ENP", "CRM", "Joint"}},
          {"Removing MLM", {"CRM", "w.o. mlm"}}};
}

void ExperimentSpec::validate() const {
  if (output_dir.empty()) throw UsageError("spec: output_dir is required");
  if (corpus.empty() && std::any_of(pretrain.begin(), pretrain.end(), [](const auto& p) { return p.spec.has_value(); }))
    throw UsageError("spec: corpus is required for further pre-training");
  if (pretrain.empty()) throw UsageError("spec: at least one pretrain configuration is required");
  if (downstream.empty()) throw UsageError("spec: at least one downstream task is required");
  if (seeds.empty()) throw UsageError("spec: seeds must not be empty");
  std::set<std::string> names, slugs;
  for (const auto& p : pretrain) {
    if (p.name.empty()) throw UsageError("spec: pretrain configuration without a name");
    if (!names.insert(p.name).second) throw UsageError("spec: duplicate pretrain name '" + p.name + "'");
    if (!slugs.insert(slug(p.name)).second) throw UsageError("spec: pretrain names collide: '" + p.name + "'");
    if (p.spec && p.spec->effective_tasks().empty())
      throw UsageError("spec: pretrain configuration '" + p.name + "' trains nothing");
  }
  std::set<std::string> cells;
  for (const auto& d : downstream) {
    if (!cells.insert(std::string(to_string(d.task)) + "/" + d.name).second)
      throw UsageError("spec: duplicate downstream dataset '" + d.name + "'");
    if (finetune_for(d.task).batch_size < 1)
      throw UsageError("spec: finetune_config.batch_size is required for " + std::string(to_string(d.task)));
  }
  encoder.validate();
  pretrain_config.validate();
}

const TrainConfig& ExperimentSpec::finetune_for(DownstreamTask task) const {
  auto it = finetune_overrides.find(std::string(to_string(task)));
  return it == finetune_overrides.end() ? finetune_config : it->second;
}

ExperimentSpec ExperimentSpec::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw UsageError("spec must be a JSON object");
  static const std::set<std::string> known = {
      "name",          "output_dir",     "corpus",      "annotate",       "base_checkpoint",
      "encoder",       "vocab_min_count", "base_seed",  "pretrain_seed",  "seeds",
      "pretrain_config", "finetune_config", "finetune_overrides", "pretrain", "downstream",
      "views",         "nice_baseline"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw UsageError("spec: unknown key '" + it.key() + "'");
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  ExperimentSpec s;
  try {
    s.name = j.value("name", s.name);
    s.output_dir = resolve(j.at("output_dir").get<std::string>());
    if (j.contains("corpus") && !j["corpus"].is_null()) s.corpus = resolve(j["corpus"].get<std::string>());
    s.annotate = j.value("annotate", s.annotate);
    if (j.contains("base_checkpoint") && !j["base_checkpoint"].is_null())
      s.base_checkpoint = resolve(j["base_checkpoint"].get<std::string>());
    if (j.contains("encoder")) s.encoder = EncoderConfig::from_json(j["encoder"]);
    s.vocab_min_count = j.value("vocab_min_count", s.vocab_min_count);
    s.base_seed = j.value("base_seed", s.base_seed);
    s.pretrain_seed = j.value("pretrain_seed", s.pretrain_seed);
    s.seeds = j.value("seeds", s.seeds);
    s.pretrain_config = TrainConfig::from_json(j.value("pretrain_config", json::object()),
                                               TrainConfig::pretrain_defaults());
    const json ft = j.value("finetune_config", json::object());
    s.finetune_config = TrainConfig::from_json(ft, TrainConfig::finetune_defaults(DownstreamTask::kInt));
    const json overrides = j.value("finetune_overrides", json::object());
    for (auto t : {DownstreamTask::kInt, DownstreamTask::kDa, DownstreamTask::kRs, DownstreamTask::kDst}) {
      const std::string id(to_string(t));
      TrainConfig c = TrainConfig::from_json(ft, TrainConfig::finetune_defaults(t));
      if (overrides.contains(id)) c = TrainConfig::from_json(overrides[id], c);
      s.finetune_overrides[id] = c;
    }
    const json& pre = j.at("pretrain");
    if (pre.is_string()) {
      if (pre.get<std::string>() != "standard") throw UsageError("spec: pretrain must be a list or \"standard\"");
      s.pretrain = standard_pretrain_configs();
    } else {
      for (const auto& p : pre) {
        PretrainConfig c;
        c.name = p.at("name").get<std::string>();
        if (p.contains("tasks") && !p["tasks"].is_null()) c.spec = PretrainSpec::from_json(p);
        s.pretrain.push_back(std::move(c));
      }
    }
    for (const auto& d : j.at("downstream")) {
      DownstreamConfig c;
      c.task = parse_downstream_task(d.at("task").get<std::string>());
      c.dataset = resolve(d.at("dataset").get<std::string>());
      c.name = d.value("name", c.dataset.filename().string());
      s.downstream.push_back(std::move(c));
    }
    if (j.contains("views")) {
      if (j["views"].is_string()) {
        if (j["views"].get<std::string>() != "standard") throw UsageError("spec: views must be a list or \"standard\"");
        s.views = standard_views();
      } else {
        for (const auto& v : j["views"])
          s.views.push_back({v.at("title").get<std::string>(), v.at("rows").get<std::vector<std::string>>()});
      }
    }
    s.nice_baseline = j.value("nice_baseline", s.nice_baseline);
  } catch (const json::exception& e) {
    throw UsageError(std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

ExperimentSpec ExperimentSpec::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open spec " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json ExperimentSpec::to_json() const {
  json pre = json::array();
  for (const auto& p : pretrain) {
    json e = {{"name", p.name}};
    if (p.spec) {
      json s = p.spec->to_json();
      e["tasks"] = s["tasks"];
      e["mlm"] = s["mlm"];
    } else {
      e["tasks"] = nullptr;
    }
    pre.push_back(e);
  }
  json down = json::array();
  for (const auto& d : downstream)
    down.push_back({{"task", std::string(to_string(d.task))}, {"dataset", d.dataset.string()}, {"name", d.name}});
  json overrides = json::object();
  for (const auto& [k, c] : finetune_overrides) overrides[k] = c.to_json();
  json views_j = json::array();
  for (const auto& v : views) views_j.push_back({{"title", v.title}, {"rows", v.rows}});
  return {{"name", name},
          {"output_dir", output_dir.string()},
          {"corpus", corpus.string()},
          {"annotate", annotate},
          {"base_checkpoint", base_checkpoint ? json(base_checkpoint->string()) : json(nullptr)},
          {"encoder", encoder.to_json()},
          {"vocab_min_count", vocab_min_count},
          {"base_seed", base_seed},
          {"pretrain_seed", pretrain_seed},
          {"seeds", seeds},
          {"pretrain_config", pretrain_config.to_json()},
          {"finetune_config", finetune_config.to_json()},
          {"finetune_overrides", overrides},
          {"pretrain", pre},
          {"downstream", down},
          {"views", views_j},
          {"nice_baseline", nice_baseline}};
}

// ---------------------------------------------------------------------------
// Results

json CellResult::to_json() const {
  return {{"cell_id", cell_id}, {"pretrain", pretrain}, {"pretrain_index", pretrain_index},
          {"task", task},       {"dataset", dataset},   {"downstream_index", downstream_index},
          {"seed", seed},       {"ok", ok},             {"error", error},
          {"report", report.to_json()}};
}

CellResult CellResult::from_json(const json& j) {
  CellResult c;
  c.cell_id = j.at("cell_id").get<std::string>();
  c.pretrain = j.at("pretrain").get<std::string>();
  c.pretrain_index = j.value("pretrain_index", std::size_t{0});
  c.task = j.at("task").get<std::string>();
  c.dataset = j.at("dataset").get<std::string>();
  c.downstream_index = j.value("downstream_index", std::size_t{0});
  c.seed = j.value("seed", std::uint64_t{0});
  c.ok = j.value("ok", false);
  c.error = j.value("error", std::string{});
  if (j.contains("report")) c.report = MetricReport::from_json(j["report"]);
  return c;
}

json MatrixSummary::to_json() const {
  json ck = json::array();
  for (const auto& p : checkpoints) ck.push_back(p.string());
  return {{"cells", cells},
          {"cells_run", cells_run},
          {"cells_cached", cells_cached},
          {"cells_failed", cells_failed},
          {"pretrain_runs", pretrain_runs},
          {"pretrain_cache_hits", pretrain_cache_hits},
          {"pretrain_steps", pretrain_steps},
          {"finetune_steps", finetune_steps},
          {"checkpoints", ck}};
}

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id();
  const fs::path tmp = path.string() + suffix.str();
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::optional<json> read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

std::string cell_id(const PretrainConfig& p, const DownstreamConfig& d, std::uint64_t seed) {
  return slug(p.name) + "__" + to_lower(to_string(d.task)) + "-" + slug(d.name) + "__s" + std::to_string(seed);
}

Vocabulary experiment_vocabulary(const Corpus& corpus, const std::vector<DownstreamData>& data, int min_count) {
  std::vector<std::string> texts;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) texts.push_back(u.text);
  auto hist = [&](const std::vector<Utterance>& h) {
    for (const auto& u : h) texts.push_back(u.text);
  };
  for (const auto& dd : data) {
    for (int k = 0; k < 3; ++k) {
      for (const auto& e : dd.intents[k]) texts.push_back(e.text);
      for (const auto& e : dd.acts[k]) hist(e.history);
      for (const auto& e : dd.responses[k]) {
        hist(e.history);
        texts.push_back(e.response);
      }
      for (const auto& e : dd.states[k]) hist(e.history);
    }
    for (const auto& vs : dd.ontology.values)
      for (const auto& v : vs) texts.push_back(v);
  }
  return Vocabulary::build(texts, min_count);
}

}  // namespace

std::string pretrain_key(const PretrainConfig& p, std::uint64_t corpus_hash, const TrainConfig& cfg,
                         const EncoderConfig& enc, const std::string& base_fingerprint, std::uint64_t seed) {
  json cfg_j = cfg.to_json();
  cfg_j.erase("seeds");
  json tasks = json::array();
  bool mlm = false;
  if (p.spec) {
    std::vector<std::string> names;
    for (auto t : p.spec->effective_tasks()) names.push_back(std::string(to_string(t)));
    std::sort(names.begin(), names.end());
    tasks = names;
    mlm = std::find(names.begin(), names.end(), "MLM") != names.end();
  }
  json key = {{"tasks", tasks},      {"mlm", mlm},   {"corpus", hex64(corpus_hash)}, {"config", cfg_j},
              {"encoder", enc.to_json()}, {"base", base_fingerprint}, {"seed", seed}};
  return hex64(fnv1a(key.dump()));
}

MatrixSummary run_matrix(const ExperimentSpec& spec, const MatrixOptions& opts) {
  spec.validate();
  fs::create_directories(spec.output_dir);
  const fs::path ckdir = spec.output_dir / "checkpoints";
  fs::create_directories(ckdir);
  write_atomic(spec.output_dir / "spec.json", spec.to_json().dump(2) + "\n");

  Corpus corpus;
  if (!spec.corpus.empty()) {
    corpus = load_corpus(spec.corpus, Split::kTrain);
    if (spec.annotate && !corpus.annotated()) corpus = annotate_entities(corpus, RuleBasedAnnotator{});
  }
  std::vector<DownstreamData> data;
  for (const auto& d : spec.downstream) {
    DownstreamData dd = load_downstream(d.task, d.dataset);
    dd.name = d.name;
    data.push_back(std::move(dd));
  }

  // Stage-one encoder.
  Model base = spec.base_checkpoint
                   ? load_checkpoint(*spec.base_checkpoint)
                   : Model::create(spec.encoder, experiment_vocabulary(corpus, data, spec.vocab_min_count),
                                   spec.base_seed);
  base.drop_heads();
  json base_id = {{"encoder", base.config().to_json()},
                  {"vocab", hex64(fnv1a(json(base.vocabulary().tokens()).dump()))},
                  {"checkpoint", spec.base_checkpoint ? spec.base_checkpoint->string() : ""},
                  {"seed", spec.base_checkpoint ? 0 : spec.base_seed}};
  const std::string base_fp = hex64(fnv1a(base_id.dump()));
  const fs::path base_path = ckdir / ("base-" + base_fp + ".ckpt");

  MatrixSummary summary;
  std::mutex mu;
  if (fs::exists(base_path)) {
    base = load_checkpoint(base_path);
  } else {
    save_checkpoint(base, base_path);
  }

  // Pre-training phase: one checkpoint per configuration.
  const std::uint64_t chash = corpus_hash(corpus);
  std::vector<fs::path> ckpt(spec.pretrain.size());
  std::vector<std::string> keys(spec.pretrain.size());
  std::vector<std::string> pre_error(spec.pretrain.size());
  parallel_for(spec.pretrain.size(), opts.jobs, [&](std::size_t i) {
    const auto& p = spec.pretrain[i];
    if (!p.spec) {
      ckpt[i] = base_path;
      keys[i] = "base-" + base_fp;
      std::lock_guard lock(mu);
      ++summary.pretrain_cache_hits;
      return;
    }
    keys[i] = pretrain_key(p, chash, spec.pretrain_config, base.config(), base_fp, spec.pretrain_seed);
    ckpt[i] = ckdir / ("pretrain-" + keys[i] + ".ckpt");
    if (fs::exists(ckpt[i])) {
      std::lock_guard lock(mu);
      ++summary.pretrain_cache_hits;
      return;
    }
    try {
      TrainResult r = further_pretrain(base, *p.spec, corpus, spec.pretrain_config, spec.pretrain_seed);
      r.record.checkpoint = ckpt[i].string();
      write_atomic(ckdir / ("pretrain-" + keys[i] + ".json"),
                   json{{"name", p.name}, {"record", r.record.to_json()}}.dump() + "\n");
      save_checkpoint(r.model, ckpt[i]);
      std::lock_guard lock(mu);
      ++summary.pretrain_runs;
      summary.pretrain_steps += r.record.steps_executed;
    } catch (const std::exception& e) {
      pre_error[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < spec.pretrain.size(); ++i)
    if (pre_error[i].empty()) summary.checkpoints.push_back(ckpt[i]);

  // Fine-tuning phase.
  struct Cell {
    std::size_t p, d;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t p = 0; p < spec.pretrain.size(); ++p)
    for (std::size_t d = 0; d < spec.downstream.size(); ++d)
      for (auto s : spec.seeds) cells.push_back({p, d, s});
  summary.cells = cells.size();
  std::vector<CellResult> results(cells.size());

  parallel_for(cells.size(), opts.jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    const auto& p = spec.pretrain[c.p];
    const auto& d = spec.downstream[c.d];
    const TrainConfig& cfg = spec.finetune_for(d.task);
    CellResult r;
    r.cell_id = cell_id(p, d, c.seed);
    r.pretrain = p.name;
    r.pretrain_index = c.p;
    r.task = std::string(to_string(d.task));
    r.dataset = d.name;
    r.downstream_index = c.d;
    r.seed = c.seed;
    const fs::path dir = spec.output_dir / "cells" / r.cell_id;
    json fp = {{"pretrain", keys[c.p]}, {"data", hex64(data[c.d].content_hash())}, {"config", cfg.to_json()},
               {"seed", c.seed}};
    const std::string fingerprint = hex64(fnv1a(fp.dump()));

    if (auto prev = read_json(dir / "metrics.json"); prev && prev->value("fingerprint", "") == fingerprint) {
      CellResult cached = CellResult::from_json(*prev);
      cached.pretrain_index = c.p;
      cached.downstream_index = c.d;
      results[i] = cached;
      std::lock_guard lock(mu);
      ++summary.cells_cached;
      return;
    }
    long steps = 0;
    try {
      if (!pre_error[c.p].empty()) throw TrainingError("pre-training failed: " + pre_error[c.p]);
      Model m = load_checkpoint(ckpt[c.p]);
      TrainResult ft = finetune(m, data[c.d], cfg, c.seed);
      steps = ft.record.steps_executed;
      r.report = evaluate(ft.model, data[c.d], Split::kTest);
      r.report.dataset = d.name;
      r.ok = true;
      write_atomic(dir / "run.json", ft.record.to_json().dump() + "\n");
      json out = r.to_json();
      out["fingerprint"] = fingerprint;
      write_atomic(dir / "metrics.json", out.dump(2) + "\n");
      fs::remove(dir / "error.json");
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
      json out = r.to_json();
      out["fingerprint"] = fingerprint;
      write_atomic(dir / "error.json", out.dump(2) + "\n");
    }
    results[i] = r;
    std::lock_guard lock(mu);
    if (r.ok) {
      ++summary.cells_run;
      summary.finetune_steps += steps;
    } else {
      ++summary.cells_failed;
    }
  });
  summary.results = std::move(results);
  write_atomic(spec.output_dir / "summary.json", summary.to_json().dump(2) + "\n");
  if (opts.write_report) emit_report(spec);
  return summary;
}

std::vector<CellResult> load_results(const fs::path& output_dir) {
  std::vector<CellResult> out;
  const fs::path cells = output_dir / "cells";
  if (!fs::is_directory(cells)) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(cells))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    if (auto j = read_json(dir / "metrics.json")) out.push_back(CellResult::from_json(*j));
    else if (auto e = read_json(dir / "error.json")) out.push_back(CellResult::from_json(*e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// (row, task, dataset) -> seed means
using Means = std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, double>>;
using Counts = std::map<std::tuple<std::string, std::string, std::string>, std::size_t>;

struct Column {
  std::string task;
  std::string dataset;
  std::string metric;
};

std::string render_table(const std::vector<std::string>& rows, const std::vector<Column>& cols,
                         const std::vector<std::string>& headers, const Means& means) {
  std::vector<double> best(cols.size(), -1.0);
  std::vector<std::vector<std::optional<double>>> cells(rows.size(), std::vector<std::optional<double>>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto it = means.find({rows[r], cols[c].task, cols[c].dataset});
      if (it == means.end()) continue;
      auto m = it->second.find(cols[c].metric);
      if (m == it->second.end()) continue;
      // Compare at display precision so equal printed values tie.
      const double v = std::round(m->second * 10000.0) / 10000.0;
      cells[r][c] = v;
      best[c] = std::max(best[c], v);
    }
  std::string s = "|  |";
  for (const auto& h : headers) s += " " + h + " |";
  s += "\n|---|";
  for (std::size_t c = 0; c < cols.size(); ++c) s += "---|";
  s += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s += "| " + rows[r] + " |";
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (!cells[r][c]) {
        s += " - |";
      } else if (*cells[r][c] == best[c]) {
        s += " **" + pct(*cells[r][c]) + "** |";
      } else {
        s += " " + pct(*cells[r][c]) + " |";
      }
    }
    s += "\n";
  }
  return s;
}

}  // namespace

Report render_report(const ExperimentSpec& spec, const std::vector<CellResult>& results) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<MetricReport>> groups;
  std::vector<const CellResult*> failed;
  std::set<std::string> known_rows;
  for (const auto& p : spec.pretrain) known_rows.insert(p.name);
  for (const auto& r : results) {
    if (!known_rows.count(r.pretrain)) continue;
    if (!r.ok) {
      failed.push_back(&r);
      continue;
    }
    MetricReport m = r.report;
    m.dataset = r.dataset;
    groups[{r.pretrain, r.task, r.dataset}].push_back(m);
  }
  Means means;
  Counts counts;
  for (const auto& [k, v] : groups) {
    means[k] = MetricReport::aggregate(v).metrics;
    counts[k] = v.size();
  }

  std::vector<std::string> rows;
  for (const auto& p : spec.pretrain) rows.push_back(p.name);

  Report out;
  std::string md = "# " + spec.name + "\n\n";
  md += "Values are percentages, averaged over seeds";
  {
    std::string seeds;
    for (auto s : spec.seeds) seeds += (seeds.empty() ? "" : ", ") + std::to_string(s);
    md += " (" + seeds + ")";
  }
  md += ". The best value in each column is in bold; \"-\" marks a missing cell.\n\n";

  // Per-task tables, task order of first appearance.
  std::vector<std::string> tasks;
  for (const auto& d : spec.downstream) {
    const std::string t(to_string(d.task));
    if (std::find(tasks.begin(), tasks.end(), t) == tasks.end()) tasks.push_back(t);
  }
  md += "## Results by task\n\n";
  std::vector<Column> all_cols;
  std::vector<std::string> all_headers;
  for (const auto& t : tasks) {
    for (const auto& d : spec.downstream) {
      if (to_string(d.task) != t) continue;
      std::vector<Column> cols;
      std::vector<std::string> headers;
      for (const auto& k : task_metric_keys(t)) {
        cols.push_back({t, d.name, k});
        headers.push_back(metric_header(k));
        all_cols.push_back({t, d.name, k});
        all_headers.push_back(t + " " + d.name + " " + metric_header(k));
      }
      md += "### " + t + ": " + d.name + "\n\n" + render_table(rows, cols, headers, means) + "\n";
    }
  }

  if (!spec.views.empty()) {
    md += "## Comparison views\n\n";
    for (const auto& v : spec.views) {
      std::vector<std::string> present;
      for (const auto& r : v.rows)
        if (known_rows.count(r)) present.push_back(r);
      if (present.empty()) continue;
      md += "### " + v.title + "\n\n" + render_table(present, all_cols, all_headers, means) + "\n";
    }
  }

  // Nice pairs against the baseline row.
  md += "## Nice pairs\n\n";
  md += "A row is a nice pair for a downstream task when its seed-mean score beats " + spec.nice_baseline +
        " on strictly more than half of that task's metric columns.\n\n";
  for (const auto& p : spec.pretrain) {
    if (p.name == spec.nice_baseline || !p.spec) continue;
    std::vector<std::string> ptasks;
    for (auto t : p.spec->tasks)
      if (t != PretrainTask::kMlm) ptasks.push_back(std::string(to_string(t)));
    if (ptasks.empty()) continue;
    for (const auto& t : tasks) {
      NicePair np;
      np.pretrain = p.name;
      np.task = t;
      for (const auto& c : all_cols) {
        if (c.task != t) continue;
        auto a = means.find({p.name, t, c.dataset});
        auto b = means.find({spec.nice_baseline, t, c.dataset});
        if (a == means.end() || b == means.end()) continue;
        auto av = a->second.find(c.metric), bv = b->second.find(c.metric);
        if (av == a->second.end() || bv == b->second.end()) continue;
        ++np.compared;
        np.deltas[c.dataset + "/" + c.metric] = av->second - bv->second;
        if (av->second > bv->second) ++np.improved;
      }
      if (np.compared == 0 || 2 * np.improved <= np.compared) continue;
      for (const auto& pt : ptasks) {
        AffinityOverlap o = affinity_overlap(pt, t);
        np.overlap.abilities.insert(o.abilities.begin(), o.abilities.end());
        np.overlap.structures.insert(o.structures.begin(), o.structures.end());
      }
      out.nice_pairs.push_back(np);
    }
  }
  if (out.nice_pairs.empty()) {
    md += "None.\n\n";
  } else {
    for (const auto& np : out.nice_pairs)
      md += "- (" + np.pretrain + ", " + np.task + "): better on " + std::to_string(np.improved) + "/" +
            std::to_string(np.compared) + " metrics; shared " + describe(np.overlap) + "\n";
    md += "\n";
  }

  if (!failed.empty()) {
    md += "## Failed cells\n\n";
    for (const auto* f : failed) md += "- " + f->cell_id + ": " + f->error + "\n";
    md += "\n";
  }
  out.markdown = md;

  std::string csv = "row,task,dataset,metric,header,mean,seeds\n";
  for (const auto& r : rows)
    for (const auto& c : all_cols) {
      auto it = means.find({r, c.task, c.dataset});
      if (it == means.end()) continue;
      auto m = it->second.find(c.metric);
      if (m == it->second.end()) continue;
      csv += csv_field(r) + "," + c.task + "," + csv_field(c.dataset) + "," + c.metric + "," +
             csv_field(metric_header(c.metric)) + "," + pct(m->second) + "," +
             std::to_string(counts[{r, c.task, c.dataset}]) + "\n";
    }
  out.csv = csv;
  return out;
}

Report emit_report(const ExperimentSpec& spec) {
  Report r = render_report(spec, load_results(spec.output_dir));
  write_atomic(spec.output_dir / "report.md", r.markdown);
  write_atomic(spec.output_dir / "report.csv", r.csv);
  return r;
}

}  // namespace todpt

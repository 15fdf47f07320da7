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

#include "todpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "todpt/taskgen.hpp"

namespace todpt {

using nlohmann::json;

Adam::Adam(AdamOptions opts) : opts_(opts) {
  if (!(opts_.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
}

void Adam::step(ag::ParameterStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    if (p.grad.size() != p.value.size()) {
      p.zero_grad();
      continue;
    }
    auto& [m, v] = moments_[name];
    if (m.size() == 0) {
      m = ag::Matrix::Zero(p.value.rows(), p.value.cols());
      v = ag::Matrix::Zero(p.value.rows(), p.value.cols());
    }
    m = opts_.beta1 * m + (1.0 - opts_.beta1) * p.grad;
    v = opts_.beta2 * v + (1.0 - opts_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= opts_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opts_.eps);
    p.grad.setZero();
  }
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 0) fail("batch_size must be at least 1");
  if (max_len < 3) fail("max_len must be at least 3");
  if (seeds.empty()) fail("seeds must not be empty");
  if (patience < 1) fail("patience must be at least 1");
  if (max_steps < 1) fail("max_steps must be at least 1");
  if (eval_every < 0) fail("eval_every must be non-negative");
  if (max_valid_examples < 0) fail("max_valid_examples must be non-negative");
  if (!(mlm_weight >= 0.0)) fail("mlm_weight must be non-negative");
  for (const auto& [k, w] : task_weights)
    if (!(w >= 0.0)) fail("task weight for " + k + " must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(target_train_accuracy >= 0.0 && target_train_accuracy <= 1.0))
    fail("target_train_accuracy must be in [0, 1]");
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) fail("mask_rate must be in (0, 1]");
  if (crm_negatives < 1) fail("crm_negatives must be at least 1");
  if (!(dcv_corrupt_fraction >= 0.0 && dcv_corrupt_fraction <= 1.0))
    fail("dcv_corrupt_fraction must be in [0, 1]");
  if (!(dcv_replace_prob > 0.0 && dcv_replace_prob <= 1.0)) fail("dcv_replace_prob must be in (0, 1]");
  if (enp_c_max < 1) fail("enp_c_max must be at least 1");
  if (dur_window < 2) fail("dur_window must be at least 2");
  if (rs_negatives < 1) fail("rs_negatives must be at least 1");
  if (!(similarity_temperature > 0.0)) fail("similarity_temperature must be positive");
  if (!(da_threshold > 0.0 && da_threshold < 1.0)) fail("da_threshold must be in (0, 1)");
}

double TrainConfig::weight(const std::string& task) const {
  if (task == "MLM") return mlm_weight;
  auto it = task_weights.find(task);
  return it == task_weights.end() ? 1.0 : it->second;
}

HeadOptions TrainConfig::head_options() const {
  HeadOptions h;
  h.similarity_temperature = similarity_temperature;
  h.da_threshold = da_threshold;
  return h;
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_len", max_len},
          {"seeds", seeds},
          {"patience", patience},
          {"max_steps", max_steps},
          {"eval_every", eval_every},
          {"max_valid_examples", max_valid_examples},
          {"mlm_weight", mlm_weight},
          {"task_weights", task_weights},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"target_train_accuracy", target_train_accuracy},
          {"mask_rate", mask_rate},
          {"crm_negatives", crm_negatives},
          {"dcv_corrupt_fraction", dcv_corrupt_fraction},
          {"dcv_replace_prob", dcv_replace_prob},
          {"enp_c_max", enp_c_max},
          {"dur_window", dur_window},
          {"rs_negatives", rs_negatives},
          {"similarity_temperature", similarity_temperature},
          {"da_threshold", da_threshold},
          {"split", {split.train, split.valid, split.test}},
          {"split_seed", split_seed}};
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  static const std::set<std::string> known = {
      "learning_rate", "batch_size", "max_len", "seeds", "patience", "max_steps", "eval_every",
      "max_valid_examples", "mlm_weight", "task_weights", "beta1", "beta2", "adam_eps",
      "target_train_accuracy", "mask_rate", "crm_negatives", "dcv_corrupt_fraction",
      "dcv_replace_prob", "enp_c_max", "dur_window", "rs_negatives", "similarity_temperature",
      "da_threshold", "split", "split_seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw UsageError("config: unknown key '" + it.key() + "'");
  TrainConfig c = base;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_len = j.value("max_len", c.max_len);
    c.seeds = j.value("seeds", c.seeds);
    c.patience = j.value("patience", c.patience);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.max_valid_examples = j.value("max_valid_examples", c.max_valid_examples);
    c.mlm_weight = j.value("mlm_weight", c.mlm_weight);
    if (j.contains("task_weights"))
      for (auto& [k, v] : j["task_weights"].items()) c.task_weights[to_upper(k)] = v.get<double>();
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.target_train_accuracy = j.value("target_train_accuracy", c.target_train_accuracy);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.crm_negatives = j.value("crm_negatives", c.crm_negatives);
    c.dcv_corrupt_fraction = j.value("dcv_corrupt_fraction", c.dcv_corrupt_fraction);
    c.dcv_replace_prob = j.value("dcv_replace_prob", c.dcv_replace_prob);
    c.enp_c_max = j.value("enp_c_max", c.enp_c_max);
    c.dur_window = j.value("dur_window", c.dur_window);
    c.rs_negatives = j.value("rs_negatives", c.rs_negatives);
    c.similarity_temperature = j.value("similarity_temperature", c.similarity_temperature);
    c.da_threshold = j.value("da_threshold", c.da_threshold);
    if (j.contains("split")) {
      auto s = j["split"].get<std::vector<double>>();
      if (s.size() != 3) throw UsageError("config: split needs three ratios");
      c.split = {s[0], s[1], s[2]};
    }
    c.split_seed = j.value("split_seed", c.split_seed);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return from_json(j, base);
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults(DownstreamTask task) {
  TrainConfig c;
  c.batch_size = 0;
  if (task == DownstreamTask::kDst) c.learning_rate = 3e-5;
  return c;
}

// ---------------------------------------------------------------------------
// RunRecord

json RunRecord::to_json() const {
  json trace = json::array();
  for (const auto& v : valid_trace) trace.push_back({{"step", v.step}, {"loss", v.loss}});
  return {{"config", config},
          {"seed", seed},
          {"step_losses", step_losses},
          {"task_losses", task_losses},
          {"task_accuracy", task_accuracy},
          {"valid_trace", trace},
          {"stopping_step", stopping_step},
          {"best_step", best_step},
          {"steps_executed", steps_executed},
          {"early_stopped", early_stopped},
          {"skipped", skipped},
          {"checkpoint", checkpoint}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.config = j.value("config", json::object());
  r.seed = j.value("seed", std::uint64_t{0});
  r.step_losses = j.value("step_losses", std::vector<double>{});
  r.task_losses = j.value("task_losses", std::map<std::string, std::vector<double>>{});
  r.task_accuracy = j.value("task_accuracy", std::map<std::string, std::vector<double>>{});
  for (const auto& v : j.value("valid_trace", json::array()))
    r.valid_trace.push_back({v.at("step").get<int>(), v.at("loss").get<double>()});
  r.stopping_step = j.value("stopping_step", 0);
  r.best_step = j.value("best_step", 0);
  r.steps_executed = j.value("steps_executed", 0);
  r.early_stopped = j.value("early_stopped", false);
  r.skipped = j.value("skipped", std::map<std::string, std::size_t>{});
  r.checkpoint = j.value("checkpoint", std::string{});
  return r;
}

// ---------------------------------------------------------------------------
// Optimization loop

namespace {

struct Cursor {
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  int epoch = 0;
};

void reshuffle(Cursor& c, const Objective& obj, std::uint64_t seed) {
  c.order.resize(obj.size());
  for (std::size_t i = 0; i < c.order.size(); ++i) c.order[i] = i;
  Rng rng(derive_seed(seed, obj.name(), static_cast<std::uint64_t>(c.epoch)));
  shuffle_in_place(c.order, rng);
  c.pos = 0;
}

std::vector<std::size_t> next_batch(Cursor& c, Objective& obj, int batch, std::uint64_t seed) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch));
  while (static_cast<int>(out.size()) < batch) {
    if (c.pos == c.order.size()) {
      ++c.epoch;
      obj.prepare(c.epoch);
      if (obj.size() == 0) throw DataError("objective " + obj.name() + " ran out of examples");
      reshuffle(c, obj, seed);
    }
    out.push_back(c.order[c.pos++]);
  }
  return out;
}

double validation_loss(const std::vector<WeightedObjective>& objectives, const Encoder& enc,
                       int cap, bool& any) {
  double total = 0.0;
  any = false;
  for (const auto& wo : objectives) {
    const std::size_t n = std::min<std::size_t>(wo.objective->valid_size(), static_cast<std::size_t>(cap));
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ag::Graph g;
      auto l = wo.objective->valid_loss(g, enc, i);
      if (!l) continue;
      sum += l->value();
      ++used;
    }
    if (used == 0) continue;
    any = true;
    total += wo.weight * sum / static_cast<double>(used);
  }
  return total;
}

}  // namespace

RunRecord fit(Model& model, std::vector<WeightedObjective>& objectives, const TrainConfig& cfg,
              std::uint64_t seed) {
  cfg.validate();
  if (cfg.batch_size < 1) throw UsageError("config: batch_size must be set");
  if (objectives.empty()) throw UsageError("nothing to train");

  ReferenceEncoder enc = model.encoder(cfg.max_len);
  auto& params = model.params();
  Adam adam({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  params.zero_grad();

  RunRecord rec;
  rec.config = cfg.to_json();
  rec.seed = seed;

  std::vector<Cursor> cursors(objectives.size());
  std::size_t largest = 0;
  bool has_valid = false;
  for (std::size_t k = 0; k < objectives.size(); ++k) {
    auto& obj = *objectives[k].objective;
    obj.prepare(0);
    if (obj.size() == 0) throw DataError("objective " + obj.name() + " has no training examples");
    reshuffle(cursors[k], obj, seed);
    largest = std::max(largest, obj.size());
    if (obj.valid_size() > 0 && cfg.max_valid_examples > 0) has_valid = true;
  }
  const int eval_every =
      cfg.eval_every > 0 ? cfg.eval_every
                         : static_cast<int>((largest + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                            static_cast<std::size_t>(cfg.batch_size));

  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  std::map<std::string, ag::Matrix> snapshot;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    double total = 0.0;
    bool reached = cfg.target_train_accuracy > 0.0;
    for (std::size_t k = 0; k < objectives.size(); ++k) {
      auto& obj = *objectives[k].objective;
      const double w = objectives[k].weight;
      const std::string name = obj.name();
      std::vector<std::unique_ptr<ag::Graph>> graphs;
      std::vector<ag::Var> losses;
      std::size_t correct = 0;
      for (std::size_t idx : next_batch(cursors[k], obj, cfg.batch_size, seed)) {
        auto g = std::make_unique<ag::Graph>();
        auto l = obj.loss(*g, enc, idx);
        if (!l) {
          ++rec.skipped[name];
          continue;
        }
        if (l->correct) ++correct;
        losses.push_back(l->loss);
        graphs.push_back(std::move(g));
      }
      double mean = 0.0, acc = 0.0;
      if (!losses.empty()) {
        const double n = static_cast<double>(losses.size());
        for (std::size_t i = 0; i < losses.size(); ++i) {
          mean += losses[i].scalar();
          graphs[i]->backward(ag::scale(losses[i], w / n));
        }
        mean /= n;
        acc = static_cast<double>(correct) / n;
        if (!std::isfinite(mean))
          throw TrainingError(name + " loss became non-finite at step " + std::to_string(step));
      }
      total += w * mean;
      rec.task_losses[name].push_back(mean);
      rec.task_accuracy[name].push_back(acc);
      if (losses.empty() || acc < cfg.target_train_accuracy) reached = false;
    }
    rec.step_losses.push_back(total);
    if (reached) {
      // The batch was scored with the parameters of the previous step.
      params.zero_grad();
      rec.steps_executed = step - 1;
      break;
    }
    adam.step(params);
    rec.steps_executed = step;
    if (!params.all_finite()) throw TrainingError("parameters became non-finite at step " + std::to_string(step));

    if (has_valid && (step % eval_every == 0 || step == cfg.max_steps)) {
      bool any = false;
      const double v = validation_loss(objectives, enc, cfg.max_valid_examples, any);
      if (any) {
        rec.valid_trace.push_back({step, v});
        if (v < best) {
          best = v;
          bad = 0;
          rec.best_step = step;
          for (const auto& [n, p] : params)
            if (p.trainable) snapshot[n] = p.value;
        } else if (++bad >= cfg.patience) {
          rec.early_stopped = true;
          break;
        }
      }
    }
  }
  rec.stopping_step = rec.steps_executed;
  if (!snapshot.empty()) {
    for (auto& [n, v] : snapshot) params.get(n).value = v;
  } else {
    rec.best_step = rec.steps_executed;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Further pre-training

std::vector<PretrainTask> PretrainSpec::effective_tasks() const {
  std::vector<PretrainTask> out;
  const bool with_mlm = mlm || std::find(tasks.begin(), tasks.end(), PretrainTask::kMlm) != tasks.end();
  if (with_mlm) out.push_back(PretrainTask::kMlm);
  for (auto t : tasks)
    if (t != PretrainTask::kMlm && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  return out;
}

std::string PretrainSpec::label() const {
  std::string s;
  for (auto t : tasks) {
    if (t == PretrainTask::kMlm) continue;
    if (!s.empty()) s += "+";
    s += to_string(t);
  }
  if (s.empty()) s = "MLM";
  if (!mlm) s += " w.o. mlm";
  return s;
}

json PretrainSpec::to_json() const {
  json t = json::array();
  for (auto x : tasks) t.push_back(std::string(to_string(x)));
  return {{"tasks", t}, {"mlm", mlm}};
}

PretrainSpec PretrainSpec::from_json(const json& j) {
  PretrainSpec s;
  for (const auto& t : j.at("tasks")) s.tasks.push_back(parse_pretrain_task(t.get<std::string>()));
  s.mlm = j.value("mlm", true);
  return s;
}

namespace {

template <typename T>
std::vector<T> take(ExampleStream<T> stream, int cap) {
  std::vector<T> out;
  while (static_cast<int>(out.size()) < cap) {
    auto ex = stream.next();
    if (!ex) break;
    out.push_back(std::move(*ex));
  }
  return out;
}

template <typename T, typename Gen>
std::vector<T> try_take(Gen gen, int cap) {
  try {
    return take(gen(), cap);
  } catch (const DataError&) {
    return {};
  }
}

}  // namespace

TrainResult further_pretrain(const Model& base, const PretrainSpec& spec, const Corpus& corpus,
                             const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto tasks = spec.effective_tasks();
  if (tasks.empty()) throw UsageError("no pre-training task selected");
  if (std::find(tasks.begin(), tasks.end(), PretrainTask::kEnp) != tasks.end() && !corpus.annotated())
    throw DataError("ENP needs an entity-annotated corpus; run annotate first");
  if (corpus.dialogues.empty()) throw DataError("pre-training corpus is empty");

  Model model = base;
  model.drop_heads();
  auto train = std::make_shared<Corpus>();
  Corpus valid;
  if (corpus.dialogues.size() >= 3) {
    auto s = split_corpus(corpus, cfg.split, cfg.split_seed);
    *train = std::move(s.train);
    valid = std::move(s.valid);
  } else {
    *train = corpus;
  }

  const int d = model.config().dim;
  const int max_len = std::min(cfg.max_len, model.config().max_len);
  const int cap = cfg.max_valid_examples;
  const HeadOptions ho = cfg.head_options();
  Rng rng(derive_seed(seed, "pretrain-heads"));
  std::vector<WeightedObjective> objs;
  std::size_t dur_short = 0;

  for (PretrainTask t : tasks) {
    const std::string name(to_string(t));
    const double w = cfg.weight(name);
    std::unique_ptr<Objective> obj;
    switch (t) {
      case PretrainTask::kMlm: {
        LinearHead head = LinearHead::create(model.params(), "head.mlm", d,
                                             static_cast<int>(model.vocabulary().size()), rng);
        MlmOptions mo;
        mo.mask_rate = cfg.mask_rate;
        mo.max_len = max_len;
        const Vocabulary* vocab = &model.vocabulary();
        auto regen = [train, vocab, mo, seed](int epoch) {
          return gen_mlm(*train, *vocab, derive_seed(seed, "MLM", static_cast<std::uint64_t>(epoch)), mo)
              .collect();
        };
        auto v = take(gen_mlm(valid, *vocab, derive_seed(seed, "MLM-valid"), mo), cap);
        obj = std::make_unique<ExampleObjective<MaskedExample>>(
            name, regen(0), std::move(v),
            [head](ag::Graph& g, const Encoder& e, const MaskedExample& ex) -> std::optional<TaskLoss> {
              return mlm_loss(g, e, head, ex);
            },
            regen);
        break;
      }
      case PretrainTask::kDsp: {
        LinearHead head = LinearHead::create(model.params(), "head.dsp", d, 2, rng);
        obj = std::make_unique<ExampleObjective<SpeakerExample>>(
            name, gen_dsp(*train).collect(), take(gen_dsp(valid), cap),
            [head](ag::Graph& g, const Encoder& e, const SpeakerExample& ex) -> std::optional<TaskLoss> {
              return dsp_loss(g, e, head, ex);
            });
        break;
      }
      case PretrainTask::kCrm: {
        const int k = cfg.crm_negatives;
        auto regen = [train, k, seed](int epoch) {
          return gen_crm(*train, k, derive_seed(seed, "CRM", static_cast<std::uint64_t>(epoch))).collect();
        };
        auto v = try_take<MatchExample>([&] { return gen_crm(valid, k, derive_seed(seed, "CRM-valid")); }, cap);
        obj = std::make_unique<ExampleObjective<MatchExample>>(
            name, regen(0), std::move(v),
            [ho](ag::Graph& g, const Encoder& e, const MatchExample& ex) -> std::optional<TaskLoss> {
              return crm_loss(g, e, ex, ho);
            },
            regen);
        break;
      }
      case PretrainTask::kDcv: {
        LinearHead head = LinearHead::create(model.params(), "head.dcv", d, 2, rng);
        const double f = cfg.dcv_corrupt_fraction, p = cfg.dcv_replace_prob;
        auto regen = [train, f, p, seed](int epoch) {
          return gen_dcv(*train, f, p, derive_seed(seed, "DCV", static_cast<std::uint64_t>(epoch))).collect();
        };
        auto v = try_take<CoherenceExample>([&] { return gen_dcv(valid, f, p, derive_seed(seed, "DCV-valid")); },
                                            cap);
        obj = std::make_unique<ExampleObjective<CoherenceExample>>(
            name, regen(0), std::move(v),
            [head](ag::Graph& g, const Encoder& e, const CoherenceExample& ex) -> std::optional<TaskLoss> {
              return dcv_loss(g, e, head, ex);
            },
            regen);
        break;
      }
      case PretrainTask::kEnp: {
        LinearHead head = LinearHead::create(model.params(), "head.enp", d, cfg.enp_c_max + 1, rng);
        const int c_max = cfg.enp_c_max;
        auto v = valid.dialogues.empty() ? std::vector<EntityCountExample>{} : take(gen_enp(valid, c_max), cap);
        obj = std::make_unique<ExampleObjective<EntityCountExample>>(
            name, gen_enp(*train, c_max).collect(), std::move(v),
            [head](ag::Graph& g, const Encoder& e, const EntityCountExample& ex) -> std::optional<TaskLoss> {
              return enp_loss(g, e, head, ex);
            });
        break;
      }
      case PretrainTask::kDur: {
        UtteranceScorer scorer = UtteranceScorer::create(model.params(), "head.dur", d, rng);
        const int window = cfg.dur_window;
        auto regen = [train, window, seed](int epoch) {
          return gen_dur(*train, window, derive_seed(seed, "DUR", static_cast<std::uint64_t>(epoch))).collect();
        };
        auto first = gen_dur(*train, window, derive_seed(seed, "DUR", 0));
        auto examples = first.collect();
        dur_short = first.stats().skipped;
        auto v = take(gen_dur(valid, window, derive_seed(seed, "DUR-valid")), cap);
        obj = std::make_unique<ExampleObjective<ReorderExample>>(
            name, std::move(examples), std::move(v),
            [scorer, ho](ag::Graph& g, const Encoder& e, const ReorderExample& ex) {
              return dur_loss(g, e, scorer, ex, ho);
            },
            regen);
        break;
      }
    }
    objs.push_back({std::move(obj), w});
  }

  RunRecord rec = fit(model, objs, cfg, seed);
  if (dur_short > 0) rec.skipped["DUR short dialogues"] = dur_short;
  rec.config["pretrain"] = spec.to_json();
  model.metadata()["pretrain"] = {{"spec", spec.to_json()},
                                  {"corpus", corpus.name},
                                  {"corpus_hash", hex64(corpus_hash(corpus))},
                                  {"seed", seed},
                                  {"best_step", rec.best_step}};
  model.metadata().erase("task");
  return {std::move(model), std::move(rec)};
}

// ---------------------------------------------------------------------------
// Fine-tuning and evaluation

std::vector<std::string> response_pool(const std::string& gold, const std::vector<std::string>& responses,
                                       std::size_t pool, Rng& rng) {
  if (pool < 2) throw UsageError("candidate pool must hold at least 2 responses");
  std::vector<const std::string*> others;
  others.reserve(responses.size());
  for (const auto& r : responses)
    if (r != gold) others.push_back(&r);
  if (others.size() < pool - 1)
    throw DataError("need " + std::to_string(pool - 1) + " distinct negative responses, have " +
                    std::to_string(others.size()));
  std::vector<std::string> out;
  out.reserve(pool);
  out.push_back(gold);
  for (std::size_t i = 0; i < pool - 1; ++i) {
    std::size_t j = i + uniform_index(rng, others.size() - i);
    std::swap(others[i], others[j]);
    out.push_back(*others[i]);
  }
  return out;
}

std::vector<std::string> all_responses(const DownstreamData& data) {
  std::set<std::string> s;
  for (const auto& split : data.responses)
    for (const auto& e : split) s.insert(e.response);
  return {s.begin(), s.end()};
}

namespace {

std::vector<std::string> split_responses(const std::vector<ResponseExample>& exs) {
  std::set<std::string> s;
  for (const auto& e : exs) s.insert(e.response);
  return {s.begin(), s.end()};
}

struct RsItem {
  const ResponseExample* example;
  std::vector<std::string> negatives;
};

std::vector<RsItem> rs_items(const std::vector<ResponseExample>& exs, const std::vector<std::string>& pool,
                             int k, std::uint64_t seed) {
  std::vector<RsItem> out;
  out.reserve(exs.size());
  for (std::size_t i = 0; i < exs.size(); ++i) {
    Rng rng(derive_seed(seed, "rs-item", i));
    auto cands = response_pool(exs[i].response, pool, static_cast<std::size_t>(k) + 1, rng);
    out.push_back({&exs[i], std::vector<std::string>(cands.begin() + 1, cands.end())});
  }
  return out;
}

template <typename T>
std::vector<T> capped(const std::vector<T>& v, int cap) {
  return std::vector<T>(v.begin(), v.begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(v.size()), cap));
}

}  // namespace

TrainResult finetune(const Model& base, const DownstreamData& data, const TrainConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  if (cfg.batch_size < 1) throw UsageError("fine-tuning needs an explicit batch_size");
  if (data.size(Split::kTrain) == 0) throw DataError("downstream train split is empty");

  Model model = base;
  model.drop_heads();
  const int d = model.config().dim;
  const int cap = cfg.max_valid_examples;
  const HeadOptions ho = cfg.head_options();
  const std::string task(to_string(data.task));
  Rng rng(derive_seed(seed, "finetune-head", static_cast<std::uint64_t>(data.task)));

  json meta = model.metadata();
  meta["task"] = task;
  meta["dataset"] = data.name;
  meta["dataset_hash"] = hex64(data.content_hash());
  meta["max_len"] = std::min(cfg.max_len, model.config().max_len);
  meta["head_options"] = {{"similarity_temperature", ho.similarity_temperature},
                          {"da_threshold", ho.da_threshold}};
  meta["finetune_seed"] = seed;
  meta.erase("labels");
  meta.erase("ontology");

  const int tr = static_cast<int>(Split::kTrain), va = static_cast<int>(Split::kValid);
  std::unique_ptr<Objective> obj;
  switch (data.task) {
    case DownstreamTask::kInt: {
      meta["labels"] = data.labels.to_json();
      LinearHead head = LinearHead::create(model.params(), "head.int", d,
                                           static_cast<int>(data.labels.labels.size()), rng);
      obj = std::make_unique<ExampleObjective<IntentExample>>(
          task, data.intents[tr], capped(data.intents[va], cap),
          [head](ag::Graph& g, const Encoder& e, const IntentExample& ex) -> std::optional<TaskLoss> {
            return int_loss(g, e, head, ex);
          });
      break;
    }
    case DownstreamTask::kDa: {
      meta["labels"] = data.labels.to_json();
      LinearHead head = LinearHead::create(model.params(), "head.da", d,
                                           static_cast<int>(data.labels.labels.size()), rng);
      obj = std::make_unique<ExampleObjective<ActExample>>(
          task, data.acts[tr], capped(data.acts[va], cap),
          [head, ho](ag::Graph& g, const Encoder& e, const ActExample& ex) -> std::optional<TaskLoss> {
            return da_loss(g, e, head, ex, ho);
          });
      break;
    }
    case DownstreamTask::kRs: {
      const int k = cfg.rs_negatives;
      auto train_pool = std::make_shared<std::vector<std::string>>(split_responses(data.responses[tr]));
      const auto* exs = &data.responses[tr];
      auto regen = [exs, train_pool, k, seed](int epoch) {
        return rs_items(*exs, *train_pool, k, derive_seed(seed, "RS", static_cast<std::uint64_t>(epoch)));
      };
      auto valid_exs = std::make_shared<std::vector<ResponseExample>>(capped(data.responses[va], cap));
      auto valid = rs_items(*valid_exs, all_responses(data), k, derive_seed(seed, "RS-valid"));
      auto objective = std::make_unique<ExampleObjective<RsItem>>(
          task, regen(0), std::move(valid),
          [ho, valid_exs](ag::Graph& g, const Encoder& e, const RsItem& it) -> std::optional<TaskLoss> {
            return rs_loss(g, e, *it.example, it.negatives, ho);
          },
          regen);
      obj = std::move(objective);
      break;
    }
    case DownstreamTask::kDst: {
      if (data.ontology.size() == 0) throw DataError("DST fine-tuning needs an ontology");
      meta["ontology"] = data.ontology.to_json();
      meta["ontology_order"] = data.ontology.pairs;
      ReferenceEncoder enc = model.encoder(cfg.max_len);
      SlotProjectionBank bank =
          SlotProjectionBank::create(model.params(), "head.dst", data.ontology, enc, rng);
      obj = std::make_unique<ExampleObjective<StateExample>>(
          task, data.states[tr], capped(data.states[va], cap),
          [bank, ho](ag::Graph& g, const Encoder& e, const StateExample& ex) -> std::optional<TaskLoss> {
            return dst_loss(g, e, bank, ex, ho);
          });
      break;
    }
  }
  model.metadata() = std::move(meta);
  std::vector<WeightedObjective> objs;
  objs.push_back({std::move(obj), 1.0});
  RunRecord rec = fit(model, objs, cfg, seed);
  rec.config["task"] = task;
  return {std::move(model), std::move(rec)};
}

namespace {

Ontology ontology_from_meta(const json& meta) {
  Ontology o = Ontology::from_json(meta.at("ontology"));
  if (meta.contains("ontology_order")) {
    // JSON objects do not keep insertion order; restore the training order.
    auto order = meta["ontology_order"].get<std::vector<std::string>>();
    Ontology r;
    for (const auto& p : order) {
      int i = o.pair_index(p);
      if (i < 0) throw DataError("checkpoint ontology is inconsistent");
      r.pairs.push_back(p);
      r.values.push_back(o.values[static_cast<std::size_t>(i)]);
    }
    return r;
  }
  return o;
}

}  // namespace

MetricReport evaluate(const Model& model, const DownstreamData& data, Split split, const EvalOptions& opts) {
  const json& meta = model.metadata();
  if (!meta.contains("task")) throw UsageError("model has not been fine-tuned on a downstream task");
  const DownstreamTask task = parse_downstream_task(meta["task"].get<std::string>());
  if (task != data.task)
    throw UsageError("model was fine-tuned for " + meta["task"].get<std::string>() + ", data is " +
                     std::string(to_string(data.task)));
  if (data.size(split) == 0) throw DataError("evaluation split is empty");

  ReferenceEncoder enc = model.encoder(meta.value("max_len", model.config().max_len));
  HeadOptions ho;
  if (meta.contains("head_options")) {
    ho.similarity_temperature = meta["head_options"].value("similarity_temperature", 1.0);
    ho.da_threshold = meta["head_options"].value("da_threshold", 0.5);
  }
  auto& store = const_cast<ag::ParameterStore&>(model.params());
  const int k = static_cast<int>(split);

  MetricReport r;
  r.task = std::string(to_string(task));
  r.dataset = data.name;
  switch (task) {
    case DownstreamTask::kInt: {
      LinearHead head(store, "head.int");
      if (head.classes() != static_cast<int>(data.labels.labels.size()))
        throw DataError("intent inventory differs from the fine-tuned head");
      std::vector<int> preds, golds;
      for (const auto& e : data.intents[k]) {
        preds.push_back(int_predict(enc, head, e.text));
        golds.push_back(e.label);
      }
      if (auto oos = data.labels.oos_index()) {
        IntentScores s = intent_metrics(preds, golds, *oos);
        r.metrics["acc_all"] = s.acc_all;
        if (s.acc_in) r.metrics["acc_in"] = *s.acc_in;
        r.metrics["acc_out"] = s.acc_out;
        if (s.recall_out) r.metrics["recall_out"] = *s.recall_out;
        else r.notes.push_back("no out-of-scope examples in the evaluation split");
      } else {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i];
        r.metrics["acc_all"] = static_cast<double>(hit) / static_cast<double>(preds.size());
        r.notes.push_back("label set has no out-of-scope label");
      }
      break;
    }
    case DownstreamTask::kDa: {
      LinearHead head(store, "head.da");
      if (head.classes() != static_cast<int>(data.labels.labels.size()))
        throw DataError("act inventory differs from the fine-tuned head");
      std::vector<LabelSetIds> preds, golds;
      for (const auto& e : data.acts[k]) {
        auto p = da_predict(enc, head, e.history, ho);
        preds.emplace_back(p.begin(), p.end());
        golds.emplace_back(e.acts.begin(), e.acts.end());
      }
      F1Scores f = f1_multilabel(preds, golds, head.classes());
      r.metrics["f1_micro"] = f.micro;
      r.metrics["f1_macro"] = f.macro;
      break;
    }
    case DownstreamTask::kRs: {
      const auto responses = all_responses(data);
      std::vector<std::vector<std::pair<double, bool>>> scored;
      for (std::size_t i = 0; i < data.responses[k].size(); ++i) {
        const auto& e = data.responses[k][i];
        Rng rng(derive_seed(opts.seed, "rs-eval", i));
        auto pool = response_pool(e.response, responses, opts.rs_pool, rng);
        // Random gold position, so ties cannot favour the gold response.
        std::vector<std::size_t> order(pool.size());
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        shuffle_in_place(order, rng);
        std::vector<std::string> shuffled;
        for (auto j : order) shuffled.push_back(pool[j]);
        auto s = rs_scores(enc, e.history, shuffled);
        std::vector<std::pair<double, bool>> row;
        for (std::size_t j = 0; j < s.size(); ++j) row.emplace_back(s[j], order[j] == 0);
        scored.push_back(std::move(row));
      }
      auto rk = recall_at_k(scored, {1, 3}, opts.rs_pool);
      const std::string prefix = "r" + std::to_string(opts.rs_pool) + "_at_";
      r.metrics[prefix + "1"] = rk[1];
      r.metrics[prefix + "3"] = rk[3];
      break;
    }
    case DownstreamTask::kDst: {
      SlotProjectionBank bank(store, "head.dst", ontology_from_meta(meta));
      std::vector<SlotState> preds, golds;
      for (const auto& e : data.states[k]) {
        preds.push_back(dst_predict(enc, bank, e.history, ho));
        golds.push_back(e.state);
      }
      DstScores s = dst_metrics(preds, golds);
      r.metrics["acc_joint"] = s.acc_joint;
      r.metrics["acc_slot"] = s.acc_slot;
      break;
    }
  }
  return r;
}

}  // namespace todpt

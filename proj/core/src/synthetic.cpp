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

#include "todpt/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>

#include "todpt/experiments.hpp"

namespace todpt {

namespace {

using Words = std::vector<std::string>;

const Words kFoods = {"italian", "chinese", "indian", "french", "thai", "mexican"};
const Words kAreas = {"north", "south", "east", "west", "centre"};
const Words kStars = {"2", "3", "4", "5"};
const Words kPeople = {"1", "2", "3", "4", "5", "6", "7", "8"};
const Words kDestinations = {"Cambridge Station", "Kings College",      "Grafton Centre",
                             "Botanic Garden",    "Addenbrookes Hospital", "Market Square"};
const Words kRestaurants = {"Golden Curry", "Pizza Palace", "Sitar House", "Blue Lotus",
                            "Red Lion",     "Jade Garden",  "Little Seoul", "Casa Mia",
                            "Curry King",   "Saigon City"};
const Words kHotels = {"Acorn Guest House", "Royal Inn",    "Hamilton Lodge", "Lensfield Hotel",
                       "Alpha Milton",      "Ashley Hotel", "Gonville Hotel", "Avalon"};
const Words kStreets = {"Mill", "Regent", "Trumpington", "Hills", "Castle", "Station"};
const Words kCars = {"black toyota", "white skoda", "red tesla", "blue ford", "grey audi"};

const std::string& pick(const Words& w, Rng& rng) { return w[uniform_index(rng, w.size())]; }

bool chance(Rng& rng, double p) { return uniform01(rng) < p; }

std::string digits(Rng& rng, int n) {
  std::string s;
  s += static_cast<char>('1' + uniform_index(rng, 9));
  for (int i = 1; i < n; ++i) s += static_cast<char>('0' + uniform_index(rng, 10));
  return s;
}

std::string fill(std::string t, const std::map<std::string, std::string>& vars) {
  for (const auto& [k, v] : vars) {
    const std::string key = "{" + k + "}";
    for (std::size_t pos = t.find(key); pos != std::string::npos; pos = t.find(key, pos + v.size()))
      t.replace(pos, key.size(), v);
  }
  return t;
}

std::map<std::string, std::string> empty_state() {
  std::map<std::string, std::string> s;
  for (const auto& p : synthetic_ontology().pairs) s[p] = "none";
  return s;
}

class Builder {
 public:
  explicit Builder(Rng& rng) : rng_(rng), state_(empty_state()) {}

  void user(const std::string& text, const std::map<std::string, std::string>& updates = {}) {
    for (const auto& [k, v] : updates) state_[k] = v;
    turns_.push_back({Speaker::kUser, text, {}, state_});
  }
  void system(const std::string& text, std::vector<std::string> acts) {
    std::sort(acts.begin(), acts.end());
    turns_.push_back({Speaker::kSystem, text, std::move(acts), state_});
  }

  void restaurant(const std::string& prefix) {
    const std::string food = pick(kFoods, rng_), area = pick(kAreas, rng_);
    const std::string name = pick(kRestaurants, rng_), n = pick(kPeople, rng_);
    std::map<std::string, std::string> v = {{"food", food}, {"area", area}, {"name", name}, {"n", n}};
    std::string u = prefix + pick({"i am looking for a {food} restaurant", "i want to eat {food} food",
                                   "can you find me a {food} place to eat", "is there a {food} restaurant"},
                                  rng_);
    const bool with_area = chance(rng_, 0.4);
    if (with_area) u += " in the {area}";
    user(fill(u, v), with_area ? std::map<std::string, std::string>{{"restaurant-food", food}, {"restaurant-area", area}}
                               : std::map<std::string, std::string>{{"restaurant-food", food}});
    if (!with_area) {
      greet_or(pick({"what area would you like ?", "which part of town do you prefer ?",
                     "do you have an area in mind ?"},
                    rng_),
               {"request"});
      user(fill(pick({"the {area} please", "somewhere in the {area}", "i prefer the {area} part of town",
                      "{area} would be nice"},
                     rng_),
                v),
           {{"restaurant-area", area}});
    }
    std::string offer = fill(pick({"{name} serves {food} food in the {area} .",
                                   "i recommend {name} , a {food} restaurant in the {area} .",
                                   "how about {name} ? it is in the {area} ."},
                                  rng_),
                             v);
    std::vector<std::string> acts = {"inform", "offer"};
    if (chance(rng_, 0.5)) {
      offer += " shall i book a table ?";
      acts.push_back("request");
    }
    greet_or(offer, acts);
    if (chance(rng_, 0.7)) {
      user(fill(pick({"yes please , book it for {n} people", "book a table for {n} people please",
                      "can you reserve it for {n} people ?"},
                     rng_),
                v),
           {{"restaurant-people", n}});
      v["ref"] = digits(rng_, 6);
      std::string s = fill(pick({"booked ! the reference number is {ref} .",
                                 "your table for {n} is reserved , reference {ref} .",
                                 "done , your reference is {ref} ."},
                                rng_),
                           v);
      std::vector<std::string> b = {"book", "inform"};
      if (chance(rng_, 0.4)) {
        s += " anything else ?";
        b.push_back("reqmore");
      }
      system(s, b);
    } else {
      user(pick({"no thanks , i just need the address", "what is the address ?"}, rng_));
      v["num"] = digits(rng_, 2);
      v["street"] = pick(kStreets, rng_);
      system(fill(pick({"the address is {num} {street} road .", "it is at {num} {street} street ."}, rng_), v),
             {"inform"});
    }
  }

  void hotel(const std::string& prefix) {
    const std::string stars = pick(kStars, rng_), area = pick(kAreas, rng_);
    const std::string name = pick(kHotels, rng_), n = pick(kPeople, rng_);
    std::map<std::string, std::string> v = {{"stars", stars}, {"area", area}, {"name", name}, {"n", n}};
    std::string u = prefix + pick({"i need a {stars} star hotel", "find me a hotel with {stars} stars",
                                   "i am looking for a place to stay with {stars} stars"},
                                  rng_);
    const bool with_area = chance(rng_, 0.4);
    if (with_area) u += " in the {area}";
    user(fill(u, v), with_area ? std::map<std::string, std::string>{{"hotel-stars", stars}, {"hotel-area", area}}
                               : std::map<std::string, std::string>{{"hotel-stars", stars}});
    if (!with_area) {
      greet_or(pick({"which area should the hotel be in ?", "any preference for the area ?"}, rng_),
               {"request"});
      user(fill(pick({"the {area} please", "it should be in the {area}", "{area} is fine"}, rng_), v),
           {{"hotel-area", area}});
    }
    greet_or(fill(pick({"{name} is a {stars} star hotel in the {area} .",
                        "there is {name} in the {area} , it has {stars} stars ."},
                       rng_),
                  v),
             {"inform", "offer"});
    if (chance(rng_, 0.5)) {
      user(fill(pick({"please book it for {n} people", "book a room for {n} people"}, rng_), v));
      v["ref"] = digits(rng_, 6);
      system(fill(pick({"your room is booked , reference {ref} .", "all set , the reference is {ref} ."}, rng_), v),
             {"book", "inform"});
    }
  }

  void taxi(const std::string& prefix) {
    const std::string dest = pick(kDestinations, rng_);
    std::map<std::string, std::string> v = {{"dest", dest}, {"car", pick(kCars, rng_)}, {"phone", digits(rng_, 5)}};
    user(fill(prefix + pick({"i need a taxi to {dest}", "can you get me a cab to {dest} ?",
                             "book a taxi to {dest} please"},
                            rng_),
              v),
         {{"taxi-destination", dest}});
    greet_or(fill(pick({"a {car} will pick you up , the contact number is {phone} .",
                        "booked a {car} , call {phone} if needed ."},
                       rng_),
                  v),
             {"book", "inform"});
  }

  void close() {
    user(pick({"thanks , that is all", "thank you , bye", "great , thanks for your help",
               "that is everything , thanks"},
              rng_));
    system(pick({"you are welcome , goodbye .", "have a nice day .", "glad i could help , bye ."}, rng_),
           {"bye"});
  }

  void set_greeted(bool g) { greeted_ = g; }
  std::vector<SyntheticTurn> take() { return std::move(turns_); }

 private:
  // The first system turn after a user greeting says hello back.
  void greet_or(const std::string& text, std::vector<std::string> acts) {
    if (greeted_) {
      greeted_ = false;
      acts.push_back("greet");
      system("hello ! " + text, std::move(acts));
    } else {
      system(text, std::move(acts));
    }
  }

  Rng& rng_;
  std::map<std::string, std::string> state_;
  std::vector<SyntheticTurn> turns_;
  bool greeted_ = false;
};

template <typename T>
std::vector<T> pick_examples(std::size_t count, std::uint64_t seed,
                             const std::function<std::vector<T>(const std::vector<SyntheticTurn>&)>& from) {
  std::vector<T> out;
  Rng rng(seed);
  while (out.size() < count) {
    auto turns = synthetic_dialogue(rng);
    auto cands = from(turns);
    if (cands.empty()) continue;
    out.push_back(std::move(cands[uniform_index(rng, cands.size())]));
  }
  return out;
}

std::vector<Utterance> history(const std::vector<SyntheticTurn>& turns, std::size_t end) {
  std::vector<Utterance> h;
  for (std::size_t i = 0; i < end; ++i) h.push_back({turns[i].speaker, turns[i].text, {}});
  return h;
}

}  // namespace

std::vector<SyntheticTurn> synthetic_dialogue(Rng& rng) {
  Builder b(rng);
  std::vector<int> domains = {0, 1, 2};
  shuffle_in_place(domains, rng);
  const int segments = chance(rng, 0.5) ? 2 : 1;
  for (int s = 0; s < segments; ++s) {
    std::string prefix;
    if (s == 0 && chance(rng, 0.5)) {
      prefix = "hi , ";
      b.set_greeted(true);
    } else if (s > 0) {
      prefix = "also , ";
    }
    switch (domains[static_cast<std::size_t>(s)]) {
      case 0: b.restaurant(prefix); break;
      case 1: b.hotel(prefix); break;
      default: b.taxi(prefix); break;
    }
  }
  b.close();
  return b.take();
}

Corpus synthetic_corpus(std::size_t dialogues, std::uint64_t seed, const std::string& name) {
  Corpus c;
  c.name = name;
  Rng rng(derive_seed(seed, "synthetic-corpus"));
  for (std::size_t i = 0; i < dialogues; ++i) {
    Dialogue d;
    d.id = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
    for (auto& t : synthetic_dialogue(rng)) d.utterances.push_back({t.speaker, std::move(t.text), {}});
    c.dialogues.push_back(std::move(d));
  }
  return c;
}

const std::vector<std::string>& synthetic_intents() {
  static const std::vector<std::string> v = {"find_restaurant", "book_restaurant", "find_hotel", "book_hotel",
                                             "get_taxi",        "ask_address",     "oos"};
  return v;
}

const std::vector<std::string>& synthetic_acts() {
  static const std::vector<std::string> v = {"book", "bye", "greet", "inform", "offer", "reqmore", "request"};
  return v;
}

Ontology synthetic_ontology() {
  Ontology o;
  auto with_none = [](Words w) {
    w.insert(w.begin(), "none");
    return w;
  };
  o.pairs = {"hotel-area", "hotel-stars", "restaurant-area", "restaurant-food", "restaurant-people",
             "taxi-destination"};
  o.values = {with_none(kAreas), with_none(kStars),  with_none(kAreas),
              with_none(kFoods), with_none(kPeople), with_none(kDestinations)};
  return o;
}

namespace {

IntentExample synthetic_intent(Rng& rng) {
  static const std::vector<Words> templates = {
      {"i am looking for a {food} restaurant", "find me a place that serves {food} food",
       "where can i eat {food} food in the {area}"},
      {"book a table for {n} at {rname}", "reserve {rname} for {n} people", "can i get a table at {rname} tonight"},
      {"i need a {stars} star hotel", "find a hotel in the {area}", "where can i stay in the {area} tonight"},
      {"book a room at {hname} for {n} people", "reserve a room at {hname}", "i want to book {hname} for {n} nights"},
      {"i need a taxi to {dest}", "call me a cab to {dest}", "get me a ride to {dest}"},
      {"what is the address of {rname}", "where is {hname} located", "how do i get to {rname}"},
      {"tell me a joke about {animal}", "what is the weather in {city} tomorrow", "how do i reset my password",
       "set an alarm for {n} am", "who won the football game", "translate hello into {lang}"}};
  static const Words animals = {"cats", "dogs", "penguins"};
  static const Words cities = {"Paris", "Boston", "Tokyo"};
  static const Words langs = {"spanish", "german", "japanese"};
  const std::size_t label = uniform_index(rng, templates.size());
  std::map<std::string, std::string> v = {
      {"food", pick(kFoods, rng)},      {"area", pick(kAreas, rng)},    {"n", pick(kPeople, rng)},
      {"rname", pick(kRestaurants, rng)}, {"hname", pick(kHotels, rng)}, {"stars", pick(kStars, rng)},
      {"dest", pick(kDestinations, rng)}, {"animal", pick(animals, rng)}, {"city", pick(cities, rng)},
      {"lang", pick(langs, rng)}};
  return {fill(pick(templates[label], rng), v), static_cast<int>(label)};
}

}  // namespace

DownstreamData synthetic_downstream(DownstreamTask task, const SyntheticSizes& sizes, std::uint64_t seed,
                                    const std::string& name) {
  DownstreamData data;
  data.task = task;
  data.name = name.empty() ? "synthetic-" + to_lower(to_string(task)) : name;
  const std::size_t counts[3] = {sizes.train, sizes.valid, sizes.test};
  const char* split_names[3] = {"train", "valid", "test"};
  for (int k = 0; k < 3; ++k) {
    const std::uint64_t s = derive_seed(seed, std::string(to_string(task)) + "-" + split_names[k]);
    switch (task) {
      case DownstreamTask::kInt: {
        Rng rng(s);
        for (std::size_t i = 0; i < counts[k]; ++i) data.intents[k].push_back(synthetic_intent(rng));
        break;
      }
      case DownstreamTask::kDa: {
        const auto& acts = synthetic_acts();
        data.acts[k] = pick_examples<ActExample>(counts[k], s, [&](const std::vector<SyntheticTurn>& t) {
          std::vector<ActExample> out;
          for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i].speaker != Speaker::kSystem) continue;
            ActExample e;
            e.history = history(t, i + 1);
            for (const auto& a : t[i].acts)
              e.acts.push_back(static_cast<int>(std::find(acts.begin(), acts.end(), a) - acts.begin()));
            std::sort(e.acts.begin(), e.acts.end());
            out.push_back(std::move(e));
          }
          return out;
        });
        break;
      }
      case DownstreamTask::kRs: {
        data.responses[k] = pick_examples<ResponseExample>(counts[k], s, [](const std::vector<SyntheticTurn>& t) {
          std::vector<ResponseExample> out;
          for (std::size_t i = 1; i < t.size(); ++i)
            if (t[i].speaker == Speaker::kSystem) out.push_back({history(t, i), t[i].text});
          return out;
        });
        break;
      }
      case DownstreamTask::kDst: {
        data.states[k] = pick_examples<StateExample>(counts[k], s, [](const std::vector<SyntheticTurn>& t) {
          std::vector<StateExample> out;
          for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i].speaker == Speaker::kUser) out.push_back({history(t, i + 1), t[i].state});
          return out;
        });
        break;
      }
    }
  }
  if (task == DownstreamTask::kInt) {
    data.labels.labels = synthetic_intents();
    data.labels.oos_label = "oos";
  } else if (task == DownstreamTask::kDa) {
    data.labels.labels = synthetic_acts();
  } else if (task == DownstreamTask::kDst) {
    data.ontology = synthetic_ontology();
  }
  return data;
}

namespace {

// Spec entry for one of the standard rows.
nlohmann::json standard_pretrain_row(const std::string& name) {
  for (const auto& c : standard_pretrain_configs()) {
    if (c.name != name) continue;
    nlohmann::json row = c.spec ? c.spec->to_json() : nlohmann::json{{"tasks", nullptr}};
    row["name"] = name;
    return row;
  }
  throw UsageError("unknown pre-training row '" + name + "'");
}

std::size_t distinct_responses(const DownstreamData& d) {
  std::set<std::string> seen;
  for (const auto& split : d.responses)
    for (const auto& e : split) seen.insert(e.response);
  return seen.size();
}

}  // namespace

nlohmann::json write_synthetic_fixtures(const std::filesystem::path& dir, const FixtureOptions& opts) {
  using nlohmann::json;
  std::filesystem::create_directories(dir);
  const Corpus corpus = synthetic_corpus(opts.dialogues, opts.seed, "synthetic");
  save_corpus(corpus, dir / "corpus.jsonl");
  json downstream = json::array();
  const std::pair<DownstreamTask, std::uint64_t> tasks[] = {
      {DownstreamTask::kInt, 1}, {DownstreamTask::kDa, 2}, {DownstreamTask::kRs, 3}, {DownstreamTask::kDst, 4}};
  for (const auto& [task, salt] : tasks) {
    const std::string id = to_lower(to_string(task));
    if (!opts.tasks.empty() &&
        std::none_of(opts.tasks.begin(), opts.tasks.end(), [&](const std::string& t) { return to_lower(t) == id; }))
      continue;
    const std::string name = "syn-" + id;
    SyntheticSizes n = opts.sizes;
    DownstreamData data = synthetic_downstream(task, n, derive_seed(opts.seed, id, salt), name);
    // Response selection ranks against 99 distinct negatives.
    while (task == DownstreamTask::kRs && distinct_responses(data) < 110) {
      n.train += 64;
      data = synthetic_downstream(task, n, derive_seed(opts.seed, id, salt), name);
    }
    save_downstream(data, dir / name);
    downstream.push_back({{"task", std::string(to_string(task))}, {"dataset", name}, {"name", name}});
  }
  json train = {{"learning_rate", 1e-3}, {"batch_size", opts.batch_size}, {"max_len", opts.max_len},
                {"max_valid_examples", 32}, {"patience", 3}};
  json pre = train, fine = train;
  pre["max_steps"] = opts.pretrain_steps;
  fine["max_steps"] = opts.finetune_steps;
  json spec = {{"name", "Synthetic grid"},
               {"output_dir", "runs"},
               {"corpus", "corpus.jsonl"},
               {"encoder", {{"dim", opts.dim}, {"layers", opts.layers}, {"heads", 2}, {"max_len", opts.max_len}}},
               {"base_seed", opts.seed},
               {"pretrain_seed", opts.seed},
               {"seeds", opts.seeds},
               {"pretrain_config", pre},
               {"finetune_config", fine},
               {"pretrain", "standard"},
               {"downstream", downstream},
               {"views", "standard"}};
  if (!opts.pretrain_rows.empty()) {
    json rows = json::array();
    for (const auto& name : opts.pretrain_rows) rows.push_back(standard_pretrain_row(name));
    spec["pretrain"] = rows;
    spec["views"] = json::array();
  }
  std::ofstream out(dir / "spec.json");
  out << spec.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "spec.json").string());
  return {{"out", dir.string()},
          {"dialogues", corpus.dialogues.size()},
          {"utterances", corpus.utterance_count()},
          {"spec", (dir / "spec.json").string()}};
}

}  // namespace todpt

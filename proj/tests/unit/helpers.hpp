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

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "todpt/corpus.hpp"
#include "todpt/model.hpp"
#include "todpt/vocab.hpp"

namespace todpt::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(TODPT_FIXTURE_DIR) / name;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("todpt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Utterance utt(Speaker s, std::string text, std::optional<int> entities = std::nullopt) {
  return Utterance{s, std::move(text), entities};
}

inline Dialogue dialogue(std::string id, std::vector<std::string> texts) {
  Dialogue d;
  d.id = std::move(id);
  for (std::size_t i = 0; i < texts.size(); ++i)
    d.utterances.push_back(utt(i % 2 == 0 ? Speaker::kUser : Speaker::kSystem, texts[i]));
  return d;
}

inline Corpus load_fixture_corpus() { return load_corpus(fixture("corpus50.jsonl"), Split::kTrain); }

inline EncoderConfig tiny_encoder(int dim = 16, int layers = 2, int max_len = 64) {
  EncoderConfig c;
  c.dim = dim;
  c.layers = layers;
  c.heads = 2;
  c.max_len = max_len;
  return c;
}

}  // namespace todpt::testing

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "todpt/autograd.hpp"

namespace todpt::testing {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;
  std::vector<double> analytic, numeric;  // per sampled coordinate

  // ||a - n|| / max(||a||, ||n||, floor) over all sampled coordinates.
  double vector_rel_error(double floor = 1e-6) const {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
  }
};

// Compares reverse-mode gradients with central differences on `samples`
// randomly chosen trainable coordinates. The relative error of one coordinate
// is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(ag::ParameterStore& store, const std::function<ag::Var(ag::Graph&)>& loss,
                                 Rng& rng, int samples, double step = 1e-3, double floor = 1e-6,
                                 const std::function<bool(const std::string&)>& include = nullptr) {
  store.zero_grad();
  {
    ag::Graph g;
    ag::Var l = loss(g);
    g.backward(l);
  }
  std::vector<ag::Parameter*> params;
  for (auto& [name, p] : store)
    if (p.trainable && (!include || include(name))) params.push_back(&p);
  GradCheck out;
  auto eval = [&] {
    ag::Graph g;
    return loss(g).scalar();
  };
  for (int s = 0; s < samples; ++s) {
    ag::Parameter& p = *params[uniform_index(rng, params.size())];
    const auto r = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.value.rows())));
    const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.value.cols())));
    const double analytic = p.grad.size() ? p.grad(r, c) : 0.0;
    const double orig = p.value(r, c);
    p.value(r, c) = orig + step;
    const double up = eval();
    p.value(r, c) = orig - step;
    const double down = eval();
    p.value(r, c) = orig;
    const double numeric = (up - down) / (2 * step);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++out.coordinates;
    out.analytic.push_back(analytic);
    out.numeric.push_back(numeric);
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = p.name + "[" + std::to_string(r) + "," + std::to_string(c) + "] analytic=" + sci(analytic) +
                  " numeric=" + sci(numeric);
    }
  }
  return out;
}

}  // namespace todpt::testing

namespace todpt::testing {

// Random corpus for property tests: 2-30 dialogues of 2-14 turns. Every
// dialogue opens with a USER then a SYSTEM turn; later roles are random.
// Texts mix lower-case words, capitalized names and numbers.
inline Corpus random_corpus(Rng& rng, bool annotated = false) {
  static const std::vector<std::string> words = {
      "i",     "need",  "a",     "table", "for",   "book",  "the",    "hotel", "is",  "in",
      "centre", "north", "cheap", "taxi",  "to",    "from",  "please", "yes",   "no",  "thanks",
      "what",  "time",  "area",  "food",  "any",   "there", "Golden", "Wok",   "Ely", "Cambridge",
      "Lodge", "Kings", "3",     "12",    "1400",  "7",     "?",      ".",     ",",   "ok"};
  Corpus c;
  c.name = "random";
  const std::size_t n = 2 + uniform_index(rng, 29);
  for (std::size_t i = 0; i < n; ++i) {
    Dialogue d;
    d.id = "r" + std::to_string(i);
    const std::size_t len = 2 + uniform_index(rng, 13);
    for (std::size_t t = 0; t < len; ++t) {
      Speaker s = t == 0 ? Speaker::kUser
                  : t == 1 ? Speaker::kSystem
                           : (uniform01(rng) < 0.5 ? Speaker::kUser : Speaker::kSystem);
      std::string text = words[uniform_index(rng, words.size())];
      const std::size_t extra = uniform_index(rng, 8);
      for (std::size_t k = 0; k < extra; ++k) text += " " + words[uniform_index(rng, words.size())];
      text += " #" + std::to_string(i) + "-" + std::to_string(t);  // keeps texts distinct
      std::optional<int> ents;
      if (annotated) ents = static_cast<int>(uniform_index(rng, 15));
      d.utterances.push_back({s, text, ents});
    }
    c.dialogues.push_back(std::move(d));
  }
  return c;
}

}  // namespace todpt::testing

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

#include <fstream>

#include "helpers.hpp"
#include "todpt/model.hpp"

using namespace todpt;
using namespace todpt::testing;

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempDir tmp;
  Model m = Model::create(tiny_encoder(), Vocabulary::build(load_fixture_corpus()), 5);
  Rng rng(1);
  auto& head = m.params().create_normal("head.int.weight", 16, 4, 1.0, rng);
  head.value(0, 0) = 1.0 / 3.0;
  m.params().create_constant("head.dst.values.a-b", 2, 16, 0.25).trainable = false;
  m.metadata()["task"] = "INT";
  save_checkpoint(m, tmp / "m.ckpt");
  Model back = load_checkpoint(tmp / "m.ckpt");
  CHECK(back.config() == m.config());
  CHECK(back.vocabulary() == m.vocabulary());
  CHECK(back.metadata() == m.metadata());
  REQUIRE(back.params().size() == m.params().size());
  for (const auto& [name, p] : m.params()) {
    CAPTURE(name);
    const auto& q = back.params().get(name);
    CHECK(q.trainable == p.trainable);
    CHECK((q.value.array() == p.value.array()).all());
  }
}

TEST_CASE("copies are deep and drop_heads keeps the encoder") {
  Model m = Model::create(tiny_encoder(), Vocabulary(), 1);
  m.params().create_constant("head.x.weight", 1, 1, 2.0);
  Model copy = m;
  copy.params().get("head.x.weight").value(0, 0) = 5.0;
  CHECK(m.params().get("head.x.weight").value(0, 0) == 2.0);
  const std::size_t encoder_params = m.params().size() - 1;
  m.drop_heads();
  CHECK(m.params().size() == encoder_params);
  CHECK_FALSE(m.params().contains("head.x.weight"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir tmp;
  std::ofstream(tmp / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(tmp / "bad.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.ckpt"), DataError);

  Model m = Model::create(tiny_encoder(), Vocabulary(), 1);
  save_checkpoint(m, tmp / "m.ckpt");
  const auto size = std::filesystem::file_size(tmp / "m.ckpt");
  std::filesystem::resize_file(tmp / "m.ckpt", size - 8);
  CHECK_THROWS_AS(load_checkpoint(tmp / "m.ckpt"), DataError);
}

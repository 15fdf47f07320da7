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

#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "todpt/autograd.hpp"
#include "todpt/encoder.hpp"
#include "todpt/vocab.hpp"

namespace todpt {

// Encoder configuration, vocabulary and every parameter (encoder and heads)
// in one store. `metadata` carries what is needed to rebuild heads: the
// fine-tuned task, its labels or ontology, and the pre-training history.
class Model {
 public:
  Model(EncoderConfig config, Vocabulary vocab, std::unique_ptr<ag::ParameterStore> params,
        nlohmann::json metadata = nlohmann::json::object());
  // Freshly initialized reference encoder.
  static Model create(const EncoderConfig& config, Vocabulary vocab, std::uint64_t seed);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ag::ParameterStore& params() { return *params_; }
  const ag::ParameterStore& params() const { return *params_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  const ReferenceEncoder& encoder() const { return *encoder_; }
  // Same parameters, shorter input limit.
  ReferenceEncoder encoder(int max_len) const;

  // Drops every parameter outside the encoder.
  void drop_heads();

 private:
  EncoderConfig config_;
  Vocabulary vocab_;
  std::unique_ptr<ag::ParameterStore> params_;
  nlohmann::json metadata_;
  std::unique_ptr<ReferenceEncoder> encoder_;
};

// Binary checkpoint: "TODPTCK1", a little-endian u64 header length, a JSON
// header (config, vocabulary, metadata, tensor index) and raw float64 tensor
// data in index order. Round trips are bit-exact.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace todpt

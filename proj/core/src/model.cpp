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

#include "todpt/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace todpt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'O', 'D', 'P', 'T', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

}  // namespace

Model::Model(EncoderConfig config, Vocabulary vocab, std::unique_ptr<ag::ParameterStore> params,
             json metadata)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      params_(std::move(params)),
      metadata_(std::move(metadata)) {
  config_.validate();
  encoder_ = std::make_unique<ReferenceEncoder>(config_, vocab_, *params_);
}

Model Model::create(const EncoderConfig& config, Vocabulary vocab, std::uint64_t seed) {
  config.validate();
  auto store = std::make_unique<ag::ParameterStore>();
  ReferenceEncoder::initialize(config, vocab.size(), *store, seed);
  return Model(config, std::move(vocab), std::move(store));
}

Model::Model(const Model& other)
    : config_(other.config_),
      vocab_(other.vocab_),
      params_(std::make_unique<ag::ParameterStore>(*other.params_)),
      metadata_(other.metadata_),
      encoder_(std::make_unique<ReferenceEncoder>(config_, vocab_, *params_)) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

ReferenceEncoder Model::encoder(int max_len) const {
  EncoderConfig c = config_;
  c.max_len = std::min(c.max_len, max_len);
  return ReferenceEncoder(c, vocab_, *params_);
}

void Model::drop_heads() {
  std::vector<std::string> doomed;
  for (const auto& [name, _] : *params_)
    if (name.rfind("encoder.", 0) != 0) doomed.push_back(name);
  for (const auto& n : doomed) params_->erase_prefix(n);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  json index = json::array();
  for (const auto& [name, p] : model.params())
    index.push_back({{"name", name},
                     {"rows", p.value.rows()},
                     {"cols", p.value.cols()},
                     {"trainable", p.trainable}});
  json header = {{"format", 1},
                 {"encoder", model.config().to_json()},
                 {"vocabulary", model.vocabulary().tokens()},
                 {"metadata", model.metadata()},
                 {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, p] : model.params())
      out.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError(path.string() + ": not a todpt checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw DataError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  auto config = EncoderConfig::from_json(header.at("encoder"));
  Vocabulary vocab(header.at("vocabulary").get<std::vector<std::string>>());
  auto store = std::make_unique<ag::ParameterStore>();
  for (const auto& t : header.at("tensors")) {
    auto& p = store->create(t.at("name").get<std::string>(), t.at("rows").get<Eigen::Index>(),
                            t.at("cols").get<Eigen::Index>());
    p.trainable = t.value("trainable", true);
  }
  for (auto& [name, p] : *store) {
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw DataError(path.string() + ": truncated tensor '" + name + "'");
  }
  return Model(config, std::move(vocab), std::move(store), header.value("metadata", json::object()));
}

}  // namespace todpt

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

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "todpt/common.hpp"
#include "todpt/synthetic.hpp"

using namespace todpt;

// Writes a synthetic corpus, one dataset per downstream task and a small
// experiment spec that runs the full grid over them.
int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic fixtures for todpt"};
  std::string out;
  FixtureOptions opts;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", opts.seed, "Generator seed");
  app.add_option("--dialogues", opts.dialogues, "Pre-training corpus size");
  app.add_option("--train", opts.sizes.train, "Downstream train examples");
  app.add_option("--valid", opts.sizes.valid, "Downstream valid examples");
  app.add_option("--test", opts.sizes.test, "Downstream test examples");
  app.add_option("--dim", opts.dim, "Encoder width in the spec");
  app.add_option("--layers", opts.layers, "Encoder depth in the spec");
  app.add_option("--pretrain-steps", opts.pretrain_steps, "Pre-training step budget in the spec");
  app.add_option("--finetune-steps", opts.finetune_steps, "Fine-tuning step budget in the spec");
  app.add_option("--batch-size", opts.batch_size, "Batch size in the spec");
  app.add_option("--seeds", opts.seeds, "Fine-tuning seeds in the spec");
  app.add_option("--rows", opts.pretrain_rows, "Pre-training rows (default: all)");
  app.add_option("--tasks", opts.tasks, "Downstream tasks (default: all)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::cout << write_synthetic_fixtures(out, opts).dump(2) << "\n";
  } catch (const UsageError& e) {
    std::cerr << "todpt_make_fixtures: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "todpt_make_fixtures: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

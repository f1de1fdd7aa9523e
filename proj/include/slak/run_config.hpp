// Copyright 2026 The slak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "slak/model.hpp"
#include "slak/trainer.hpp"

namespace slak {

// Everything a training run needs. Serialized as a flat JSON object with
// dotted keys, e.g. {"train.total_steps": 10, "model.preset": "micro"}.
struct RunConfig {
  ModelConfig model = ModelConfig::slak_micro();
  TrainConfig train;
  bool seed_set = false;  // false: SLAK_SEED or 0 at resolve()
  std::string out_dir = "out";
  // Early stop on trailing train accuracy; 0 disables.
  double stop_accuracy = 0.0;
  int stop_window = 25;

  // Fills unset seeds from SLAK_SEED and ties the task geometry to the
  // model input. Validates every field.
  void resolve();
  nlohmann::ordered_json to_json() const;
};

// Named starting points for "model.preset".
ModelConfig model_preset(const std::string& name);

// Applies one dotted key. Unknown keys and ill-typed values throw
// kInvalidConfig naming the key.
void apply_key(RunConfig& config, const std::string& key,
               const nlohmann::json& value);

// Accepts both flat dotted keys and nested objects. "model.preset" is
// applied before any other model key.
RunConfig run_config_from_json(const nlohmann::json& doc,
                               RunConfig base = {});
RunConfig load_run_config(const std::string& path);

// "key=value"; the value is parsed as JSON and falls back to a string.
void apply_override(RunConfig& config, const std::string& assignment);

std::vector<std::string> run_config_keys();

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

}  // namespace slak

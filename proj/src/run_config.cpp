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


#include "slak/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>

#include "slak/error.hpp"

namespace slak {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::kInvalidConfig, key + ": " + why);
}

long long as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) bad(key, "expected an integer, got " + v.dump());
  return v.get<long long>();
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) bad(key, "expected a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad(key, "expected true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad(key, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

std::vector<int> as_int_list(const std::string& key, const json& v) {
  if (!v.is_array()) bad(key, "expected a list of integers, got " + v.dump());
  std::vector<int> out;
  for (const auto& e : v) out.push_back(static_cast<int>(as_int(key, e)));
  return out;
}

struct Field {
  std::string key;
  std::function<ordered_json(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const json&)> set;
};

#define SLAK_INT_FIELD(name, member)                                        \
  Field{name, [](const RunConfig& c) { return ordered_json(c.member); },     \
        [](RunConfig& c, const std::string& k, const json& v) {              \
          c.member = static_cast<decltype(c.member)>(as_int(k, v));          \
        }}
#define SLAK_DOUBLE_FIELD(name, member)                                     \
  Field{name, [](const RunConfig& c) { return ordered_json(c.member); },     \
        [](RunConfig& c, const std::string& k, const json& v) {              \
          c.member = as_double(k, v);                                        \
        }}
#define SLAK_BOOL_FIELD(name, member)                                       \
  Field{name, [](const RunConfig& c) { return ordered_json(c.member); },     \
        [](RunConfig& c, const std::string& k, const json& v) {              \
          c.member = as_bool(k, v);                                          \
        }}
#define SLAK_LIST_FIELD(name, member)                                       \
  Field{name, [](const RunConfig& c) { return ordered_json(c.member); },     \
        [](RunConfig& c, const std::string& k, const json& v) {              \
          c.member = as_int_list(k, v);                                      \
        }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SLAK_LIST_FIELD("model.stage_blocks", model.stage_blocks),
      SLAK_LIST_FIELD("model.stage_dims", model.stage_dims),
      SLAK_LIST_FIELD("model.stage_kernels", model.stage_kernels),
      SLAK_INT_FIELD("model.short_edge", model.short_edge),
      Field{"model.dw_variant",
            [](const RunConfig& c) { return ordered_json(c.model.dw_variant.str()); },
            [](RunConfig& c, const std::string& k, const json& v) {
              try {
                c.model.dw_variant = DwVariant::parse(as_string(k, v));
              } catch (const Error& e) {
                bad(k, e.what());
              }
            }},
      SLAK_DOUBLE_FIELD("model.layer_scale_init", model.layer_scale_init),
      SLAK_DOUBLE_FIELD("model.drop_path_rate", model.drop_path_rate),
      SLAK_INT_FIELD("model.num_classes", model.num_classes),
      SLAK_INT_FIELD("model.in_channels", model.in_channels),
      SLAK_INT_FIELD("model.input_size", model.input_size),
      SLAK_DOUBLE_FIELD("train.peak_lr", train.peak_lr),
      SLAK_INT_FIELD("train.warmup_steps", train.warmup_steps),
      SLAK_INT_FIELD("train.total_steps", train.total_steps),
      SLAK_DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      SLAK_DOUBLE_FIELD("train.label_smoothing", train.label_smoothing),
      SLAK_INT_FIELD("train.batch", train.batch),
      Field{"train.seed",
            [](const RunConfig& c) { return ordered_json(c.train.seed); },
            [](RunConfig& c, const std::string& k, const json& v) {
              if (!v.is_number_unsigned() &&
                  !(v.is_number_integer() && v.get<long long>() >= 0)) {
                bad(k, "expected a non-negative integer, got " + v.dump());
              }
              c.train.seed = v.get<std::uint64_t>();
              c.seed_set = true;
            }},
      SLAK_DOUBLE_FIELD("train.sparsity", train.sparsity),
      Field{"train.scope",
            [](const RunConfig& c) { return ordered_json(to_string(c.train.scope)); },
            [](RunConfig& c, const std::string& k, const json& v) {
              try {
                c.train.scope = parse_plan_scope(as_string(k, v));
              } catch (const Error& e) {
                bad(k, e.what());
              }
            }},
      SLAK_INT_FIELD("train.adaptation.frequency", train.adaptation.frequency),
      SLAK_DOUBLE_FIELD("train.adaptation.initial_rate",
                        train.adaptation.initial_rate),
      SLAK_DOUBLE_FIELD("train.adaptation.stop_fraction",
                        train.adaptation.stop_fraction),
      SLAK_BOOL_FIELD("train.adaptation.per_layer", train.adaptation.per_layer),
      SLAK_INT_FIELD("task.marker_size", train.task.marker_size),
      SLAK_INT_FIELD("task.d_star", train.task.d_star),
      SLAK_DOUBLE_FIELD("task.noise", train.task.noise),
      SLAK_DOUBLE_FIELD("task.intensity", train.task.intensity),
      SLAK_BOOL_FIELD("task.aligned", train.task.aligned),
      Field{"run.out",
            [](const RunConfig& c) { return ordered_json(c.out_dir); },
            [](RunConfig& c, const std::string& k, const json& v) {
              c.out_dir = as_string(k, v);
            }},
      SLAK_DOUBLE_FIELD("run.stop_accuracy", stop_accuracy),
      SLAK_INT_FIELD("run.stop_window", stop_window),
  };
  return table;
}

#undef SLAK_INT_FIELD
#undef SLAK_DOUBLE_FIELD
#undef SLAK_BOOL_FIELD
#undef SLAK_LIST_FIELD

void flatten(const json& node, const std::string& prefix,
             std::vector<std::pair<std::string, json>>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

}  // namespace

ModelConfig model_preset(const std::string& name) {
  if (name == "micro" || name == "slak_micro") return ModelConfig::slak_micro();
  if (name == "slak_t") return ModelConfig::slak_t();
  if (name == "convnext_t") return ModelConfig::convnext_t();
  throw Error(ErrorKind::kInvalidConfig,
              "model.preset: unknown preset '" + name +
                  "' (expected micro, slak_t or convnext_t)");
}

void apply_key(RunConfig& config, const std::string& key, const json& value) {
  if (key == "model.preset") {
    config.model = model_preset(as_string(key, value));
    return;
  }
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(config, key, value);
      return;
    }
  }
  bad(key, "unknown key");
}

RunConfig run_config_from_json(const json& doc, RunConfig base) {
  if (!doc.is_object()) {
    throw Error(ErrorKind::kInvalidConfig, "config must be a JSON object");
  }
  std::vector<std::pair<std::string, json>> flat;
  flatten(doc, "", flat);
  for (const auto& [k, v] : flat) {
    if (k == "model.preset") apply_key(base, k, v);
  }
  for (const auto& [k, v] : flat) {
    if (k != "model.preset") apply_key(base, k, v);
  }
  return base;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::kInvalidConfig, "cannot read config file " + path);
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kInvalidConfig, path + ": " + e.what());
  }
  return run_config_from_json(doc);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kInvalidConfig,
                "--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  apply_key(config, key, value);
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys{"model.preset"};
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

void RunConfig::resolve() {
  if (!seed_set) {
    train.seed = 0;
    if (const char* env = std::getenv("SLAK_SEED"); env != nullptr && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (end == nullptr || *end != '\0') {
        throw Error(ErrorKind::kInvalidConfig,
                    std::string("SLAK_SEED: not an unsigned integer: ") + env);
      }
      train.seed = v;
    }
    seed_set = true;
  }
  if (!(stop_accuracy >= 0.0 && stop_accuracy <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "run.stop_accuracy: must be in [0, 1]");
  }
  if (stop_window < 1) {
    throw Error(ErrorKind::kInvalidConfig, "run.stop_window: must be >= 1");
  }
  train.task.image_size = model.input_size;
  train.task.channels = model.in_channels;
  auto scoped = [](const char* prefix, const auto& check) {
    try {
      check();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInvalidConfig) throw;
      std::string msg = e.what();
      const std::string tag = std::string(to_string(e.kind())) + ": ";
      if (msg.rfind(tag, 0) == 0) msg = msg.substr(tag.size());
      if (msg.rfind("task.", 0) == 0) throw;
      throw Error(ErrorKind::kInvalidConfig, prefix + msg);
    }
  };
  scoped("model.", [&] { model.validate(); });
  scoped("train.", [&] { train.validate(); });
  if (model.num_classes != 2) {
    throw Error(ErrorKind::kInvalidConfig,
                "model.num_classes: the synthetic task has 2 classes, got " +
                    std::to_string(model.num_classes));
  }
}

ordered_json RunConfig::to_json() const {
  ordered_json out;
  for (const Field& f : fields()) out[f.key] = f.get(*this);
  return out;
}

ordered_json model_config_to_json(const ModelConfig& config) {
  RunConfig rc;
  rc.model = config;
  ordered_json all = rc.to_json();
  ordered_json out;
  for (auto it = all.begin(); it != all.end(); ++it) {
    if (it.key().rfind("model.", 0) == 0) out[it.key()] = it.value();
  }
  return out;
}

ModelConfig model_config_from_json(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorKind::kInvalidConfig, "model config must be an object");
  }
  RunConfig rc;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key().rfind("model.", 0) != 0) {
      bad(it.key(), "not a model key");
    }
    apply_key(rc, it.key(), it.value());
  }
  rc.model.validate();
  return rc.model;
}

}  // namespace slak

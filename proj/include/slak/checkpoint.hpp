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

#include "slak/model.hpp"
#include "slak/sparsity.hpp"

namespace slak {

// Layout: "SLAK", u16 version, u32 header length, JSON header, f32 tensor
// payload, then one bitset per mask (row-major, padded to a byte). All
// integers and floats are little-endian; header offsets are relative to the
// start of the payload.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::vector<std::string> mask_layers;
  std::vector<Mask> masks;
};

std::vector<std::uint8_t> encode_checkpoint(
    const Model<float>& model, const std::vector<std::string>& mask_layers,
    const std::vector<Mask>& masks);

// kFormat with the failing byte offset on malformed input.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const std::vector<std::string>& mask_layers,
                     const std::vector<Mask>& masks);

Checkpoint load_checkpoint(const std::string& path);

// Throws kConfigMismatch if the stored config differs from expected.
Checkpoint load_checkpoint(const std::string& path,
                           const ModelConfig& expected);

}  // namespace slak

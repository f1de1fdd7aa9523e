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


#include "slak/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "slak/error.hpp"
#include "slak/run_config.hpp"

namespace slak {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr char kMagic[4] = {'S', 'L', 'A', 'K'};
constexpr std::size_t kPrefix = 4 + 2 + 4;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::size_t bitset_bytes(std::size_t n) { return (n + 7) / 8; }

[[noreturn]] void corrupt(const std::string& what, std::size_t offset) {
  throw Error(ErrorKind::kFormat, "checkpoint: " + what, offset);
}

Shape shape_from(const json& v, std::size_t at) {
  if (!v.is_array()) corrupt("shape is not a list", at);
  std::vector<std::int64_t> dims;
  for (const auto& d : v) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0) {
      corrupt("bad shape entry " + d.dump(), at);
    }
    dims.push_back(d.get<std::int64_t>());
  }
  return dims;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(
    const Model<float>& model, const std::vector<std::string>& mask_layers,
    const std::vector<Mask>& masks) {
  if (mask_layers.size() != masks.size()) {
    throw Error(ErrorKind::kInvalidMask,
                "checkpoint: " + std::to_string(masks.size()) + " masks for " +
                    std::to_string(mask_layers.size()) + " layer ids");
  }
  ordered_json header;
  header["config"] = model_config_to_json(model.config());
  ordered_json tensors = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    tensors.push_back({{"id", p.id},
                       {"shape", p.value.shape()},
                       {"offset", offset}});
    offset += p.value.numel() * 4;
  }
  header["tensors"] = std::move(tensors);
  ordered_json mask_records = ordered_json::array();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const std::size_t idx = model.params().index(mask_layers[i]);
    if (masks[i].shape() != model.params()[idx].value.shape()) {
      throw Error(ErrorKind::kInvalidMask,
                  "checkpoint: mask shape differs from " + mask_layers[i]);
    }
    mask_records.push_back({{"id", mask_layers[i]},
                            {"shape", masks[i].shape()},
                            {"nnz", masks[i].nnz()},
                            {"offset", offset}});
    offset += bitset_bytes(masks[i].numel());
  }
  header["masks"] = std::move(mask_records);
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& p : model.params()) {
    const float* d = p.value.data();
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(d[i]));
    }
  }
  for (const Mask& m : masks) {
    std::vector<std::uint8_t> bits(bitset_bytes(m.numel()), 0);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      if (m.active(i)) bits[i / 8] |= std::uint8_t(1u << (i % 8));
    }
    out.insert(out.end(), bits.begin(), bits.end());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    corrupt("missing SLAK magic", 0);
  }
  if (bytes.size() < kPrefix) corrupt("truncated preamble", bytes.size());
  const std::uint16_t version =
      std::uint16_t(bytes[4] | std::uint16_t(bytes[5]) << 8);
  if (version != kCheckpointVersion) {
    corrupt("unsupported version " + std::to_string(version), 4);
  }
  const std::size_t header_len = get_u32(bytes.data() + 6);
  if (bytes.size() - kPrefix < header_len) {
    corrupt("header runs past end of file", bytes.size());
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix,
                         bytes.begin() + std::ptrdiff_t(kPrefix + header_len));
  } catch (const json::parse_error& e) {
    corrupt(std::string("header is not JSON: ") + e.what(), kPrefix + e.byte);
  }
  const std::size_t payload = kPrefix + header_len;
  if (!header.is_object() || !header.contains("config") ||
      !header.contains("tensors") || !header.contains("masks") ||
      !header.contains("payload_bytes")) {
    corrupt("header lacks config, tensors, masks or payload_bytes", kPrefix);
  }
  const std::size_t payload_bytes = header["payload_bytes"].get<std::size_t>();
  if (bytes.size() - payload < payload_bytes) {
    corrupt("payload truncated: expected " + std::to_string(payload_bytes) +
                " bytes",
            bytes.size());
  }
  if (bytes.size() - payload > payload_bytes) {
    corrupt("trailing bytes after payload", payload + payload_bytes);
  }

  ModelConfig config;
  try {
    config = model_config_from_json(header["config"]);
  } catch (const Error& e) {
    corrupt(std::string("bad config: ") + e.what(), kPrefix);
  }
  RngStream rng(0);
  Checkpoint ck{Model<float>::build(config, rng), {}, {}};
  auto& store = ck.model.mutable_params();

  const json& tensors = header["tensors"];
  if (!tensors.is_array() || tensors.size() != store.size()) {
    corrupt("tensor table does not match the config", kPrefix);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const json& rec = tensors[i];
    auto& p = store[i];
    if (!rec.contains("id") || rec["id"] != p.id) {
      corrupt("tensor " + std::to_string(i) + " should be " + p.id, kPrefix);
    }
    if (shape_from(rec.value("shape", json()), kPrefix) != p.value.shape()) {
      corrupt(p.id + " has the wrong shape", kPrefix);
    }
    const std::size_t off = rec.value("offset", std::size_t(0));
    if (off + p.value.numel() * 4 > payload_bytes) {
      corrupt(p.id + " runs past the payload", payload + off);
    }
    const std::uint8_t* src = bytes.data() + payload + off;
    float* dst = p.value.data();
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      dst[k] = std::bit_cast<float>(get_u32(src + 4 * k));
    }
  }

  const json& masks = header["masks"];
  if (!masks.is_array()) corrupt("mask table is not a list", kPrefix);
  for (const json& rec : masks) {
    const std::string id = rec.value("id", std::string());
    const auto idx = store.find(id);
    if (!idx) corrupt("mask for unknown tensor '" + id + "'", kPrefix);
    const Shape shape = shape_from(rec.value("shape", json()), kPrefix);
    if (shape != store[*idx].value.shape()) {
      corrupt("mask " + id + " has the wrong shape", kPrefix);
    }
    const std::size_t off = rec.value("offset", std::size_t(0));
    Mask m(shape, false);
    if (off + bitset_bytes(m.numel()) > payload_bytes) {
      corrupt("mask " + id + " runs past the payload", payload + off);
    }
    const std::uint8_t* bits = bytes.data() + payload + off;
    for (std::size_t k = 0; k < m.numel(); ++k) {
      if (bits[k / 8] >> (k % 8) & 1u) m.set(k, true);
    }
    if (rec.contains("nnz") && rec["nnz"].get<std::size_t>() != m.nnz()) {
      corrupt("mask " + id + " nnz disagrees with its bitset", payload + off);
    }
    ck.mask_layers.push_back(id);
    ck.masks.push_back(std::move(m));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const std::vector<std::string>& mask_layers,
                     const std::vector<Mask>& masks) {
  const auto bytes = encode_checkpoint(model, mask_layers, masks);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::string& path,
                           const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.model.config() == expected)) {
    throw Error(ErrorKind::kConfigMismatch,
                "checkpoint " + path + " was written for a different config: " +
                    model_config_to_json(ck.model.config()).dump() + " vs " +
                    model_config_to_json(expected).dump());
  }
  return ck;
}

}  // namespace slak

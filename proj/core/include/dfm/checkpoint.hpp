// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfm/tensor.hpp"
#include "dfm/tokenizer.hpp"
#include "dfm/transformer.hpp"

namespace dfm {

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

/// Flat list of named float32 tensors plus free-form JSON metadata.
///
/// On disk: u64 little-endian header length N, N bytes of JSON header
/// ({"format","version","metadata","tensors":[{"name","shape","dtype","offset"}]}),
/// then the little-endian float32 payload. Offsets are byte offsets into the
/// payload.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  void add(std::string name, const Matrix& m);
  const NamedTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Copies a tensor into `m`, checking the shape.
  void load_into(const std::string& name, Matrix& m) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ArchitectureConfig& a);
void from_json(const nlohmann::json& j, ArchitectureConfig& a);

Checkpoint to_checkpoint(const TrainableDenoiser& model);
TrainableDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt);

/// Metadata kind "tokenizer": config plus encoder, decoder and codebook tensors.
Checkpoint to_checkpoint(const ToyTokenizer& tokenizer);
ToyTokenizer tokenizer_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dfm

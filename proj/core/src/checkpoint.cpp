// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dfm {
namespace {

constexpr const char* kFormat = "dfm-checkpoint";
constexpr int kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void Checkpoint::add(std::string name, const Matrix& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.shape = {m.rows, m.cols};
  t.values.reserve(m.data.size());
  for (double v : m.data) t.values.push_back(static_cast<float>(v));
  tensors.push_back(std::move(t));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const NamedTensor& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ConfigError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::load_into(const std::string& name, Matrix& m) const {
  const auto& t = at(name);
  if (t.shape.size() != 2 || t.shape[0] != m.rows || t.shape[1] != m.cols) {
    throw SizeError("checkpoint tensor '" + name + "' has an unexpected shape");
  }
  for (std::size_t i = 0; i < t.values.size(); ++i) m.data[i] = t.values[i];
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    std::size_t count = 1;
    for (auto s : t.shape) count *= s;
    if (count != t.values.size()) throw SizeError("tensor '" + t.name + "' shape/value mismatch");
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}});
    offset += 4 * t.values.size();
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : ckpt.tensors) {
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw ConfigError("checkpoint truncated");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (n > bytes.size() - 8) throw ConfigError("checkpoint header length exceeds file size");
  auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  if (header.value("format", "") != kFormat) throw ConfigError("not a dfm checkpoint");
  if (header.value("version", 0) != kVersion) throw ConfigError("unsupported checkpoint version");
  const std::uint8_t* payload = bytes.data() + 8 + n;
  const std::size_t payload_size = bytes.size() - 8 - n;

  Checkpoint ckpt;
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& jt : header.at("tensors")) {
    NamedTensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<std::vector<std::size_t>>();
    if (jt.value("dtype", "f32") != "f32") throw ConfigError("unsupported dtype");
    const std::size_t offset = jt.at("offset").get<std::size_t>();
    std::size_t count = 1;
    for (auto s : t.shape) count *= s;
    if (offset + 4 * count > payload_size) throw ConfigError("tensor payload out of range");
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      t.values[i] = std::bit_cast<float>(get_u32(payload + offset + 4 * i));
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
  j = nlohmann::json{{"vocab_size", a.vocab_size},
                     {"max_length", a.max_length},
                     {"width", a.width},
                     {"layers", a.layers},
                     {"heads", a.heads},
                     {"mlp_ratio", a.mlp_ratio},
                     {"position_embeddings", a.position_embeddings},
                     {"time_scale", a.time_scale},
                     {"condition_drop_id", a.condition_drop_id},
                     {"signal_first_id", a.signal_first_id},
                     {"signal_dim", a.signal_dim}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
  ArchitectureConfig d;
  a.vocab_size = j.value("vocab_size", d.vocab_size);
  a.max_length = j.value("max_length", d.max_length);
  a.width = j.value("width", d.width);
  a.layers = j.value("layers", d.layers);
  a.heads = j.value("heads", d.heads);
  a.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  a.position_embeddings = j.value("position_embeddings", d.position_embeddings);
  a.time_scale = j.value("time_scale", d.time_scale);
  a.condition_drop_id = j.value("condition_drop_id", d.condition_drop_id);
  a.signal_first_id = j.value("signal_first_id", d.signal_first_id);
  a.signal_dim = j.value("signal_dim", d.signal_dim);
}

Checkpoint to_checkpoint(const TrainableDenoiser& model) {
  Checkpoint ckpt;
  ckpt.metadata["kind"] = "denoiser";
  ckpt.metadata["architecture"] = model.arch();
  model.weights().for_each([&](const std::string& name, const Matrix& m) { ckpt.add(name, m); });
  if (model.signal_codebook().rows > 0) ckpt.add("signal_codebook", model.signal_codebook());
  return ckpt;
}

TrainableDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "denoiser") throw ConfigError("not a denoiser checkpoint");
  auto arch = ckpt.metadata.at("architecture").get<ArchitectureConfig>();
  TrainableDenoiser model(arch, 0);
  model.weights().for_each([&](const std::string& name, Matrix& m) { ckpt.load_into(name, m); });
  if (ckpt.contains("signal_codebook")) {
    const auto& t = ckpt.at("signal_codebook");
    Matrix rows(t.shape.at(0), t.shape.at(1));
    ckpt.load_into("signal_codebook", rows);
    model.set_signal_codebook(std::move(rows));
  }
  return model;
}

Checkpoint to_checkpoint(const ToyTokenizer& tokenizer) {
  Checkpoint ckpt;
  ckpt.metadata["kind"] = "tokenizer";
  ckpt.metadata["config"] = tokenizer.config();
  const char* names[] = {"w1", "b1", "w2", "b2"};
  auto enc = tokenizer.encoder().tensors();
  auto dec = tokenizer.decoder().tensors();
  for (std::size_t i = 0; i < 4; ++i) {
    ckpt.add(std::string("encoder.") + names[i], *enc[i]);
    ckpt.add(std::string("decoder.") + names[i], *dec[i]);
  }
  for (std::size_t m = 0; m < tokenizer.codebook().num_books(); ++m) {
    ckpt.add("codebook." + std::to_string(m), tokenizer.codebook().book(m));
  }
  return ckpt;
}

ToyTokenizer tokenizer_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "tokenizer") throw ConfigError("not a tokenizer checkpoint");
  ToyTokenizer tok(ckpt.metadata.at("config").get<TokenizerConfig>());
  const char* names[] = {"w1", "b1", "w2", "b2"};
  auto enc = tok.encoder().tensors();
  auto dec = tok.decoder().tensors();
  for (std::size_t i = 0; i < 4; ++i) {
    ckpt.load_into(std::string("encoder.") + names[i], *enc[i]);
    ckpt.load_into(std::string("decoder.") + names[i], *dec[i]);
  }
  std::vector<Matrix> books;
  for (std::size_t m = 0; m < tok.config().sub_codebooks; ++m) {
    Matrix b(tok.config().codes_per_book, tok.config().embed_dim / tok.config().sub_codebooks);
    ckpt.load_into("codebook." + std::to_string(m), b);
    books.push_back(std::move(b));
  }
  tok.set_codebook(Codebook(std::move(books)));
  return tok;
}

}  // namespace dfm

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/model.hpp"
#include "rcvqa/vocab.hpp"

namespace rcvqa {

// File layout, all integers little-endian:
//   8 bytes  magic "RCVQCKPT"
//   4 bytes  format version
//   8 bytes  manifest length in bytes
//   manifest (UTF-8 JSON): format_version, seed, config echo, vocabulary,
//            answer classes, and per parameter {name, shape, offset, length}
//            with offset in bytes from the payload start and length in values
//   payload  every parameter as consecutive 32-bit little-endian floats
inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'C', 'V', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterRecord {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  AnswerClasses classes;
  std::uint64_t seed = 0;
  nlohmann::json run;  // caller-provided config echo
  std::vector<ParameterRecord> records;
  std::vector<float> payload;
};

namespace detail {

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return value;
}

}  // namespace detail

template <class T>
Checkpoint make_checkpoint(const ReadingModel<T>& model, const Vocabulary& vocab, const AnswerClasses& classes,
                           std::uint64_t seed, nlohmann::json run = nlohmann::json::object()) {
  Checkpoint ck{model.config(), vocab, classes, seed, std::move(run), {}, {}};
  for (const auto& [name, t] : model.params()) {
    ck.records.push_back({name, t.shape(), ck.payload.size() * sizeof(float), t.size()});
    for (T v : t.data()) ck.payload.push_back(static_cast<float>(v));
  }
  return ck;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["dtype"] = "float32-le";
  manifest["seed"] = ck.seed;
  manifest["config"] = ck.config;
  manifest["run"] = ck.run;
  manifest["vocab"] = ck.vocab.to_json();
  manifest["answer_classes"] = ck.classes.labels();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& r : ck.records)
    params.push_back({{"name", r.name}, {"shape", r.shape}, {"offset", r.offset}, {"length", r.length}});
  manifest["parameters"] = params;
  manifest["payload_bytes"] = ck.payload.size() * sizeof(float);
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + ck.payload.size() * 4);
  for (float f : ck.payload) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_le<std::uint32_t>(out, bits);
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  constexpr std::size_t header = 8 + 4 + 8;
  if (bytes.size() < header || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw ParseError(origin + ": not a checkpoint file");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) throw ParseError(origin + ": unsupported format version " + std::to_string(version));
  const auto manifest_len = detail::get_le<std::uint64_t>(bytes, 12);
  if (header + manifest_len > bytes.size()) throw ParseError(origin + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": bad manifest (" + e.what() + ")");
  }
  const std::size_t payload_start = header + manifest_len;
  const std::size_t payload_bytes = bytes.size() - payload_start;
  if (payload_bytes % 4 != 0 || manifest.value("payload_bytes", std::size_t{0}) != payload_bytes) {
    throw ParseError(origin + ": payload size does not match manifest");
  }

  Checkpoint ck;
  try {
    ck.config = manifest.at("config").get<ModelConfig>();
    ck.vocab = Vocabulary::from_json(manifest.at("vocab"));
    ck.classes = AnswerClasses(manifest.at("answer_classes").get<std::vector<std::string>>());
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    ck.run = manifest.value("run", nlohmann::json::object());
    for (const auto& p : manifest.at("parameters")) {
      ck.records.push_back({p.at("name").get<std::string>(), p.at("shape").get<Shape>(), p.at("offset").get<std::uint64_t>(),
                            p.at("length").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": incomplete manifest (" + e.what() + ")");
  }
  ck.payload.resize(payload_bytes / 4);
  for (std::size_t i = 0; i < ck.payload.size(); ++i) {
    const auto bits = detail::get_le<std::uint32_t>(bytes, payload_start + 4 * i);
    std::memcpy(&ck.payload[i], &bits, sizeof bits);
  }
  for (const auto& r : ck.records) {
    if (r.offset % 4 != 0 || r.offset / 4 + r.length > ck.payload.size() || shape_size(r.shape) != r.length) {
      throw ParseError(origin + ": parameter " + r.name + " lies outside the payload");
    }
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

// Copies checkpoint values into a model's parameters by name.
template <class T>
void restore_parameters(ReadingModel<T>& model, const Checkpoint& ck) {
  std::size_t restored = 0;
  for (const auto& r : ck.records) {
    if (!model.params().contains(r.name)) throw DataError("checkpoint parameter " + r.name + " is not part of the model");
    auto t = model.params().get(r.name);
    if (t.shape() != r.shape) {
      throw DimensionError("checkpoint parameter " + r.name + " has shape " + shape_str(r.shape) + ", model expects " +
                           shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < r.length; ++i) dst[i] = static_cast<T>(ck.payload[r.offset / 4 + i]);
    ++restored;
  }
  if (restored != model.params().size()) {
    throw DataError("checkpoint covers " + std::to_string(restored) + " of " + std::to_string(model.params().size()) +
                    " model parameters");
  }
}

// Rebuilds the model a checkpoint was taken from.
template <class T>
std::unique_ptr<ReadingModel<T>> model_from_checkpoint(const Checkpoint& ck) {
  auto words = load_embeddings<T>("", ck.vocab, ck.config.word_dim, ck.seed, ck.config.finetune_word_embeddings);
  auto model = std::make_unique<ReadingModel<T>>(ck.config, ck.vocab, std::move(words), ck.seed);
  restore_parameters(*model, ck);
  return model;
}

}  // namespace rcvqa

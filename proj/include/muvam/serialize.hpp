#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "muvam/adamax.hpp"
#include "muvam/config.hpp"
#include "muvam/dataset.hpp"
#include "muvam/encoders.hpp"
#include "muvam/errors.hpp"
#include "muvam/model.hpp"

// Portable weight file:
//
//   bytes 0..7    magic "MUVAMW01"
//   bytes 8..15   manifest length L, uint64 little-endian
//   next L bytes  manifest, UTF-8 JSON
//   remainder     payload: every tensor as little-endian IEEE-754 float32,
//                 at the byte offsets listed in the manifest
//
// The manifest carries tensor names/shapes/offsets, the model config, the
// question and answer vocabularies and the optimizer constants.
namespace muvam {

inline constexpr char kWeightsMagic[8] = {'M', 'U', 'V', 'A', 'M', 'W', '0', '1'};

struct Checkpoint {
  MuvamModel<float> model;
  WordVocabulary words;
  AnswerVocabulary answers;
  AdamaxOptions optimizer;
  json meta = json::object();  // free-form run information
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline std::string encode_weights(Checkpoint& ckpt) {
  json manifest;
  manifest["format"] = "muvam-weights";
  manifest["version"] = 1;
  manifest["dtype"] = "float32";
  manifest["byte_order"] = "little";
  manifest["config"] = model_config_to_json(ckpt.model.config);
  manifest["words"] = ckpt.words.real_words();
  manifest["answers"] = {{"closed", ckpt.answers.answers(AnswerType::kClosed)},
                         {"open", ckpt.answers.answers(AnswerType::kOpen)}};
  manifest["optimizer"] = {{"name", "adamax"},
                           {"learning_rate", ckpt.optimizer.learning_rate},
                           {"beta1", ckpt.optimizer.beta1},
                           {"beta2", ckpt.optimizer.beta2},
                           {"epsilon", ckpt.optimizer.epsilon}};
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = json::array();
  std::string payload;
  ckpt.model.visit([&](const std::string& name, Tensor<float>& t) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", t.shape}, {"offset", payload.size()}, {"bytes", t.numel() * 4}});
    for (float f : t.data) detail::put_f32_le(payload, f);
  });
  manifest["payload_bytes"] = payload.size();
  const std::string man = manifest.dump();
  std::string out(kWeightsMagic, 8);
  detail::put_u64_le(out, man.size());
  out += man;
  out += payload;
  return out;
}

// Decodes a whole file image. Nothing is returned unless every check passes.
inline Checkpoint decode_weights(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightsMagic, 8) != 0) {
    throw CorruptionError("not a weight file (bad magic or header too short)");
  }
  const std::uint64_t man_len = detail::get_u64_le(raw + 8);
  if (man_len > bytes.size() - 16) throw CorruptionError("manifest length exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, man_len));
  } catch (const json::parse_error& e) {
    throw CorruptionError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::size_t payload_at = 16 + man_len;
  const std::size_t payload_len = bytes.size() - payload_at;
  try {
    if (manifest.at("dtype") != "float32") throw SchemaError("unsupported dtype " + manifest.at("dtype").dump());
    if (manifest.at("payload_bytes").get<std::size_t>() != payload_len) {
      throw CorruptionError("payload is " + std::to_string(payload_len) + " bytes, manifest declares " +
                            manifest.at("payload_bytes").dump());
    }
    ModelConfig config;
    model_config_from_json(manifest.at("config"), config);
    Checkpoint ckpt;
    ckpt.model = MuvamModel<float>::init(config, 0);
    ckpt.words = WordVocabulary(manifest.at("words").get<std::vector<std::string>>());
    ckpt.answers = AnswerVocabulary(manifest.at("answers").at("closed").get<std::vector<std::string>>(),
                                    manifest.at("answers").at("open").get<std::vector<std::string>>());
    if (manifest.contains("optimizer")) {
      const auto& o = manifest["optimizer"];
      ckpt.optimizer.learning_rate = o.value("learning_rate", ckpt.optimizer.learning_rate);
      ckpt.optimizer.beta1 = o.value("beta1", ckpt.optimizer.beta1);
      ckpt.optimizer.beta2 = o.value("beta2", ckpt.optimizer.beta2);
      ckpt.optimizer.epsilon = o.value("epsilon", ckpt.optimizer.epsilon);
    }
    ckpt.meta = manifest.value("meta", json::object());

    std::map<std::string, Tensor<float>*> by_name;
    ckpt.model.visit([&](const std::string& name, Tensor<float>& t) { by_name.emplace(name, &t); });
    std::set<std::string> seen;
    for (const auto& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw SchemaError("unknown tensor '" + name + "'");
      if (!seen.insert(name).second) throw SchemaError("tensor '" + name + "' listed twice");
      Tensor<float>& t = *it->second;
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != t.shape) {
        throw SchemaError("tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                          shape_string(t.shape));
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t nbytes = entry.at("bytes").get<std::size_t>();
      if (nbytes != t.numel() * 4 || offset > payload_len || nbytes > payload_len - offset) {
        throw CorruptionError("tensor '" + name + "' lies outside the payload");
      }
      for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = detail::get_f32_le(raw + payload_at + offset + 4 * i);
    }
    if (seen.size() != by_name.size()) {
      for (const auto& [name, _] : by_name) {
        if (!seen.count(name)) throw SchemaError("tensor '" + name + "' missing from manifest");
      }
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed manifest: ") + e.what());
  }
}

// Writes to a sibling temporary file and renames it into place.
inline void save_weights(const std::filesystem::path& path, Checkpoint& ckpt) {
  const std::string bytes = encode_weights(ckpt);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write weights to '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weights '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return decode_weights(buf.str());
}

}  // namespace muvam

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "muvam/adamax.hpp"
#include "muvam/dataset.hpp"
#include "muvam/errors.hpp"
#include "muvam/model.hpp"

namespace muvam {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 0.005;
  double gamma = 1.6;
  bool use_iqc_loss = true;
  IqcRouting iqc_routing = IqcRouting::kBoth;
  VocabularyPolicy answer_policy = VocabularyPolicy::kTrainOnly;
  ModelConfig model = ModelConfig::full_scale();
  std::string dataset;
  std::string embeddings;
  bool desk_scale = false;

  // Desk-scale preset: small dims, batch 8, same architecture.
  static TrainConfig desk() {
    TrainConfig c;
    c.desk_scale = true;
    c.model = ModelConfig::desk_scale();
    c.batch_size = 8;
    return c;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    require_valid_gamma(gamma);
    // Vocabulary-dependent sizes are filled in from the corpus later.
    ModelConfig m = model;
    m.vocab_size = std::max<std::size_t>(m.vocab_size, 2);
    m.closed_answers = std::max<std::size_t>(m.closed_answers, 1);
    m.open_answers = std::max<std::size_t>(m.open_answers, 1);
    m.validate();
  }

  AdamaxOptions adamax() const {
    AdamaxOptions o;
    o.learning_rate = learning_rate;
    return o;
  }

  LossOptions loss() const { return LossOptions{gamma, use_iqc_loss, iqc_routing}; }
};

inline const char* to_string(IqcRouting r) {
  switch (r) {
    case IqcRouting::kBoth: return "both";
    case IqcRouting::kDetachImage: return "detach_image";
    case IqcRouting::kDetachText: return "detach_text";
  }
  return "both";
}

inline IqcRouting parse_iqc_routing(const std::string& s) {
  if (s == "both") return IqcRouting::kBoth;
  if (s == "detach_image") return IqcRouting::kDetachImage;
  if (s == "detach_text") return IqcRouting::kDetachText;
  throw ConfigError("unknown iqc_routing '" + s + "'");
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"n", c.n},
              {"d_h", c.d_h},
              {"d_s", c.d_s},
              {"d_k", c.d_k},
              {"image",
               {{"channels", c.image.channels},
                {"image_size", c.image.image_size},
                {"maml_filters", c.image.maml_filters},
                {"maml_layers", c.image.maml_layers},
                {"cdae_input_size", c.image.cdae_input_size},
                {"cdae_filters", c.image.cdae_filters},
                {"cdae_blocks", c.image.cdae_blocks},
                {"branch_dim", c.image.branch_dim}}},
              {"i2q_hidden", c.i2q_hidden},
              {"fusion", {{"rank", c.fusion.rank}, {"glimpses", c.fusion.glimpses}, {"out_dim", c.fusion.out_dim}}},
              {"classifier_hidden", c.classifier_hidden},
              {"vocab_size", c.vocab_size},
              {"closed_answers", c.closed_answers},
              {"open_answers", c.open_answers},
              {"mask_padding", c.mask_padding},
              {"stop_at_true_length", c.stop_at_true_length},
              {"use_i2q_attention", c.use_i2q_attention}};
}

namespace detail {

template <typename V>
void read_if(const json& j, const char* key, V& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

// Overlays keys present in `j` onto `c`.
inline void model_config_from_json(const json& j, ModelConfig& c) {
  using detail::read_if;
  read_if(j, "n", c.n);
  read_if(j, "d_h", c.d_h);
  read_if(j, "d_s", c.d_s);
  read_if(j, "d_k", c.d_k);
  if (j.contains("image")) {
    const json& im = j["image"];
    read_if(im, "channels", c.image.channels);
    read_if(im, "image_size", c.image.image_size);
    read_if(im, "maml_filters", c.image.maml_filters);
    read_if(im, "maml_layers", c.image.maml_layers);
    read_if(im, "cdae_input_size", c.image.cdae_input_size);
    read_if(im, "cdae_filters", c.image.cdae_filters);
    read_if(im, "cdae_blocks", c.image.cdae_blocks);
    read_if(im, "branch_dim", c.image.branch_dim);
  }
  read_if(j, "i2q_hidden", c.i2q_hidden);
  if (j.contains("fusion")) {
    read_if(j["fusion"], "rank", c.fusion.rank);
    read_if(j["fusion"], "glimpses", c.fusion.glimpses);
    read_if(j["fusion"], "out_dim", c.fusion.out_dim);
  }
  read_if(j, "classifier_hidden", c.classifier_hidden);
  read_if(j, "vocab_size", c.vocab_size);
  read_if(j, "closed_answers", c.closed_answers);
  read_if(j, "open_answers", c.open_answers);
  read_if(j, "mask_padding", c.mask_padding);
  read_if(j, "stop_at_true_length", c.stop_at_true_length);
  read_if(j, "use_i2q_attention", c.use_i2q_attention);
}

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"seed", c.seed},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"gamma", c.gamma},
              {"use_iqc_loss", c.use_iqc_loss},
              {"iqc_routing", to_string(c.iqc_routing)},
              {"answer_policy", c.answer_policy == VocabularyPolicy::kTrainOnly ? "train" : "all"},
              {"desk_scale", c.desk_scale},
              {"dataset", c.dataset},
              {"embeddings", c.embeddings},
              {"model", model_config_to_json(c.model)}};
}

// A config document mirrors TrainConfig. "desk_scale": true starts from the
// desk preset before the remaining keys are applied.
inline TrainConfig train_config_from_json(const json& j) {
  using detail::read_if;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  bool desk = false;
  read_if(j, "desk_scale", desk);
  TrainConfig c = desk ? TrainConfig::desk() : TrainConfig{};
  read_if(j, "seed", c.seed);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "learning_rate", c.learning_rate);
  read_if(j, "gamma", c.gamma);
  read_if(j, "use_iqc_loss", c.use_iqc_loss);
  read_if(j, "dataset", c.dataset);
  read_if(j, "embeddings", c.embeddings);
  if (j.contains("iqc_routing")) c.iqc_routing = parse_iqc_routing(j["iqc_routing"].get<std::string>());
  if (j.contains("answer_policy")) {
    const auto p = j["answer_policy"].get<std::string>();
    if (p == "train") c.answer_policy = VocabularyPolicy::kTrainOnly;
    else if (p == "all") c.answer_policy = VocabularyPolicy::kAllSplits;
    else throw ConfigError("answer_policy must be \"train\" or \"all\"");
  }
  if (j.contains("model")) model_config_from_json(j["model"], c.model);
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return train_config_from_json(json::parse(buf.str()));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace muvam

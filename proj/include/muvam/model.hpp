#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muvam/attention.hpp"
#include "muvam/encoders.hpp"
#include "muvam/errors.hpp"
#include "muvam/fusion.hpp"
#include "muvam/grad_check.hpp"
#include "muvam/ops.hpp"
#include "muvam/rng.hpp"
#include "muvam/tape.hpp"
#include "muvam/types.hpp"

namespace muvam {

// How the complementary loss routes gradient into the two attention branches.
enum class IqcRouting { kBoth, kDetachImage, kDetachText };

struct ModelConfig {
  std::size_t n = 12;
  std::size_t d_h = 300;
  std::size_t d_s = 1024;
  std::size_t d_k = 128;
  ImageEncoderConfig image;
  std::size_t i2q_hidden = 1024;
  FusionConfig fusion;
  std::size_t classifier_hidden = 2048;
  std::size_t vocab_size = 2;
  std::size_t closed_answers = 2;
  std::size_t open_answers = 1;
  bool mask_padding = false;
  bool stop_at_true_length = false;
  bool use_i2q_attention = true;

  static ModelConfig full_scale() { return ModelConfig{}; }

  static ModelConfig desk_scale() {
    ModelConfig c;
    c.n = 12;
    c.d_h = 16;
    c.d_s = 32;
    c.d_k = 16;
    c.image.channels = 1;
    c.image.image_size = 32;
    c.image.maml_filters = 8;
    c.image.cdae_input_size = 32;
    c.image.cdae_filters = 4;
    c.image.branch_dim = 8;
    c.i2q_hidden = 32;
    c.fusion = FusionConfig{8, 1, 32};
    c.classifier_hidden = 32;
    return c;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(n, "n");
    positive(d_h, "d_h");
    positive(d_s, "d_s");
    positive(d_k, "d_k");
    positive(i2q_hidden, "i2q_hidden");
    positive(fusion.rank, "fusion rank");
    positive(fusion.glimpses, "fusion glimpses");
    positive(fusion.out_dim, "fusion output dim");
    positive(classifier_hidden, "classifier_hidden");
    positive(closed_answers, "closed answer count");
    positive(open_answers, "open answer count");
    positive(image.channels, "image channels");
    positive(image.maml_filters, "maml filters");
    positive(image.cdae_filters, "cdae filters");
    if (vocab_size < 2) throw ConfigError("vocabulary must hold at least PAD and UNK");
    if (d_k != 2 * image.branch_dim) {
      throw ConfigError("d_k (" + std::to_string(d_k) + ") must equal twice the image branch dim (" +
                        std::to_string(image.branch_dim) + ")");
    }
    if (image.image_size < maml_min_size(image)) {
      throw ConfigError("image size " + std::to_string(image.image_size) + " below minimum " +
                        std::to_string(maml_min_size(image)));
    }
    if (image.cdae_input_size < cdae_min_size(image)) {
      throw ConfigError("denoising-branch input size " + std::to_string(image.cdae_input_size) + " below minimum " +
                        std::to_string(cdae_min_size(image)));
    }
  }
};

template <typename T>
struct MuvamModel {
  ModelConfig config;
  QuestionEncoder<T> question;
  ImageEncoder<T> image;
  W2TWeights<T> w2t;
  I2QProjection<T> i2q;
  FusionWeights<T> fusion_closed, fusion_open;
  ClassifierHead<T> head_closed, head_open;

  // Parameters are drawn in a fixed order from one seeded stream.
  static MuvamModel init(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(seed);
    MuvamModel m;
    m.config = c;
    m.question = QuestionEncoder<T>::init(c.vocab_size, c.d_h, c.d_s, rng);
    m.image = ImageEncoder<T>::init(c.image, rng);
    m.w2t = W2TWeights<T>::init(c.d_h, c.d_s, rng);
    m.i2q = I2QProjection<T>::init(c.d_k, c.i2q_hidden, c.d_s, rng);
    m.fusion_closed = FusionWeights<T>::init(c.d_k, c.d_s, c.fusion, rng);
    m.fusion_open = FusionWeights<T>::init(c.d_k, c.d_s, c.fusion, rng);
    m.head_closed = ClassifierHead<T>::init(c.fusion.out_dim, c.classifier_hidden, c.closed_answers, rng);
    m.head_open = ClassifierHead<T>::init(c.fusion.out_dim, c.classifier_hidden, c.open_answers, rng);
    return m;
  }

  // Visits every parameter as (name, tensor) in a fixed order.
  template <typename F>
  void visit(F&& fn) {
    question.visit("question.", fn);
    image.visit("image.", fn);
    w2t.visit("w2t.", fn);
    i2q.visit("i2q.", fn);
    fusion_closed.visit("fusion_closed.", fn);
    fusion_open.visit("fusion_open.", fn);
    head_closed.visit("head_closed.", fn);
    head_open.visit("head_open.", fn);
  }

  std::vector<NamedTensor<T>> named_parameters() {
    std::vector<NamedTensor<T>> out;
    visit([&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    visit([&](const std::string&, Tensor<T>& t) { total += t.numel(); });
    return total;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  FusionWeights<T>& fusion_for(AnswerType t) { return t == AnswerType::kClosed ? fusion_closed : fusion_open; }
  ClassifierHead<T>& head_for(AnswerType t) { return t == AnswerType::kClosed ? head_closed : head_open; }

  template <typename U>
  MuvamModel<U> cast() {
    MuvamModel<U> out = MuvamModel<U>::init(config, 0);
    std::vector<Tensor<T>*> src;
    visit([&](const std::string&, Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Tensor<U>& t) {
      t.data.assign(src[i]->data.begin(), src[i]->data.end());
      ++i;
    });
    return out;
  }
};

// Everything one question/image pair produces on the way to its answer.
template <typename T>
struct ForwardResult {
  Var<T> d, q, v;
  Var<T> a_q, a_m;
  Var<T> q_m;
  Var<T> fused;
  Var<T> logits, probs;
};

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, MuvamModel<T>& model, const TokenSequence& tokens, const Tensor<T>& image,
                         AnswerType type) {
  const ModelConfig& c = model.config;
  if (tokens.ids.size() != c.n) {
    throw DimensionError("forward: token sequence has " + std::to_string(tokens.ids.size()) + " ids, model expects " +
                         std::to_string(c.n));
  }
  const std::optional<std::size_t> valid =
      c.mask_padding ? std::optional<std::size_t>(tokens.true_length) : std::nullopt;
  const std::optional<std::size_t> stop =
      c.stop_at_true_length ? std::optional<std::size_t>(tokens.true_length) : std::nullopt;

  ForwardResult<T> r;
  r.d = embed(tape, model.question, tokens);
  r.q = gru_encode(tape, model.question.gru, r.d, stop);
  r.v = encode_image(tape, model.image, image);
  r.a_q = w2t_attention(tape, r.d, r.q, model.w2t, valid);
  r.a_m = i2q_attention(tape, r.q, r.v, model.i2q, valid);
  r.q_m = c.use_i2q_attention ? apply_visual_guidance(r.q, r.a_m) : r.q;
  r.fused = bilinear_fuse(tape, r.v, r.q_m, model.fusion_for(type));
  r.logits = classifier_logits(tape, r.fused, model.head_for(type));
  r.probs = ops::sigmoid(r.logits);
  return r;
}

// One training/evaluation unit with its target vector for its type's head.
template <typename T>
struct Example {
  const TokenSequence* tokens = nullptr;
  const Tensor<T>* image = nullptr;
  AnswerType type = AnswerType::kClosed;
  Tensor<T> target;
};

struct LossOptions {
  double gamma = 1.6;
  bool use_iqc_loss = true;
  IqcRouting routing = IqcRouting::kBoth;
};

template <typename T>
struct BatchLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

// Loss = L_c + gamma * L_mq over a batch. L_c averages each head over its
// own samples; L_mq is averaged over all samples. With use_iqc_loss off, L_mq
// is still evaluated for reporting but kept off the gradient path, and the
// effective gamma is 0.
template <typename T>
BatchLoss<T> batch_loss(Tape<T>& tape, MuvamModel<T>& model, std::span<const Example<T>> batch,
                        const LossOptions& opts) {
  require_valid_gamma(opts.gamma);
  if (batch.empty()) throw UsageError("batch_loss on an empty batch");
  std::vector<Var<T>> closed_probs, open_probs;
  std::vector<Tensor<T>> closed_targets, open_targets;
  Var<T> mq_total;
  for (const auto& ex : batch) {
    ForwardResult<T> r = forward(tape, model, *ex.tokens, *ex.image, ex.type);
    if (ex.type == AnswerType::kClosed) {
      closed_probs.push_back(r.probs);
      closed_targets.push_back(ex.target);
    } else {
      open_probs.push_back(r.probs);
      open_targets.push_back(ex.target);
    }
    Var<T> a_m = r.a_m, a_q = r.a_q;
    if (!opts.use_iqc_loss) {
      a_m = ops::detach(a_m);
      a_q = ops::detach(a_q);
    } else if (opts.routing == IqcRouting::kDetachImage) {
      a_m = ops::detach(a_m);
    } else if (opts.routing == IqcRouting::kDetachText) {
      a_q = ops::detach(a_q);
    }
    Var<T> mq = iqc_loss(a_m, a_q);
    mq_total = mq_total.valid() ? ops::add(mq_total, mq) : mq;
  }
  Var<T> l_c = classification_loss<T>(tape, closed_probs, closed_targets, open_probs, open_targets);
  Var<T> l_mq = ops::scale(mq_total, T{1} / static_cast<T>(batch.size()));
  BatchLoss<T> out;
  const double gamma = opts.use_iqc_loss ? opts.gamma : 0.0;
  out.total = opts.use_iqc_loss ? composite_loss(l_c, l_mq, gamma) : l_c;
  out.breakdown.l_c = static_cast<double>(l_c.value().item());
  out.breakdown.l_mq = static_cast<double>(l_mq.value().item());
  out.breakdown.gamma = gamma;
  out.breakdown.total = static_cast<double>(out.total.value().item());
  return out;
}

}  // namespace muvam

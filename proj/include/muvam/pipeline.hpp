#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "muvam/adamax.hpp"
#include "muvam/config.hpp"
#include "muvam/dataset.hpp"
#include "muvam/errors.hpp"
#include "muvam/grad_check.hpp"
#include "muvam/image_io.hpp"
#include "muvam/model.hpp"
#include "muvam/serialize.hpp"

namespace muvam {

// ---------------------------------------------------------------------------
// Accuracy (correct / total, in percent)

struct Accuracy {
  std::size_t correct_open = 0, total_open = 0;
  std::size_t correct_closed = 0, total_closed = 0;

  static double percent(std::size_t correct, std::size_t total) {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
  double open() const { return percent(correct_open, total_open); }
  double closed() const { return percent(correct_closed, total_closed); }
  double overall() const { return percent(correct_open + correct_closed, total_open + total_closed); }

  json to_json() const {
    return json{{"open", open()},         {"closed", closed()},         {"overall", overall()},
                {"correct_open", correct_open}, {"total_open", total_open}, {"correct_closed", correct_closed},
                {"total_closed", total_closed}};
  }

  friend bool operator==(const Accuracy&, const Accuracy&) = default;
};

// ---------------------------------------------------------------------------
// Corpus preparation

struct PreparedSample {
  std::string sample_id;
  std::string question;
  TokenSequence tokens;
  Tensor<float> image;
  AnswerType type = AnswerType::kClosed;
  std::optional<std::size_t> answer_index;  // none: answer outside the candidate set
  std::string answer;                       // normalized ground truth
};

struct Corpus {
  WordVocabulary words;
  AnswerVocabulary answers;
  std::vector<VqaSample> train_samples;
  std::vector<PreparedSample> train;
  std::vector<PreparedSample> test;
};

// Loads a PGM and brings it to the model's [channels x size x size] input.
inline Tensor<float> load_model_image(const std::filesystem::path& path, const ModelConfig& c) {
  Tensor<float> gray = image_to_tensor<float>(read_pgm(path));
  Tensor<float> sized = resize_bilinear(gray, c.image.image_size);
  if (c.image.channels == 1) return sized;
  Tensor<float> out(Shape{c.image.channels, c.image.image_size, c.image.image_size});
  for (std::size_t ch = 0; ch < c.image.channels; ++ch)
    std::copy(sized.data.begin(), sized.data.end(), out.data.begin() + ch * sized.numel());
  return out;
}

// Strict preparation: any record with a missing/invalid required field is a
// DataError. Vocabularies come from `fixed_*` when given (evaluation against
// a checkpoint), otherwise from the dataset.
inline Corpus prepare_corpus(const Dataset& ds, const ModelConfig& model_cfg, VocabularyPolicy policy,
                             const WordVocabulary* fixed_words = nullptr,
                             const AnswerVocabulary* fixed_answers = nullptr) {
  for (const auto& s : ds.samples) {
    if (!s.missing_fields.empty()) {
      throw DataError("sample '" + s.sample_id + "': missing or invalid field '" + s.missing_fields.front() + "'");
    }
  }
  Corpus corpus;
  std::vector<std::string> train_questions;
  for (const auto& s : ds.samples) {
    if (*s.split == Split::kTrain) {
      corpus.train_samples.push_back(s);
      train_questions.push_back(s.question);
    }
  }
  corpus.words = fixed_words ? *fixed_words : WordVocabulary::from_texts(train_questions);
  corpus.answers = fixed_answers ? *fixed_answers : build_answer_vocabulary(ds.samples, policy);
  std::map<std::string, Tensor<float>> cache;
  for (const auto& s : ds.samples) {
    PreparedSample p;
    p.sample_id = s.sample_id;
    p.question = s.question;
    p.tokens = tokenize_and_pad(s.question, corpus.words, model_cfg.n);
    auto it = cache.find(s.image_ref);
    if (it == cache.end()) it = cache.emplace(s.image_ref, load_model_image(ds.base_dir / s.image_ref, model_cfg)).first;
    p.image = it->second;
    p.type = *s.answer_type;
    p.answer = normalize_answer(s.answer);
    p.answer_index = corpus.answers.index(p.type, p.answer);
    (*s.split == Split::kTrain ? corpus.train : corpus.test).push_back(std::move(p));
  }
  return corpus;
}

// Model dims with vocabulary-dependent sizes filled in from the corpus.
inline ModelConfig sized_model_config(ModelConfig c, const Corpus& corpus) {
  c.vocab_size = corpus.words.size();
  c.closed_answers = std::max<std::size_t>(1, corpus.answers.size(AnswerType::kClosed));
  c.open_answers = std::max<std::size_t>(1, corpus.answers.size(AnswerType::kOpen));
  return c;
}

// Findings that block training in strict mode. Test answers outside the
// candidate set are expected (they score as incorrect) and do not block.
inline ValidationReport training_blockers(const Dataset& ds, VocabularyPolicy policy) {
  ValidationReport all = validate(ds.samples, build_answer_vocabulary(ds.samples, policy),
                                  ValidateOptions{ds.base_dir});
  ValidationReport out;
  for (const auto& f : all.findings) {
    if (f.kind != AnomalyKind::kUndefinedAnswer) out.findings.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

struct Prediction {
  std::size_t index = 0;
  AnswerDistribution distribution;
  AttentionWeights a_q, a_m;
};

inline Prediction predict(MuvamModel<float>& model, const PreparedSample& s) {
  Tape<float> tape;
  ForwardResult<float> r = forward(tape, model, s.tokens, s.image, s.type);
  Prediction p;
  p.distribution = distribution_from_logits(r.logits.value());
  p.index = p.distribution.predicted;
  p.a_q = to_attention_weights(r.a_q, AttentionView::kW2T);
  p.a_m = to_attention_weights(r.a_m, AttentionView::kI2Q);
  return p;
}

// Argmax per sample, exact match against the normalized ground truth.
// Answers outside the candidate set count as incorrect.
inline Accuracy evaluate(MuvamModel<float>& model, const std::vector<PreparedSample>& samples) {
  Accuracy acc;
  for (const auto& s : samples) {
    const bool correct = s.answer_index && predict(model, s).index == *s.answer_index;
    if (s.type == AnswerType::kOpen) {
      ++acc.total_open;
      acc.correct_open += correct;
    } else {
      ++acc.total_closed;
      acc.correct_closed += correct;
    }
  }
  return acc;
}

// Evaluates a checkpoint on a dataset using the checkpoint's vocabularies.
inline Accuracy evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& ds, std::optional<Split> split) {
  const ModelConfig& c = ckpt.model.config;
  if (c.vocab_size != ckpt.words.size() ||
      c.closed_answers != std::max<std::size_t>(1, ckpt.answers.size(AnswerType::kClosed)) ||
      c.open_answers != std::max<std::size_t>(1, ckpt.answers.size(AnswerType::kOpen))) {
    throw ConfigError("checkpoint model dims do not match its vocabularies");
  }
  // A dataset that carries training samples must induce the checkpoint's
  // answer sets; a test-only dataset is scored against them as is.
  VocabularyPolicy policy = VocabularyPolicy::kTrainOnly;
  if (ckpt.meta.contains("train_config") && ckpt.meta["train_config"].value("answer_policy", "train") == "all") {
    policy = VocabularyPolicy::kAllSplits;
  }
  const AnswerVocabulary induced = build_answer_vocabulary(ds.samples, policy);
  if (induced.total() != 0 && !(induced == ckpt.answers)) {
    throw ConfigError("dataset answer vocabulary (" + std::to_string(induced.total()) +
                      " answers) does not match the checkpoint's (" + std::to_string(ckpt.answers.total()) + ")");
  }
  Corpus corpus = prepare_corpus(ds, c, VocabularyPolicy::kTrainOnly, &ckpt.words, &ckpt.answers);
  MuvamModel<float> model = ckpt.model;
  std::vector<PreparedSample> chosen;
  if (!split || *split == Split::kTrain) chosen.insert(chosen.end(), corpus.train.begin(), corpus.train.end());
  if (!split || *split == Split::kTest) chosen.insert(chosen.end(), corpus.test.begin(), corpus.test.end());
  return evaluate(model, chosen);
}

// ---------------------------------------------------------------------------
// Training

struct MetricsRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;
  Accuracy train;
  std::optional<Accuracy> eval;
  double wall_seconds = 0.0;

  // Wall time is excluded unless asked for, keeping the record a pure
  // function of (config, seed, dataset).
  json to_json(bool with_timing = false) const {
    json j{{"epoch", epoch},
           {"loss", {{"l_c", loss.l_c}, {"l_mq", loss.l_mq}, {"gamma", loss.gamma}, {"total", loss.total}}},
           {"train", train.to_json()}};
    if (eval) j["eval"] = eval->to_json();
    if (with_timing) j["wall_seconds"] = wall_seconds;
    return j;
  }
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  MuvamModel<float> final_model;
  MuvamModel<float> best_model;
  std::size_t best_epoch = 0;
  Accuracy best_accuracy;  // on the selection split
};

inline std::string first_non_finite(MuvamModel<float>& model) {
  std::string found;
  model.visit([&](const std::string& name, Tensor<float>& t) {
    if (!found.empty()) return;
    if (!t.all_finite()) found = name;
    else if (t.grad && !Tensor<float>(t.shape, *t.grad).all_finite()) found = name + ".grad";
  });
  return found;
}

using EpochCallback = std::function<void(const MetricsRecord&)>;

// Per epoch: seeded type-split batches -> forward -> composite loss ->
// backward -> Adamax. The best model is selected on overall accuracy of the
// test split when present, otherwise of the training split; ties keep the
// earlier epoch.
inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (corpus.train.empty()) throw DataError("no training samples");
  const ModelConfig mc = sized_model_config(cfg.model, corpus);
  MuvamModel<float> model = MuvamModel<float>::init(mc, cfg.seed);
  if (!cfg.embeddings.empty()) load_embedding_file(cfg.embeddings, corpus.words, model.question);
  std::vector<Tensor<float>*> params;
  model.visit([&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
  Adamax<float> opt(cfg.adamax());
  const LossOptions loss_opts = cfg.loss();

  TrainResult result;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const BatchPlan plan = make_batches(corpus.train_samples, corpus.answers, corpus.words, mc.n, cfg.batch_size,
                                        cfg.seed * 1000003ULL + epoch);
    double sum_lc = 0.0, sum_lmq = 0.0;
    for (const auto& b : plan.batches) {
      std::vector<Example<float>> examples;
      examples.reserve(b.size());
      for (std::size_t k = 0; k < b.size(); ++k) {
        const PreparedSample& s = corpus.train[b.indices[k]];
        const auto t = b.target(k);
        examples.push_back(Example<float>{&s.tokens, &s.image, b.type, Tensor<float>(Shape{t.size()}, t)});
      }
      Tape<float> tape;
      BatchLoss<float> loss = batch_loss<float>(tape, model, examples, loss_opts);
      if (!std::isfinite(loss.breakdown.total)) {
        std::string culprit = first_non_finite(model);
        if (culprit.empty()) culprit = std::isfinite(loss.breakdown.l_c) ? "l_mq" : "l_c";
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + "; first non-finite tensor: " +
                             culprit);
      }
      model.zero_grad();
      tape.backward(loss.total);
      if (std::string culprit = first_non_finite(model); !culprit.empty()) {
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + " in " + culprit);
      }
      opt.step(params);
      sum_lc += loss.breakdown.l_c;
      sum_lmq += loss.breakdown.l_mq;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(1, plan.batches.size()));
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss = composite_loss(sum_lc / nb, sum_lmq / nb, cfg.use_iqc_loss ? cfg.gamma : 0.0);
    rec.train = evaluate(model, corpus.train);
    if (!corpus.test.empty()) rec.eval = evaluate(model, corpus.test);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Accuracy& sel = rec.eval ? *rec.eval : rec.train;
    if (!have_best || sel.overall() > result.best_accuracy.overall()) {
      have_best = true;
      result.best_accuracy = sel;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    result.metrics.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!have_best) {
    result.best_model = model;
    result.best_accuracy = evaluate(model, corpus.test.empty() ? corpus.train : corpus.test);
  }
  result.final_model = std::move(model);
  return result;
}

inline Checkpoint make_checkpoint(const MuvamModel<float>& model, const Corpus& corpus, const TrainConfig& cfg) {
  Checkpoint c;
  c.model = model;
  c.words = corpus.words;
  c.answers = corpus.answers;
  c.optimizer = cfg.adamax();
  c.meta = {{"train_config", train_config_to_json(cfg)}};
  return c;
}

// ---------------------------------------------------------------------------
// Whole-model gradient check in double precision

// Checks every parameter of `model` on a batch made of the first `per_type`
// closed and first `per_type` open training samples, under the full
// composite loss.
inline GradCheckReport model_grad_check(const MuvamModel<float>& model, const Corpus& corpus,
                                        const LossOptions& loss_opts, const GradCheckOptions& check,
                                        std::size_t per_type = 1) {
  MuvamModel<double> m = const_cast<MuvamModel<float>&>(model).cast<double>();
  std::vector<const PreparedSample*> chosen;
  for (AnswerType type : {AnswerType::kClosed, AnswerType::kOpen}) {
    std::size_t taken = 0;
    for (const auto& s : corpus.train) {
      if (taken == per_type) break;
      if (s.type == type && s.answer_index) {
        chosen.push_back(&s);
        ++taken;
      }
    }
  }
  if (chosen.empty()) throw DataError("gradient check needs at least one labelled training sample");
  std::vector<Tensor<double>> images;
  images.reserve(chosen.size());
  for (const auto* s : chosen) images.push_back(s->image.cast<double>());
  std::vector<Example<double>> batch;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto* s = chosen[i];
    const std::size_t k = s->type == AnswerType::kClosed ? m.config.closed_answers : m.config.open_answers;
    Tensor<double> target(Shape{k}, 0.0);
    target[*s->answer_index] = 1.0;
    batch.push_back(Example<double>{&s->tokens, &images[i], s->type, std::move(target)});
  }
  auto loss = [&] {
    Tape<double> tape;
    return batch_loss<double>(tape, m, batch, loss_opts).breakdown.total;
  };
  auto analytic = [&] {
    Tape<double> tape;
    BatchLoss<double> b = batch_loss<double>(tape, m, batch, loss_opts);
    m.zero_grad();
    tape.backward(b.total);
  };
  const auto params = m.named_parameters();
  return grad_check<double>(loss, analytic, params, check);
}

// Step ladder for the whole-model check: tensors over `tolerance` at 1e-5
// are re-probed at smaller steps (kinks) and then a larger one (roundoff).
inline GradCheckOptions model_grad_check_options(double tolerance = 1e-4, double epsilon = 1e-5,
                                                 std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.epsilon = epsilon;
  o.max_coords = max_coords;
  o.retry_above = tolerance;
  o.fallback_steps = {1e-6, 1e-7, 1e-4};
  return o;
}

inline std::string format_grad_check(const GradCheckReport& r, bool as_json) {
  if (as_json) {
    json j{{"max_coordinate_rel_error", r.max_rel_error},
           {"worst_coordinate_tensor", r.worst},
           {"max_tensor_rel_error", r.max_tensor_rel_error},
           {"worst_tensor", r.worst_tensor},
           {"tensors", json::array()}};
    for (const auto& e : r.entries) {
      j["tensors"].push_back({{"name", e.name},
                              {"coords", e.coords_checked},
                              {"tensor_rel_error", e.tensor_rel_error},
                              {"epsilon", e.epsilon},
                              {"max_coordinate_rel_error", e.max_rel_error}});
    }
    return j.dump(2) + "\n";
  }
  std::ostringstream os;
  os << std::left << std::setw(32) << "tensor" << std::right << std::setw(8) << "coords" << std::setw(10) << "step"
     << std::setw(14) << "tensor_err" << std::setw(14) << "max_coord_err" << '\n';
  for (const auto& e : r.entries) {
    char h[32], a[32], b[32];
    std::snprintf(h, sizeof h, "%.0e", e.epsilon);
    std::snprintf(a, sizeof a, "%.3e", e.tensor_rel_error);
    std::snprintf(b, sizeof b, "%.3e", e.max_rel_error);
    os << std::left << std::setw(32) << e.name << std::right << std::setw(8) << e.coords_checked << std::setw(10) << h
       << std::setw(14) << a << std::setw(14) << b << '\n';
  }
  os << "worst tensor: " << r.worst_tensor << " (" << r.max_tensor_rel_error << ")\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation and gamma sweep

struct AblationRow {
  std::string method;
  Accuracy accuracy;
};

inline std::vector<AblationRow> ablation_run(const TrainConfig& base, const Corpus& corpus) {
  struct Variant {
    const char* name;
    bool att;
    bool iqc;
  };
  static constexpr Variant kVariants[] = {{"baseline", false, false},
                                          {"baseline+att", true, false},
                                          {"baseline+L_mq", false, true},
                                          {"baseline+att+L_mq", true, true}};
  std::vector<AblationRow> rows;
  for (const auto& v : kVariants) {
    TrainConfig cfg = base;
    cfg.model.use_i2q_attention = v.att;
    cfg.use_iqc_loss = v.iqc;
    rows.push_back({v.name, train(cfg, corpus).best_accuracy});
  }
  return rows;
}

// 0.0, 0.2, ..., 2.0
inline std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 5.0);
  return g;
}

struct GammaPoint {
  double gamma = 0.0;
  Accuracy accuracy;
};

inline std::vector<GammaPoint> gamma_sweep(const TrainConfig& base, const Corpus& corpus,
                                           const std::vector<double>& values = default_gamma_grid()) {
  for (double g : values) require_valid_gamma(g);
  std::vector<GammaPoint> out;
  for (double g : values) {
    TrainConfig cfg = base;
    cfg.gamma = g;
    cfg.use_iqc_loss = true;
    out.push_back({g, train(cfg, corpus).best_accuracy});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Table emitters (stable formatting: fixed width, two decimals)

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows, bool as_json) {
  if (as_json) {
    json j = json::array();
    for (const auto& r : rows) {
      j.push_back({{"method", r.method},
                   {"open", r.accuracy.open()},
                   {"closed", r.accuracy.closed()},
                   {"overall", r.accuracy.overall()}});
    }
    return j.dump(2) + "\n";
  }
  std::ostringstream os;
  os << std::left << std::setw(20) << "method" << std::right << std::setw(10) << "open" << std::setw(10) << "closed"
     << std::setw(10) << "overall" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << r.method << std::right << std::setw(10) << fixed2(r.accuracy.open())
       << std::setw(10) << fixed2(r.accuracy.closed()) << std::setw(10) << fixed2(r.accuracy.overall()) << '\n';
  }
  return os.str();
}

// Best column: highest overall accuracy, earliest gamma on ties.
inline std::size_t best_gamma_index(const std::vector<GammaPoint>& points) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].accuracy.overall() > points[best].accuracy.overall()) best = i;
  }
  return best;
}

inline std::string format_gamma_table(const std::vector<GammaPoint>& points, bool as_json) {
  const std::size_t best = points.empty() ? 0 : best_gamma_index(points);
  if (as_json) {
    json j;
    j["gamma"] = json::array();
    j["open"] = json::array();
    j["closed"] = json::array();
    j["overall"] = json::array();
    for (const auto& p : points) {
      j["gamma"].push_back(p.gamma);
      j["open"].push_back(p.accuracy.open());
      j["closed"].push_back(p.accuracy.closed());
      j["overall"].push_back(p.accuracy.overall());
    }
    j["best_gamma"] = points.empty() ? json(nullptr) : json(points[best].gamma);
    return j.dump(2) + "\n";
  }
  std::ostringstream os;
  auto cell = [&](const std::string& s, std::size_t i) {
    os << std::setw(9) << (i == best ? "*" + s : s);
  };
  os << std::left << std::setw(10) << "gamma" << std::right;
  for (std::size_t i = 0; i < points.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", points[i].gamma);
    cell(buf, i);
  }
  os << '\n';
  const std::pair<const char*, double (Accuracy::*)() const> rows[] = {
      {"open", &Accuracy::open}, {"closed", &Accuracy::closed}, {"overall", &Accuracy::overall}};
  for (const auto& [label, fn] : rows) {
    os << std::left << std::setw(10) << label << std::right;
    for (std::size_t i = 0; i < points.size(); ++i) cell(fixed2((points[i].accuracy.*fn)()), i);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Attention explanation (per-word a_q / a_m dump)

struct ExplainResult {
  std::string sample_id;
  AnswerType type = AnswerType::kClosed;
  std::string predicted;
  std::string truth;
  std::vector<std::string> tokens;
  AttentionWeights a_q, a_m;
};

inline ExplainResult explain(MuvamModel<float>& model, const Corpus& corpus, const PreparedSample& s) {
  const Prediction p = predict(model, s);
  ExplainResult e;
  e.sample_id = s.sample_id;
  e.type = s.type;
  const auto& answers = corpus.answers.answers(s.type);
  e.predicted = p.index < answers.size() ? answers[p.index] : "<none>";
  e.truth = s.answer;
  const auto raw = tokenize(s.question);
  for (std::size_t i = 0; i < s.tokens.ids.size(); ++i) {
    e.tokens.push_back(i < s.tokens.true_length ? raw[i] : std::string(WordVocabulary::kPadToken));
  }
  e.a_q = p.a_q;
  e.a_m = p.a_m;
  return e;
}

inline std::string format_explain(const ExplainResult& e, bool as_json) {
  if (as_json) {
    json j{{"sample_id", e.sample_id},
           {"answer_type", to_string(e.type)},
           {"predicted", e.predicted},
           {"truth", e.truth},
           {"words", json::array()}};
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      j["words"].push_back({{"position", i}, {"token", e.tokens[i]}, {"a_q", e.a_q[i]}, {"a_m", e.a_m[i]}});
    }
    return j.dump() + "\n";
  }
  std::ostringstream os;
  os << "sample " << e.sample_id << "  type=" << to_string(e.type) << "  predicted=" << e.predicted
     << "  truth=" << e.truth << '\n';
  os << std::setw(4) << "pos" << "  " << std::left << std::setw(16) << "token" << std::right << std::setw(10) << "a_q"
     << std::setw(10) << "a_m" << '\n';
  for (std::size_t i = 0; i < e.tokens.size(); ++i) {
    char q[32], m[32];
    std::snprintf(q, sizeof q, "%.6f", e.a_q[i]);
    std::snprintf(m, sizeof m, "%.6f", e.a_m[i]);
    os << std::setw(4) << i << "  " << std::left << std::setw(16) << e.tokens[i] << std::right << std::setw(10) << q
       << std::setw(10) << m << '\n';
  }
  return os.str();
}

}  // namespace muvam

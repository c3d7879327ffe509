#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "muvam/muvam.hpp"

namespace muvam::testing {

// ---------------------------------------------------------------------------
// Generators

inline std::size_t gen_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

template <typename T>
Tensor<T> gen_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

// Values bounded away from zero, for ops with a kink there.
template <typename T>
Tensor<T> gen_tensor_off_zero(Rng& rng, Shape shape, double margin = 0.05) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) {
    const double m = rng.uniform(margin, 1.0);
    x = static_cast<T>(rng.below(2) ? m : -m);
  }
  return t;
}

// Point on the probability simplex (normalized exponentials).
inline std::vector<double> gen_simplex(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

inline std::string gen_word(Rng& rng, std::size_t max_len = 6) {
  std::string w;
  const std::size_t len = gen_size(rng, 1, max_len);
  for (std::size_t i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
  return w;
}

inline TokenSequence gen_tokens(Rng& rng, std::size_t n, std::size_t vocab_size) {
  TokenSequence s;
  s.true_length = gen_size(rng, 1, n);
  s.ids.assign(n, WordVocabulary::kPad);
  for (std::size_t i = 0; i < s.true_length; ++i) s.ids[i] = 1 + static_cast<std::size_t>(rng.below(vocab_size - 1));
  return s;
}

// Random small model config; image sides stay at the branch minimums plus a
// little slack so forward passes are cheap.
inline ModelConfig gen_model_config(Rng& rng) {
  ModelConfig c = ModelConfig::desk_scale();
  c.n = gen_size(rng, 1, 8);
  c.d_h = gen_size(rng, 1, 6);
  c.d_s = gen_size(rng, 1, 6);
  c.image.maml_layers = gen_size(rng, 1, 2);
  c.image.cdae_blocks = gen_size(rng, 1, 2);
  c.image.maml_filters = gen_size(rng, 1, 3);
  c.image.cdae_filters = gen_size(rng, 1, 3);
  c.image.branch_dim = gen_size(rng, 1, 3);
  c.d_k = 2 * c.image.branch_dim;
  c.image.image_size = maml_min_size(c.image) + gen_size(rng, 0, 3);
  c.image.cdae_input_size = cdae_min_size(c.image) + gen_size(rng, 0, 3);
  c.i2q_hidden = gen_size(rng, 1, 5);
  c.fusion = FusionConfig{gen_size(rng, 1, 4), gen_size(rng, 1, 2), gen_size(rng, 1, 5)};
  c.classifier_hidden = gen_size(rng, 1, 5);
  c.vocab_size = gen_size(rng, 3, 9);
  c.closed_answers = gen_size(rng, 1, 3);
  c.open_answers = gen_size(rng, 1, 4);
  c.mask_padding = rng.below(2) == 1;
  return c;
}

// ---------------------------------------------------------------------------
// Finite-difference check of a single tape function

// Binds `inputs` as parameters, reduces the output with fixed random weights
// so every output coordinate contributes, and compares against central
// differences. Returns the largest per-tensor relative error.
inline double op_gradient_error(const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& fn,
                                std::vector<Tensor<double>>& inputs, std::uint64_t seed,
                                double epsilon = 1e-6) {
  for (auto& t : inputs) t.requires_grad = true;
  Tensor<double> weights;
  auto reduce = [&](Tape<double>& tape, const Var<double>& out) {
    if (weights.numel() != out.numel()) {
      Rng rng(seed);
      weights = gen_tensor<double>(rng, out.shape());
    }
    return ops::sum(ops::hadamard(out, tape.constant(Tensor<double>(out.shape(), weights.data))));
  };
  auto run = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tape.parameter(t));
    return reduce(tape, fn(tape, vars));
  };
  auto loss = [&] {
    Tape<double> tape;
    return run(tape).value().item();
  };
  auto analytic = [&] {
    Tape<double> tape;
    Var<double> l = run(tape);
    tape.backward(l);
  };
  std::vector<NamedTensor<double>> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.push_back({"input" + std::to_string(i), &inputs[i]});
  return grad_check<double>(loss, analytic, named, epsilon).max_tensor_rel_error;
}

// ---------------------------------------------------------------------------
// Filesystem helpers

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("muvam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline VqaSample make_sample(std::string id, std::string image, std::string question, std::string answer,
                             AnswerType type, Split split) {
  VqaSample s;
  s.sample_id = std::move(id);
  s.image_ref = std::move(image);
  s.question = std::move(question);
  s.answer = std::move(answer);
  s.answer_type = type;
  s.split = split;
  return s;
}

// Corpus with planted faults: 3 undefined answers, 2 type mismatches, 1
// duplicate and 1 dangling image, plus corrections that fix each of them.
struct PlantedCorpus {
  Dataset dataset;
  std::vector<Correction> corrections;
  std::vector<std::string> faulty_ids;
};

inline PlantedCorpus planted_corpus(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  GrayImage img;
  img.width = img.height = 4;
  img.pixels.assign(16, 128);
  for (int i = 0; i < 8; ++i) write_pgm(dir / ("images/p" + std::to_string(i) + ".pgm"), img);
  auto im = [](int i) { return "images/p" + std::to_string(i) + ".pgm"; };
  using AT = AnswerType;
  PlantedCorpus c;
  c.dataset.base_dir = dir;
  auto& s = c.dataset.samples;
  // Clean training samples.
  s.push_back(make_sample("t1", im(0), "Is there a mass?", "Yes", AT::kClosed, Split::kTrain));
  s.push_back(make_sample("t2", im(1), "Is the liver enlarged?", "no", AT::kClosed, Split::kTrain));
  s.push_back(make_sample("t3", im(2), "What organ is shown?", "liver", AT::kOpen, Split::kTrain));
  s.push_back(make_sample("t4", im(3), "Where is the lesion?", "left lung", AT::kOpen, Split::kTrain));
  s.push_back(make_sample("t5", im(4), "What is abnormal?", "kidney", AT::kOpen, Split::kTrain));
  // Type mismatches.
  s.push_back(make_sample("m1", im(5), "Is there an acute bleed present?", "Necrotic tissue", AT::kClosed, Split::kTrain));
  s.push_back(make_sample("m2", im(6), "Is the lesion in the left or right lobe?", "liver", AT::kClosed, Split::kTrain));
  // Duplicate of t3 with a conflicting answer.
  s.push_back(make_sample("d1", im(2), "What organ is shown?", "kidney", AT::kOpen, Split::kTrain));
  // Clean test samples.
  s.push_back(make_sample("c1", im(7), "What organ is shown?", "Liver", AT::kOpen, Split::kTest));
  s.push_back(make_sample("c2", im(7), "Is there a mass?", "no", AT::kClosed, Split::kTest));
  // Undefined answers.
  s.push_back(make_sample("u1", im(0), "What organ is this?", "spleen", AT::kOpen, Split::kTest));
  s.push_back(make_sample("u2", im(1), "Where is the mass?", "right lung", AT::kOpen, Split::kTest));
  s.push_back(make_sample("u3", im(3), "What is seen?", "pancreas", AT::kOpen, Split::kTest));
  // Dangling image.
  s.push_back(make_sample("g1", "images/missing.pgm", "Is there a fracture?", "yes", AT::kClosed, Split::kTest));
  c.corrections = {
      {"u1", "answer", "spleen", "liver", "expert review"},
      {"u2", "answer", "right lung", "left lung", "expert review"},
      {"u3", "answer", "pancreas", "kidney", "expert review"},
      {"m1", "answer", "Necrotic tissue", "Yes", "closed question needs a yes/no answer"},
      {"m2", "answer", "liver", "left", "answer must be one of the alternatives"},
      {"d1", "answer", "kidney", "liver", "agrees with the earlier annotation"},
      {"g1", "image_ref", "images/missing.pgm", im(4), "points at the archived image"},
  };
  c.faulty_ids = {"u1", "u2", "u3", "m1", "m2", "d1", "g1"};
  save_dataset(dir / "dataset.json", c.dataset);
  {
    std::ofstream out(dir / "corrections.json");
    out << corrections_to_json(c.corrections).dump(2) << '\n';
  }
  return c;
}

// Synthetic desk-scale corpus written under `dir`.
struct DeskCorpus {
  Dataset dataset;
  Corpus corpus;
  TrainConfig config;
};

inline DeskCorpus desk_corpus(const std::filesystem::path& dir, std::size_t train, std::size_t test,
                              std::uint64_t seed = 1) {
  DeskCorpus d;
  d.config = TrainConfig::desk();
  d.config.seed = seed;
  d.dataset = make_fixture(dir, FixtureOptions{train, test, d.config.model.image.image_size, seed});
  d.corpus = prepare_corpus(d.dataset, d.config.model, d.config.answer_policy);
  return d;
}

}  // namespace muvam::testing

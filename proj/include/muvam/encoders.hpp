#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/init.hpp"
#include "muvam/ops.hpp"
#include "muvam/rng.hpp"
#include "muvam/tape.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

// ---------------------------------------------------------------------------
// Text side

// Lowercase, punctuation becomes a separator, split on whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isspace(ch) || std::ispunct(ch)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// Question-word vocabulary. Id 0 is PAD, id 1 is UNK, real words follow in
// lexicographic order.
class WordVocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  WordVocabulary() : words_{std::string(kPadToken), std::string(kUnkToken)} {}

  explicit WordVocabulary(const std::vector<std::string>& words) : WordVocabulary() {
    std::set<std::string> unique(words.begin(), words.end());
    unique.erase(std::string(kPadToken));
    unique.erase(std::string(kUnkToken));
    for (const auto& w : unique) {
      index_.emplace(w, words_.size());
      words_.push_back(w);
    }
  }

  static WordVocabulary from_texts(const std::vector<std::string>& texts) {
    std::vector<std::string> words;
    for (const auto& t : texts) {
      auto toks = tokenize(t);
      words.insert(words.end(), toks.begin(), toks.end());
    }
    return WordVocabulary(words);
  }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word(std::size_t id) const {
    if (id >= words_.size()) throw VocabularyError("word id " + std::to_string(id) + " out of range");
    return words_[id];
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  // Real words only (without PAD/UNK), as persisted in checkpoints.
  std::vector<std::string> real_words() const { return {words_.begin() + 2, words_.end()}; }

  friend bool operator==(const WordVocabulary& a, const WordVocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

struct TokenSequence {
  std::vector<std::size_t> ids;  // always exactly n entries
  std::size_t true_length = 0;
};

inline TokenSequence tokenize_and_pad(std::string_view text, const WordVocabulary& vocab, std::size_t n) {
  if (n == 0) throw ConfigError("question length n must be >= 1");
  TokenSequence seq;
  seq.ids.assign(n, WordVocabulary::kPad);
  const auto tokens = tokenize(text);
  seq.true_length = std::min(tokens.size(), n);
  for (std::size_t i = 0; i < seq.true_length; ++i) seq.ids[i] = vocab.id(tokens[i]);
  return seq;
}

// Standard GRU cell weights for input size d_h and hidden size d_s:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wn x + Un (r * h) + bn)
//   h' = c + z * (h - c)            i.e. (1 - z) c + z h
template <typename T>
struct GruWeights {
  Tensor<T> w_z, w_r, w_n;  // d_s x d_h
  Tensor<T> u_z, u_r, u_n;  // d_s x d_s
  Tensor<T> b_z, b_r, b_n;  // d_s

  static GruWeights init(std::size_t d_h, std::size_t d_s, Rng& rng) {
    GruWeights g;
    g.w_z = xavier_param<T>({d_s, d_h}, d_h, d_s, rng);
    g.w_r = xavier_param<T>({d_s, d_h}, d_h, d_s, rng);
    g.w_n = xavier_param<T>({d_s, d_h}, d_h, d_s, rng);
    g.u_z = xavier_param<T>({d_s, d_s}, d_s, d_s, rng);
    g.u_r = xavier_param<T>({d_s, d_s}, d_s, d_s, rng);
    g.u_n = xavier_param<T>({d_s, d_s}, d_s, d_s, rng);
    g.b_z = zero_param<T>({d_s});
    g.b_r = zero_param<T>({d_s});
    g.b_n = zero_param<T>({d_s});
    return g;
  }

  std::size_t input_size() const { return w_z.shape.at(1); }
  std::size_t hidden_size() const { return w_z.shape.at(0); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + "w_z", w_z); fn(prefix + "w_r", w_r); fn(prefix + "w_n", w_n);
    fn(prefix + "u_z", u_z); fn(prefix + "u_r", u_r); fn(prefix + "u_n", u_n);
    fn(prefix + "b_z", b_z); fn(prefix + "b_r", b_r); fn(prefix + "b_n", b_n);
  }
};

template <typename T>
struct QuestionEncoder {
  Tensor<T> embedding;  // |V| x d_h, row PAD stays zero
  GruWeights<T> gru;

  static QuestionEncoder init(std::size_t vocab_size, std::size_t d_h, std::size_t d_s, Rng& rng) {
    QuestionEncoder q;
    q.embedding = uniform_param<T>({vocab_size, d_h}, 0.5, rng);
    std::fill_n(q.embedding.data.begin(), d_h, T{0});
    q.gru = GruWeights<T>::init(d_h, d_s, rng);
    return q;
  }

  std::size_t embedding_dim() const { return embedding.shape.at(1); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + "embedding", embedding);
    gru.visit(prefix + "gru.", fn);
  }
};

// D [d_h x n]: column i is the embedding of token i; PAD columns are zero.
template <typename T>
Var<T> embed(Tape<T>& tape, QuestionEncoder<T>& enc, const TokenSequence& tokens) {
  Var<T> table = tape.parameter(enc.embedding);
  return ops::gather_rows_as_columns(table, std::span<const std::size_t>(tokens.ids), WordVocabulary::kPad);
}

// One GRU step; x [d_h], h [d_s].
template <typename T>
Var<T> gru_step(Tape<T>& tape, GruWeights<T>& w, const Var<T>& x, const Var<T>& h) {
  using namespace ops;
  auto gate = [&](Tensor<T>& wx, Tensor<T>& uh, Tensor<T>& b, const Var<T>& hin) {
    return add(add(matmul(tape.parameter(wx), x), matmul(tape.parameter(uh), hin)), tape.parameter(b));
  };
  Var<T> z = sigmoid(gate(w.w_z, w.u_z, w.b_z, h));
  Var<T> r = sigmoid(gate(w.w_r, w.u_r, w.b_r, h));
  Var<T> c = tanh(gate(w.w_n, w.u_n, w.b_n, hadamard(r, h)));
  return add(c, hadamard(z, sub(h, c)));
}

// Q [d_s x n]: column t is the hidden state after word t, from a zero initial
// state. With `stop_at` set, steps past that length are skipped and their
// columns are zero.
template <typename T>
Var<T> gru_encode(Tape<T>& tape, GruWeights<T>& w, const Var<T>& d,
                  std::optional<std::size_t> stop_at = std::nullopt) {
  const Shape& s = d.shape();
  if (s.size() != 2 || s[0] != w.input_size()) {
    throw DimensionError("gru_encode: expected " + std::to_string(w.input_size()) + " x n input, got " +
                         shape_string(s));
  }
  const std::size_t n = s[1], d_s = w.hidden_size();
  const std::size_t steps = stop_at ? std::min(*stop_at, n) : n;
  std::vector<Var<T>> states;
  states.reserve(n);
  Var<T> h = tape.constant(Tensor<T>(Shape{d_s}));
  for (std::size_t t = 0; t < steps; ++t) {
    h = gru_step(tape, w, ops::column(d, t), h);
    states.push_back(h);
  }
  if (steps < n) {
    Var<T> zero = tape.constant(Tensor<T>(Shape{d_s}));
    while (states.size() < n) states.push_back(zero);
  }
  return ops::stack_columns(std::span<const Var<T>>(states));
}

// Reads "token v1 v2 ... v_dh" lines into the rows of matching vocabulary
// words. Returns the number of rows filled; words absent from the file keep
// their seeded initialization.
template <typename T>
std::size_t load_embedding_file(const std::string& path, const WordVocabulary& vocab, QuestionEncoder<T>& enc) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file '" + path + "'");
  const std::size_t d_h = enc.embedding_dim();
  std::size_t filled = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<T> values;
    double v;
    while (ls >> v) values.push_back(static_cast<T>(v));
    if (values.size() != d_h) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(d_h) +
                      " values, found " + std::to_string(values.size()));
    }
    const std::size_t id = vocab.id(token);
    if (id == WordVocabulary::kUnk || id == WordVocabulary::kPad) continue;
    std::copy(values.begin(), values.end(), enc.embedding.data.begin() + id * d_h);
    ++filled;
  }
  return filled;
}

// ---------------------------------------------------------------------------
// Image side

struct ImageEncoderConfig {
  std::size_t channels = 1;
  std::size_t image_size = 84;        // square input fed to the meta-learned branch
  std::size_t maml_filters = 64;
  std::size_t maml_layers = 4;        // 3x3, stride 2
  std::size_t cdae_input_size = 128;  // resized internally when different
  std::size_t cdae_filters = 64;
  std::size_t cdae_blocks = 2;        // conv 3x3 stride 1 + max-pool 2x2 stride 2
  std::size_t branch_dim = 64;        // output of each branch; d_k = 2 * branch_dim
};

// Smallest square side accepted by each branch.
inline std::size_t maml_min_size(const ImageEncoderConfig& c) {
  std::size_t m = 1;
  for (std::size_t i = 0; i < c.maml_layers; ++i) m = (m - 1) * 2 + 3;
  return m;
}

inline std::size_t cdae_min_size(const ImageEncoderConfig& c) {
  std::size_t m = 1;
  for (std::size_t i = 0; i < c.cdae_blocks; ++i) m = ((m - 1) * 2 + 2) + 2;
  return m;
}

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // out x in x 3 x 3
  Tensor<T> bias;    // out

  static ConvLayer init(std::size_t in, std::size_t out, Rng& rng) {
    return ConvLayer{xavier_param<T>({out, in, 3, 3}, in * 9, out * 9, rng), zero_param<T>({out})};
  }
};

template <typename T>
struct ImageEncoder {
  ImageEncoderConfig config;
  std::vector<ConvLayer<T>> maml;
  Tensor<T> maml_proj, maml_proj_bias;  // branch_dim x maml_filters, branch_dim
  std::vector<ConvLayer<T>> cdae;
  Tensor<T> cdae_proj, cdae_proj_bias;  // branch_dim x cdae_filters, branch_dim

  static ImageEncoder init(const ImageEncoderConfig& c, Rng& rng) {
    ImageEncoder e;
    e.config = c;
    std::size_t in = c.channels;
    for (std::size_t i = 0; i < c.maml_layers; ++i) {
      e.maml.push_back(ConvLayer<T>::init(in, c.maml_filters, rng));
      in = c.maml_filters;
    }
    e.maml_proj = xavier_param<T>({c.branch_dim, c.maml_filters}, c.maml_filters, c.branch_dim, rng);
    e.maml_proj_bias = zero_param<T>({c.branch_dim});
    in = c.channels;
    for (std::size_t i = 0; i < c.cdae_blocks; ++i) {
      e.cdae.push_back(ConvLayer<T>::init(in, c.cdae_filters, rng));
      in = c.cdae_filters;
    }
    e.cdae_proj = xavier_param<T>({c.branch_dim, c.cdae_filters}, c.cdae_filters, c.branch_dim, rng);
    e.cdae_proj_bias = zero_param<T>({c.branch_dim});
    return e;
  }

  std::size_t output_dim() const { return 2 * config.branch_dim; }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t i = 0; i < maml.size(); ++i) {
      fn(prefix + "maml.conv" + std::to_string(i) + ".kernel", maml[i].kernel);
      fn(prefix + "maml.conv" + std::to_string(i) + ".bias", maml[i].bias);
    }
    fn(prefix + "maml.proj", maml_proj);
    fn(prefix + "maml.proj_bias", maml_proj_bias);
    for (std::size_t i = 0; i < cdae.size(); ++i) {
      fn(prefix + "cdae.conv" + std::to_string(i) + ".kernel", cdae[i].kernel);
      fn(prefix + "cdae.conv" + std::to_string(i) + ".bias", cdae[i].bias);
    }
    fn(prefix + "cdae.proj", cdae_proj);
    fn(prefix + "cdae.proj_bias", cdae_proj_bias);
  }
};

// Bilinear resample of a [c x h x w] image to [c x size x size] with
// align-corners sampling.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& image, std::size_t size) {
  const std::size_t c = image.shape.at(0), h = image.shape.at(1), w = image.shape.at(2);
  if (h == size && w == size) return Tensor<T>(image.shape, image.data);
  Tensor<T> out(Shape{c, size, size});
  auto coord = [size](std::size_t i, std::size_t extent) {
    return size == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(extent - 1) / static_cast<double>(size - 1);
  };
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < size; ++y) {
      const double fy = coord(y, h);
      const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = coord(x, w);
        const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - static_cast<double>(x0);
        auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image.data[(ch * h + yy) * w + xx]); };
        const double top = px(y0, x0) * (1 - tx) + px(y0, x1) * tx;
        const double bot = px(y1, x0) * (1 - tx) + px(y1, x1) * tx;
        out.data[(ch * size + y) * size + x] = static_cast<T>(top * (1 - ty) + bot * ty);
      }
    }
  return out;
}

// v [d_k] = concat(meta-learned branch, denoising-encoder branch).
template <typename T>
Var<T> encode_image(Tape<T>& tape, ImageEncoder<T>& enc, const Tensor<T>& image) {
  using namespace ops;
  const auto& c = enc.config;
  const Shape& s = image.shape;
  if (s.size() != 3 || s[0] != c.channels) {
    throw DimensionError("encode_image: expected [" + std::to_string(c.channels) + " x h x w], got " +
                         shape_string(s));
  }
  const std::size_t min_side = maml_min_size(c);
  if (s[1] < min_side || s[2] < min_side) {
    throw DimensionError("encode_image: image " + shape_string(s) + " smaller than required minimum " +
                         std::to_string(min_side) + "x" + std::to_string(min_side));
  }
  if (c.cdae_input_size < cdae_min_size(c)) {
    throw DimensionError("encode_image: denoising branch input " + std::to_string(c.cdae_input_size) +
                         " below required minimum " + std::to_string(cdae_min_size(c)));
  }

  Var<T> x = tape.constant(Tensor<T>(image.shape, image.data));
  for (auto& layer : enc.maml) {
    x = relu(conv2d(x, tape.parameter(layer.kernel), tape.parameter(layer.bias), 2));
  }
  Var<T> maml_feat = add(matmul(tape.parameter(enc.maml_proj), meanpool(x)), tape.parameter(enc.maml_proj_bias));

  Var<T> y = tape.constant(resize_bilinear(image, c.cdae_input_size));
  for (auto& layer : enc.cdae) {
    y = maxpool2d(relu(conv2d(y, tape.parameter(layer.kernel), tape.parameter(layer.bias), 1)), 2, 2);
  }
  Var<T> cdae_feat = add(matmul(tape.parameter(enc.cdae_proj), meanpool(y)), tape.parameter(enc.cdae_proj_bias));
  return concat(maml_feat, cdae_feat, 0);
}

}  // namespace muvam

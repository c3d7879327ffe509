#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "muvam/encoders.hpp"
#include "muvam/errors.hpp"
#include "muvam/rng.hpp"
#include "muvam/types.hpp"

namespace muvam {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Records

struct VqaSample {
  std::string sample_id;
  std::string image_ref;
  std::string question;
  std::string answer;
  std::optional<AnswerType> answer_type;
  std::optional<Split> split;
  json extra = json::object();  // unknown fields, preserved on save

  // Required fields that were absent, empty or invalid at load time.
  std::vector<std::string> missing_fields;

  AnswerType type() const {
    if (!answer_type) throw DataError("sample '" + sample_id + "' has no valid answer_type");
    return *answer_type;
  }

  friend bool operator==(const VqaSample& a, const VqaSample& b) {
    return a.sample_id == b.sample_id && a.image_ref == b.image_ref && a.question == b.question &&
           a.answer == b.answer && a.answer_type == b.answer_type && a.split == b.split && a.extra == b.extra;
  }
};

struct Dataset {
  std::vector<VqaSample> samples;
  json extra = json::object();    // unknown top-level keys
  std::filesystem::path base_dir;  // image_refs resolve against this
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Trim + lowercase; nothing else, so medical terms survive untouched.
inline std::string normalize_answer(std::string_view s) {
  std::string out = trim(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

namespace detail {

inline const std::set<std::string>& known_sample_fields() {
  static const std::set<std::string> k{"sample_id", "image_ref", "question", "answer", "answer_type", "split"};
  return k;
}

inline VqaSample sample_from_json(const json& rec, std::size_t index, bool strict) {
  if (!rec.is_object()) throw DataError("record " + std::to_string(index) + ": expected a JSON object");
  VqaSample s;
  auto text_field = [&](const char* key, std::string& dst) {
    auto it = rec.find(key);
    if (it == rec.end() || it->is_null()) {
      s.missing_fields.emplace_back(key);
      return;
    }
    if (!it->is_string()) throw DataError("record " + std::to_string(index) + ": field '" + key + "' must be a string");
    dst = it->get<std::string>();
    if (trim(dst).empty()) s.missing_fields.emplace_back(key);
  };
  text_field("sample_id", s.sample_id);
  text_field("image_ref", s.image_ref);
  text_field("question", s.question);
  text_field("answer", s.answer);
  std::string type_str, split_str;
  text_field("answer_type", type_str);
  text_field("split", split_str);
  if (!type_str.empty()) {
    s.answer_type = parse_answer_type(type_str);
    if (!s.answer_type) s.missing_fields.emplace_back("answer_type");
  }
  if (!split_str.empty()) {
    s.split = parse_split(split_str);
    if (!s.split) s.missing_fields.emplace_back("split");
  }
  for (auto it = rec.begin(); it != rec.end(); ++it) {
    if (!known_sample_fields().count(it.key())) s.extra[it.key()] = it.value();
  }
  if (strict && !s.missing_fields.empty()) {
    throw DataError("record " + std::to_string(index) + " (" + (s.sample_id.empty() ? "?" : s.sample_id) +
                    "): missing or invalid field '" + s.missing_fields.front() + "'");
  }
  if (s.sample_id.empty()) s.sample_id = "#" + std::to_string(index);
  return s;
}

}  // namespace detail

inline json sample_to_json(const VqaSample& s) {
  json j = s.extra;
  j["sample_id"] = s.sample_id;
  j["image_ref"] = s.image_ref;
  j["question"] = s.question;
  j["answer"] = s.answer;
  j["answer_type"] = s.answer_type ? to_string(*s.answer_type) : "";
  j["split"] = s.split ? to_string(*s.split) : "";
  return j;
}

// Parses {"samples": [...], ...}. Lenient mode keeps records with missing
// fields (validate() reports them); strict mode rejects them.
inline Dataset parse_dataset(std::string_view text, bool strict = false) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("dataset is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("samples") || !doc["samples"].is_array()) {
    throw DataError("dataset must be an object with a \"samples\" array");
  }
  Dataset ds;
  const auto& arr = doc["samples"];
  for (std::size_t i = 0; i < arr.size(); ++i) ds.samples.push_back(detail::sample_from_json(arr[i], i, strict));
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "samples") ds.extra[it.key()] = it.value();
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, bool strict = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Dataset ds;
  try {
    ds = parse_dataset(buf.str(), strict);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  ds.base_dir = path.parent_path();
  return ds;
}

inline json dataset_to_json(const Dataset& ds) {
  json doc = ds.extra;
  doc["samples"] = json::array();
  for (const auto& s : ds.samples) doc["samples"].push_back(sample_to_json(s));
  return doc;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  out << dataset_to_json(ds).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Answer vocabulary

enum class VocabularyPolicy {
  kTrainOnly,  // candidate answers come from the training split
  kAllSplits,  // every split contributes (expands the candidate set)
};

class AnswerVocabulary {
 public:
  AnswerVocabulary() = default;
  AnswerVocabulary(std::vector<std::string> closed, std::vector<std::string> open) {
    set(AnswerType::kClosed, std::move(closed));
    set(AnswerType::kOpen, std::move(open));
  }

  const std::vector<std::string>& answers(AnswerType t) const { return t == AnswerType::kClosed ? closed_ : open_; }
  std::size_t size(AnswerType t) const { return answers(t).size(); }
  std::size_t total() const { return closed_.size() + open_.size(); }

  std::optional<std::size_t> index(AnswerType t, std::string_view answer) const {
    const auto& idx = t == AnswerType::kClosed ? closed_index_ : open_index_;
    auto it = idx.find(normalize_answer(answer));
    if (it == idx.end()) return std::nullopt;
    return it->second;
  }

  // Samples skipped because their answer normalized to the empty string.
  std::vector<std::string> excluded_empty;

  friend bool operator==(const AnswerVocabulary& a, const AnswerVocabulary& b) {
    return a.closed_ == b.closed_ && a.open_ == b.open_;
  }

 private:
  void set(AnswerType t, std::vector<std::string> list) {
    std::set<std::string> uniq;
    for (auto& a : list) uniq.insert(normalize_answer(a));
    std::vector<std::string> sorted(uniq.begin(), uniq.end());
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < sorted.size(); ++i) idx.emplace(sorted[i], i);
    if (t == AnswerType::kClosed) {
      closed_ = std::move(sorted);
      closed_index_ = std::move(idx);
    } else {
      open_ = std::move(sorted);
      open_index_ = std::move(idx);
    }
  }

  std::vector<std::string> closed_, open_;
  std::map<std::string, std::size_t> closed_index_, open_index_;
};

// Normalized unique answers per type, lexicographically indexed.
inline AnswerVocabulary build_answer_vocabulary(const std::vector<VqaSample>& samples,
                                                VocabularyPolicy policy = VocabularyPolicy::kTrainOnly) {
  std::vector<std::string> closed, open;
  std::vector<std::string> excluded;
  for (const auto& s : samples) {
    if (!s.answer_type || !s.split) continue;
    if (policy == VocabularyPolicy::kTrainOnly && *s.split != Split::kTrain) continue;
    const std::string a = normalize_answer(s.answer);
    if (a.empty()) {
      excluded.push_back(s.sample_id);
      continue;
    }
    (*s.answer_type == AnswerType::kClosed ? closed : open).push_back(a);
  }
  AnswerVocabulary vocab(std::move(closed), std::move(open));
  vocab.excluded_empty = std::move(excluded);
  return vocab;
}

// ---------------------------------------------------------------------------
// Validation

enum class AnomalyKind { kUndefinedAnswer, kTypeMismatch, kMissingField, kDuplicate, kDanglingImage };

inline const char* to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::kUndefinedAnswer: return "undefined_answer";
    case AnomalyKind::kTypeMismatch: return "type_mismatch";
    case AnomalyKind::kMissingField: return "missing_field";
    case AnomalyKind::kDuplicate: return "duplicate";
    case AnomalyKind::kDanglingImage: return "dangling_image";
  }
  return "?";
}

inline constexpr AnomalyKind kAllAnomalyKinds[] = {AnomalyKind::kUndefinedAnswer, AnomalyKind::kTypeMismatch,
                                                   AnomalyKind::kMissingField, AnomalyKind::kDuplicate,
                                                   AnomalyKind::kDanglingImage};

struct Finding {
  std::string sample_id;
  AnomalyKind kind;
  std::string detail;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct ValidationReport {
  std::vector<Finding> findings;

  std::size_t count(AnomalyKind k) const {
    return static_cast<std::size_t>(
        std::count_if(findings.begin(), findings.end(), [k](const Finding& f) { return f.kind == k; }));
  }
  bool empty() const { return findings.empty(); }

  json to_json() const {
    json j;
    j["counts"] = json::object();
    for (AnomalyKind k : kAllAnomalyKinds) j["counts"][to_string(k)] = count(k);
    j["findings"] = json::array();
    for (const auto& f : findings) {
      j["findings"].push_back({{"sample_id", f.sample_id}, {"kind", to_string(f.kind)}, {"detail", f.detail}});
    }
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "findings: " << findings.size() << '\n';
    for (AnomalyKind k : kAllAnomalyKinds) os << "  " << to_string(k) << ": " << count(k) << '\n';
    for (const auto& f : findings) os << f.sample_id << '\t' << to_string(f.kind) << '\t' << f.detail << '\n';
    return os.str();
  }

  friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

// A closed-ended answer is yes/no, or (for an "... or ..." question) one of
// the alternatives, i.e. a contiguous run of the question's words.
inline bool is_closed_form_answer(std::string_view question, std::string_view answer) {
  const std::string a = normalize_answer(answer);
  if (a == "yes" || a == "no") return true;
  const auto q_tokens = tokenize(question);
  const auto a_tokens = tokenize(a);
  if (a_tokens.empty()) return false;
  if (std::find(q_tokens.begin(), q_tokens.end(), "or") == q_tokens.end()) return false;
  return std::search(q_tokens.begin(), q_tokens.end(), a_tokens.begin(), a_tokens.end()) != q_tokens.end();
}

struct ValidateOptions {
  // When set, image_refs are checked for a backing file under this root.
  std::optional<std::filesystem::path> image_root;
};

// Reports anomalies, never mutates. Findings are ordered by sample, then by
// kind.
inline ValidationReport validate(const std::vector<VqaSample>& samples, const AnswerVocabulary& vocab,
                                 const ValidateOptions& opts = {}) {
  // Duplicates: same (image, question) as an earlier sample but a different answer.
  std::map<std::pair<std::string, std::string>, std::size_t> first_seen;
  std::vector<std::optional<std::size_t>> conflicts_with(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.image_ref.empty() || trim(s.question).empty()) continue;
    auto key = std::make_pair(s.image_ref, normalize_answer(s.question));
    auto [it, inserted] = first_seen.emplace(key, i);
    if (!inserted && normalize_answer(samples[it->second].answer) != normalize_answer(s.answer)) {
      conflicts_with[i] = it->second;
    }
  }

  ValidationReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string answer = normalize_answer(s.answer);
    if (s.split == Split::kTest && s.answer_type && !answer.empty() && !vocab.index(*s.answer_type, answer)) {
      report.findings.push_back({s.sample_id, AnomalyKind::kUndefinedAnswer,
                                 "answer '" + answer + "' is not a " + to_string(*s.answer_type) +
                                     " candidate answer"});
    }
    if (s.answer_type == AnswerType::kClosed && !answer.empty() && !is_closed_form_answer(s.question, answer)) {
      report.findings.push_back({s.sample_id, AnomalyKind::kTypeMismatch,
                                 "closed-ended question answered with '" + answer + "'"});
    }
    for (const auto& field : s.missing_fields) {
      report.findings.push_back({s.sample_id, AnomalyKind::kMissingField, "field '" + field + "' missing or invalid"});
    }
    if (conflicts_with[i]) {
      report.findings.push_back({s.sample_id, AnomalyKind::kDuplicate,
                                 "same image and question as '" + samples[*conflicts_with[i]].sample_id +
                                     "' with a different answer"});
    }
    if (opts.image_root && !s.image_ref.empty() && !std::filesystem::exists(*opts.image_root / s.image_ref)) {
      report.findings.push_back({s.sample_id, AnomalyKind::kDanglingImage, "no file for '" + s.image_ref + "'"});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Corrections

struct Correction {
  std::string sample_id;
  std::string field;
  std::string old_value;
  std::string new_value;
  std::string rationale;
};

struct AuditEntry {
  Correction correction;
  bool applied = false;
  std::string reason;
};

struct RepairResult {
  std::vector<VqaSample> samples;
  std::vector<AuditEntry> audit;
};

inline std::vector<Correction> parse_corrections(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corrections file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw DataError("corrections file must be a JSON array");
  std::vector<Correction> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& c = doc[i];
    auto str = [&](const char* key, bool required) -> std::string {
      if (!c.is_object() || !c.contains(key)) {
        if (required) throw DataError("correction " + std::to_string(i) + ": missing '" + key + "'");
        return {};
      }
      if (!c[key].is_string()) throw DataError("correction " + std::to_string(i) + ": '" + key + "' must be a string");
      return c[key].get<std::string>();
    };
    out.push_back({str("sample_id", true), str("field", true), str("old", true), str("new", true),
                   str("rationale", false)});
  }
  return out;
}

inline std::vector<Correction> load_corrections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corrections file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_corrections(buf.str());
}

inline json corrections_to_json(const std::vector<Correction>& cs) {
  json arr = json::array();
  for (const auto& c : cs) {
    arr.push_back({{"sample_id", c.sample_id}, {"field", c.field}, {"old", c.old_value}, {"new", c.new_value},
                   {"rationale", c.rationale}});
  }
  return arr;
}

inline json audit_to_json(const std::vector<AuditEntry>& audit) {
  json arr = json::array();
  for (const auto& e : audit) {
    arr.push_back({{"sample_id", e.correction.sample_id}, {"field", e.correction.field},
                   {"old", e.correction.old_value}, {"new", e.correction.new_value},
                   {"rationale", e.correction.rationale}, {"status", e.applied ? "applied" : "rejected"},
                   {"reason", e.reason}});
  }
  return arr;
}

// Applies corrections in order. A correction only applies when its old value
// matches the sample's current content; otherwise it is rejected and logged.
inline RepairResult repair(std::vector<VqaSample> samples, const std::vector<Correction>& corrections) {
  RepairResult result;
  for (const auto& c : corrections) {
    AuditEntry entry{c, false, {}};
    auto it = std::find_if(samples.begin(), samples.end(), [&](const VqaSample& s) { return s.sample_id == c.sample_id; });
    if (it == samples.end()) {
      entry.reason = "unknown sample_id";
      result.audit.push_back(std::move(entry));
      continue;
    }
    VqaSample& s = *it;
    std::string current;
    if (c.field == "question") current = s.question;
    else if (c.field == "answer") current = s.answer;
    else if (c.field == "image_ref") current = s.image_ref;
    else if (c.field == "answer_type") current = s.answer_type ? to_string(*s.answer_type) : "";
    else if (c.field == "split") current = s.split ? to_string(*s.split) : "";
    else {
      entry.reason = "field '" + c.field + "' cannot be corrected";
      result.audit.push_back(std::move(entry));
      continue;
    }
    if (current != c.old_value) {
      entry.reason = "stale old value: current is '" + current + "'";
      result.audit.push_back(std::move(entry));
      continue;
    }
    auto drop_missing = [&s](const std::string& field) {
      std::erase(s.missing_fields, field);
    };
    if (c.field == "question") {
      s.question = c.new_value;
    } else if (c.field == "answer") {
      s.answer = c.new_value;
    } else if (c.field == "image_ref") {
      s.image_ref = c.new_value;
    } else if (c.field == "answer_type") {
      auto t = parse_answer_type(c.new_value);
      if (!t) {
        entry.reason = "invalid answer_type '" + c.new_value + "'";
        result.audit.push_back(std::move(entry));
        continue;
      }
      s.answer_type = t;
    } else {
      auto sp = parse_split(c.new_value);
      if (!sp) {
        entry.reason = "invalid split '" + c.new_value + "'";
        result.audit.push_back(std::move(entry));
        continue;
      }
      s.split = sp;
    }
    if (!trim(c.new_value).empty()) drop_missing(c.field);
    entry.applied = true;
    result.audit.push_back(std::move(entry));
  }
  result.samples = std::move(samples);
  return result;
}

// ---------------------------------------------------------------------------
// Type-homogeneous batching

struct SampleBatch {
  AnswerType type = AnswerType::kClosed;
  std::vector<std::size_t> indices;  // into the input sample list
  std::vector<std::string> image_refs;
  std::vector<TokenSequence> tokens;
  std::vector<std::size_t> answer_indices;  // hot position of each target
  std::size_t answer_count = 0;             // target vector length

  std::size_t size() const { return indices.size(); }

  std::vector<float> target(std::size_t k) const {
    std::vector<float> t(answer_count, 0.0f);
    t.at(answer_indices.at(k)) = 1.0f;
    return t;
  }
};

struct BatchPlan {
  std::vector<SampleBatch> batches;
  std::vector<std::string> excluded;  // sample ids whose answer is outside the vocabulary
};

// Partitions samples by answer type, shuffles each partition with the seed,
// cuts it into batches, then shuffles the batch order with the same stream.
inline BatchPlan make_batches(const std::vector<VqaSample>& samples, const AnswerVocabulary& vocab,
                              const WordVocabulary& words, std::size_t n, std::size_t batch_size,
                              std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  BatchPlan plan;
  std::vector<std::size_t> by_type[2];
  std::vector<std::size_t> answer_of(samples.size(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.answer_type) {
      plan.excluded.push_back(s.sample_id);
      continue;
    }
    auto idx = vocab.index(*s.answer_type, s.answer);
    if (!idx) {
      plan.excluded.push_back(s.sample_id);
      continue;
    }
    answer_of[i] = *idx;
    by_type[*s.answer_type == AnswerType::kClosed ? 0 : 1].push_back(i);
  }
  Rng rng(seed);
  for (int t = 0; t < 2; ++t) {
    const AnswerType type = t == 0 ? AnswerType::kClosed : AnswerType::kOpen;
    auto& members = by_type[t];
    rng.shuffle(members);
    for (std::size_t start = 0; start < members.size(); start += batch_size) {
      SampleBatch b;
      b.type = type;
      b.answer_count = vocab.size(type);
      for (std::size_t k = start; k < std::min(start + batch_size, members.size()); ++k) {
        const std::size_t i = members[k];
        b.indices.push_back(i);
        b.image_refs.push_back(samples[i].image_ref);
        b.tokens.push_back(tokenize_and_pad(samples[i].question, words, n));
        b.answer_indices.push_back(answer_of[i]);
      }
      plan.batches.push_back(std::move(b));
    }
  }
  rng.shuffle(plan.batches);
  return plan;
}

}  // namespace muvam

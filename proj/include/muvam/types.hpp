#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace muvam {

enum class AnswerType { kClosed, kOpen };
enum class Split { kTrain, kTest };

inline const char* to_string(AnswerType t) { return t == AnswerType::kClosed ? "closed" : "open"; }
inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline std::optional<AnswerType> parse_answer_type(std::string_view s) {
  if (s == "closed") return AnswerType::kClosed;
  if (s == "open") return AnswerType::kOpen;
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

}  // namespace muvam

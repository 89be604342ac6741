#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "vgdz/error.hpp"

namespace vgdz {

enum class ExpressionMode { Full, Core };

constexpr std::string_view to_string(ExpressionMode m) noexcept {
  return m == ExpressionMode::Full ? "full" : "core";
}

inline ExpressionMode parse_expression_mode(std::string_view s) {
  if (s == "full") return ExpressionMode::Full;
  if (s == "core") return ExpressionMode::Core;
  throw Error(Errc::InvalidConfig, "unknown expression mode '" + std::string(s) + "' (expected full, core)");
}

/// Byte range [begin, end) inside a normalized expression.
struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

struct ReferringExpression {
  std::string raw;
  ExpressionMode mode = ExpressionMode::Full;
  std::string processed;
  std::optional<TextSpan> chunk;
  bool fallback = false;
};

/// Trim and collapse internal whitespace runs to one space. Case is kept.
inline std::string normalize_whitespace(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

/// Finds the core noun phrase of a normalized expression.
class NounPhraseExtractor {
 public:
  virtual ~NounPhraseExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::optional<TextSpan> extract(std::string_view normalized) const = 0;
};

/// Lexicon-driven chunker. Splits the expression at prepositions,
/// conjunctions, relative pronouns and verbs; a chunk is a run of remaining
/// words that contains at least one non-determiner. Without a dependency
/// parse the root-bearing chunk is taken to be the first one.
class RuleBasedExtractor final : public NounPhraseExtractor {
 public:
  std::string name() const override { return "rule-based-np/1"; }

  std::optional<TextSpan> extract(std::string_view text) const override {
    const auto tokens = tokenize(text);
    std::size_t i = 0;
    while (i < tokens.size()) {
      // Skip anything that cannot open a chunk.
      if (is_breaker(tokens, i) && !(is_gerund(tokens[i].lower) && next_is_nominal(tokens, i))) {
        ++i;
        continue;
      }
      const std::size_t start = i;
      bool has_head = false;
      while (i < tokens.size()) {
        const auto& tok = tokens[i];
        if (i > start && is_determiner(tok.lower)) break;
        if (is_breaker(tokens, i) && !(is_gerund(tok.lower) && !has_head && next_is_nominal(tokens, i))) break;
        if (!is_determiner(tok.lower)) has_head = true;
        ++i;
        if (tok.ends_clause) break;
      }
      if (has_head) return TextSpan{tokens[start].begin, tokens[i - 1].end};
    }
    return std::nullopt;
  }

 private:
  struct Token {
    std::size_t begin;
    std::size_t end;  // excludes trailing punctuation
    std::string lower;
    bool ends_clause;
  };

  static std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      while (pos < text.size() && text[pos] == ' ') ++pos;
      if (pos >= text.size()) break;
      std::size_t end = text.find(' ', pos);
      if (end == std::string_view::npos) end = text.size();
      std::size_t word_end = end;
      while (word_end > pos && std::ispunct(static_cast<unsigned char>(text[word_end - 1]))) --word_end;
      Token t{pos, word_end, {}, word_end != end};
      for (std::size_t k = pos; k < word_end; ++k) t.lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[k]))));
      if (!t.lower.empty()) out.push_back(std::move(t));
      pos = end;
    }
    return out;
  }

  static bool in(const std::unordered_set<std::string_view>& set, const std::string& w) {
    return set.count(w) != 0;
  }

  static bool is_determiner(const std::string& w) {
    static const std::unordered_set<std::string_view> kDet{
        "a", "an", "the", "this", "these", "those", "my", "his", "her", "its", "their", "our", "your",
        "some", "any", "each", "every", "another", "both", "all"};
    return in(kDet, w);
  }

  static bool is_gerund(const std::string& w) {
    static const std::unordered_set<std::string_view> kNounsInIng{
        "building", "ceiling", "clothing", "painting", "king", "ring", "thing", "something", "nothing",
        "anything", "wing", "string", "pudding", "icing", "frosting", "topping", "stuffing", "wedding",
        "evening", "morning", "sibling", "duckling", "railing", "awning", "lightning", "swing", "spring",
        "sing", "bing", "ping", "sling", "filling", "seating", "bedding", "dumpling", "earring",
        "lining", "siding", "landing", "parking", "crossing", "opening", "dressing", "stocking", "clearing"};
    return w.size() > 4 && w.ends_with("ing") && !in(kNounsInIng, w);
  }

  static bool is_breaker(const std::vector<Token>& tokens, std::size_t i) {
    static const std::unordered_set<std::string_view> kBreak{
        // prepositions
        "in", "on", "at", "under", "over", "with", "without", "by", "near", "behind", "beside", "besides",
        "next", "to", "of", "from", "for", "into", "onto", "above", "below", "between", "around", "across",
        "along", "against", "inside", "outside", "toward", "towards", "through", "beneath", "underneath",
        "among", "past", "like", "than", "about", "atop", "upon", "within", "beyond", "after", "before",
        "closest", "nearest",
        // conjunctions and relative pronouns
        "and", "or", "but", "who", "whom", "whose", "which", "that", "where", "while", "whilst", "as",
        // auxiliaries and common finite verbs
        "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "does", "do", "did",
        "can", "could", "will", "would", "should", "may", "might", "holds", "sits", "stands", "looks",
        "wears", "eats", "faces", "walks", "seems", "appears"};
    const auto& w = tokens[i].lower;
    return in(kBreak, w) || is_gerund(w);
  }

  static bool next_is_nominal(const std::vector<Token>& tokens, std::size_t i) {
    return i + 1 < tokens.size() && !tokens[i].ends_clause && !is_breaker(tokens, i + 1) &&
           !is_determiner(tokens[i + 1].lower);
  }
};

inline const NounPhraseExtractor& default_extractor() {
  static const RuleBasedExtractor extractor;
  return extractor;
}

/// FULL: whitespace-normalized text. CORE: the extracted noun phrase, or the
/// full text with `fallback` set when no phrase is found.
inline ReferringExpression process_expression(std::string_view raw, ExpressionMode mode,
                                              const NounPhraseExtractor& extractor = default_extractor()) {
  ReferringExpression e;
  e.raw = std::string(raw);
  e.mode = mode;
  const std::string normalized = normalize_whitespace(raw);
  if (normalized.empty()) throw Error(Errc::EmptyExpression, "referring expression is empty");

  if (mode == ExpressionMode::Full) {
    e.processed = normalized;
    return e;
  }
  const auto span = extractor.extract(normalized);
  if (!span || span->begin >= span->end || span->end > normalized.size()) {
    e.processed = normalized;
    e.fallback = true;
    return e;
  }
  e.chunk = span;
  e.processed = normalized.substr(span->begin, span->end - span->begin);
  return e;
}

}  // namespace vgdz

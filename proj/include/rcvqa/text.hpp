#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "rcvqa/error.hpp"

namespace rcvqa {

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

inline bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '?': case '!': case ';': case ':': case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Lowercased tokens split on whitespace; . , ? ! ; : " ( ) become tokens of
// their own. Apostrophes stay inside words ("man's").
inline std::vector<Token> tokenize_with_offsets(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (is_split_punct(text[i])) {
      tokens.push_back({std::string(1, text[i]), i, i + 1});
      ++i;
      continue;
    }
    const std::size_t start = i;
    std::string word;
    while (i < text.size() && !is_space(text[i]) && !is_split_punct(text[i])) word += ascii_lower(text[i++]);
    tokens.push_back({std::move(word), start, i});
  }
  return tokens;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.text));
  return out;
}

namespace detail {

inline bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

// Strip one trailing "s" from words longer than three characters unless
// they end in "ss". A strip that would produce an article is skipped so
// the whole normalization stays idempotent ("thes" is kept).
inline std::string depluralize(std::string w) {
  if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') {
    std::string stem = w.substr(0, w.size() - 1);
    if (!is_article(stem)) return stem;
  }
  return w;
}

}  // namespace detail

// Answer normalization, rules applied in order:
//   R1 lowercase, R2 strip punctuation, R3 drop articles a/an/the,
//   R4 collapse whitespace, R5 naive de-pluralization per token.
inline std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    const char lc = ascii_lower(c);
    if (std::ispunct(static_cast<unsigned char>(lc))) continue;
    cleaned += lc;
  }
  std::string out;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && is_space(cleaned[i])) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !is_space(cleaned[j])) ++j;
    if (j > i) {
      std::string word = cleaned.substr(i, j - i);
      if (!detail::is_article(word)) {
        if (!out.empty()) out += ' ';
        out += detail::depluralize(std::move(word));
      }
    }
    i = j;
  }
  return out;
}

struct AssembledContext {
  std::string text;
  std::vector<std::size_t> sentence_starts;  // byte offset of each retained sentence
  std::size_t num_tokens = 0;
};

// Sentences (descriptions first, then facts) joined with single spaces; a
// sentence without a terminal "." gets " ." appended. The result is cut
// after the first `limit` tokens.
inline AssembledContext assemble_context(const std::vector<std::string>& descriptions,
                                         const std::vector<std::string>& facts, std::size_t limit) {
  if (limit == 0) throw ConfigError("context token limit must be at least 1");
  AssembledContext ctx;
  auto append = [&](const std::string& raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && is_space(raw[b])) ++b;
    while (e > b && is_space(raw[e - 1])) --e;
    if (b == e) return;
    if (!ctx.text.empty()) ctx.text += ' ';
    ctx.sentence_starts.push_back(ctx.text.size());
    ctx.text.append(raw, b, e - b);
    if (raw[e - 1] != '.') ctx.text += " .";
  };
  for (const auto& s : descriptions) append(s);
  for (const auto& s : facts) append(s);
  if (ctx.text.empty()) throw EmptyContextError("no description or fact sentences to build a context from");

  const auto tokens = tokenize_with_offsets(ctx.text);
  if (tokens.size() > limit) {
    const std::size_t cut = tokens[limit - 1].end;
    ctx.text.resize(cut);
    while (!ctx.sentence_starts.empty() && ctx.sentence_starts.back() >= cut) ctx.sentence_starts.pop_back();
    ctx.num_tokens = limit;
  } else {
    ctx.num_tokens = tokens.size();
  }
  return ctx;
}

// Index of the sentence containing byte offset `pos`.
inline std::size_t sentence_of(const AssembledContext& ctx, std::size_t pos) {
  std::size_t idx = 0;
  for (std::size_t s = 0; s < ctx.sentence_starts.size(); ++s)
    if (ctx.sentence_starts[s] <= pos) idx = s;
  return idx;
}

// Text of sentence `idx` within the assembled context.
inline std::string sentence_text(const AssembledContext& ctx, std::size_t idx) {
  if (idx >= ctx.sentence_starts.size()) throw IndexError("sentence index out of range");
  const std::size_t b = ctx.sentence_starts[idx];
  const std::size_t e = idx + 1 < ctx.sentence_starts.size() ? ctx.sentence_starts[idx + 1] - 1 : ctx.text.size();
  return ctx.text.substr(b, e - b);
}

// Splits a UTF-8 string into code points, each kept as its byte sequence.
// A malformed byte becomes U+FFFD so every piece stays valid UTF-8.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if (c >= 0xC2 && c <= 0xDF) len = 2;
    else if (c >= 0xE0 && c <= 0xEF) len = 3;
    else if (c >= 0xF0 && c <= 0xF4) len = 4;
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) ok = (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    if (ok) {
      out.emplace_back(s.substr(i, len));
      i += len;
    } else {
      out.emplace_back(kReplacement);
      ++i;
    }
  }
  return out;
}

}  // namespace rcvqa

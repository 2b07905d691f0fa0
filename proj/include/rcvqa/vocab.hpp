#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/dataset.hpp"
#include "rcvqa/error.hpp"
#include "rcvqa/tensor.hpp"
#include "rcvqa/text.hpp"

namespace rcvqa {

// Word and character symbol tables. Ids are dense; 0 is padding and 1 the
// unknown symbol in both tables.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() {
    for (auto* table : {&words_, &chars_}) {
      table->push_back(std::string(kPadToken));
      table->push_back(std::string(kUnkToken));
    }
    rebuild_index();
  }

  Vocabulary(std::vector<std::string> words, std::vector<std::string> chars)
      : words_(std::move(words)), chars_(std::move(chars)) {
    for (const auto* table : {&words_, &chars_}) {
      if (table->size() < 2 || (*table)[kPad] != kPadToken || (*table)[kUnk] != kUnkToken) {
        throw DataError("vocabulary tables must start with <pad>, <unk>");
      }
    }
    rebuild_index();
  }

  std::size_t word_id(std::string_view w) const {
    auto it = word_index_.find(std::string(w));
    return it == word_index_.end() ? kUnk : it->second;
  }

  std::size_t char_id(std::string_view c) const {
    auto it = char_index_.find(std::string(c));
    return it == char_index_.end() ? kUnk : it->second;
  }

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& chars() const { return chars_; }
  std::size_t num_words() const { return words_.size(); }
  std::size_t num_chars() const { return chars_.size(); }

  std::size_t frequency(std::string_view w) const {
    auto it = freq_.find(std::string(w));
    return it == freq_.end() ? 0 : it->second;
  }
  void set_frequencies(std::map<std::string, std::size_t> f) { freq_ = std::move(f); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["words"] = words_;
    j["chars"] = chars_;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& w : words_)
      if (auto it = freq_.find(w); it != freq_.end()) counts[w] = it->second;
    j["word_counts"] = counts;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.contains("words") || !j.contains("chars")) throw ParseError("vocabulary JSON needs words and chars");
    Vocabulary v(j["words"].get<std::vector<std::string>>(), j["chars"].get<std::vector<std::string>>());
    if (j.contains("word_counts")) v.freq_ = j["word_counts"].get<std::map<std::string, std::size_t>>();
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json().dump(1) << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_ && chars_ == o.chars_; }

 private:
  void rebuild_index() {
    word_index_.clear();
    char_index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (!word_index_.emplace(words_[i], i).second) throw DataError("duplicate word in vocabulary: " + words_[i]);
    for (std::size_t i = 0; i < chars_.size(); ++i)
      if (!char_index_.emplace(chars_[i], i).second) throw DataError("duplicate char in vocabulary: " + chars_[i]);
  }

  std::vector<std::string> words_;
  std::vector<std::string> chars_;
  std::unordered_map<std::string, std::size_t> word_index_;
  std::unordered_map<std::string, std::size_t> char_index_;
  std::map<std::string, std::size_t> freq_;
};

namespace detail {

// Most frequent first, ties lexicographic.
inline std::vector<std::pair<std::string, std::size_t>> rank_by_frequency(
    const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

}  // namespace detail

// Every string an example contributes to the vocabulary.
inline std::vector<std::string> example_texts(const QAExample& ex) {
  std::vector<std::string> texts = ex.description_sentences;
  texts.insert(texts.end(), ex.facts.begin(), ex.facts.end());
  texts.push_back(ex.question);
  texts.insert(texts.end(), ex.answers.begin(), ex.answers.end());
  if (ex.choices) texts.insert(texts.end(), ex.choices->begin(), ex.choices->end());
  return texts;
}

// Words seen at least min_freq times, most frequent first, at most
// max_words of them (0 = no cap). Every character seen is kept.
inline Vocabulary build_vocab(const std::vector<QAExample>& corpus, std::size_t min_freq = 1,
                              std::size_t max_words = 0) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> word_counts, char_counts;
  for (const auto& ex : corpus) {
    for (const auto& text : example_texts(ex)) {
      for (const auto& tok : tokenize(text)) {
        ++word_counts[tok];
        for (const auto& ch : utf8_chars(tok)) ++char_counts[ch];
      }
    }
  }
  std::vector<std::string> words{std::string(Vocabulary::kPadToken), std::string(Vocabulary::kUnkToken)};
  std::vector<std::string> chars = words;
  for (const auto& [w, c] : detail::rank_by_frequency(word_counts)) {
    if (c < min_freq) break;
    if (max_words && words.size() - 2 >= max_words) break;
    if (w == Vocabulary::kPadToken || w == Vocabulary::kUnkToken) continue;
    words.push_back(w);
  }
  for (const auto& [ch, c] : detail::rank_by_frequency(char_counts)) chars.push_back(ch);
  Vocabulary v(std::move(words), std::move(chars));
  v.set_frequencies(std::move(word_counts));
  return v;
}

// Location of one token inside the text it came from.
struct SourceSpan {
  std::size_t sentence = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Word ids, a width-padded character id matrix and a validity mask for a
// token sequence. Padding positions carry PAD ids and mask 0.
struct TokenizedText {
  std::vector<std::size_t> words;
  std::vector<std::size_t> chars;  // length() x max_word_len, row-major
  std::size_t max_word_len = 0;
  std::vector<std::uint8_t> valid;
  std::vector<SourceSpan> spans;

  std::size_t length() const { return words.size(); }
  std::size_t num_valid() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }
  Mask mask() const { return Mask({words.size()}, valid); }

  void pad_to(std::size_t n) {
    if (n < words.size()) throw DimensionError("pad_to shorter than sequence");
    words.resize(n, Vocabulary::kPad);
    chars.resize(n * max_word_len, Vocabulary::kPad);
    valid.resize(n, 0);
    spans.resize(n);
  }
};

inline TokenizedText encode_tokens(const std::vector<Token>& tokens, const Vocabulary& vocab,
                                   std::size_t max_word_len) {
  if (max_word_len == 0) throw ConfigError("max_word_len must be at least 1");
  TokenizedText out;
  out.max_word_len = max_word_len;
  out.chars.assign(tokens.size() * max_word_len, Vocabulary::kPad);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.words.push_back(vocab.word_id(tokens[i].text));
    const auto cs = utf8_chars(tokens[i].text);
    for (std::size_t c = 0; c < cs.size() && c < max_word_len; ++c) out.chars[i * max_word_len + c] = vocab.char_id(cs[c]);
    out.valid.push_back(1);
    out.spans.push_back({0, tokens[i].begin, tokens[i].end});
  }
  return out;
}

inline TokenizedText encode_text(std::string_view text, const Vocabulary& vocab, std::size_t max_word_len,
                                 std::size_t limit = 0) {
  auto tokens = tokenize_with_offsets(text);
  if (limit && tokens.size() > limit) tokens.resize(limit);
  return encode_tokens(tokens, vocab, max_word_len);
}

// Tokenized assembled context with each token tagged by its sentence.
inline TokenizedText encode_context(const AssembledContext& ctx, const Vocabulary& vocab, std::size_t max_word_len) {
  TokenizedText out = encode_text(ctx.text, vocab, max_word_len);
  for (auto& s : out.spans) s.sentence = sentence_of(ctx, s.begin);
  return out;
}

// Frequent normalized answers mapped to class ids 0..K-1.
class AnswerClasses {
 public:
  AnswerClasses() = default;
  explicit AnswerClasses(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) index_.emplace(labels_[i], i);
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t id) const { return labels_.at(id); }

  // Class id of a raw answer string, or -1 when it is outside the map.
  std::ptrdiff_t find(std::string_view answer) const {
    auto it = index_.find(normalize_answer(answer));
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AnswerClassMap {
  AnswerClasses classes;
  std::vector<std::ptrdiff_t> target;  // per example: class id, or -1 if excluded from training
  std::size_t excluded = 0;
};

// The gold answer of an example is its first listed answer.
inline AnswerClassMap build_answer_classes(const std::vector<QAExample>& train, std::size_t k) {
  if (k == 0) throw ConfigError("number of answer classes must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : train)
    if (!ex.answers.empty()) ++counts[normalize_answer(ex.answers.front())];
  std::vector<std::string> labels;
  for (const auto& [a, c] : detail::rank_by_frequency(counts)) {
    if (labels.size() >= k) break;
    labels.push_back(a);
  }
  AnswerClassMap out{AnswerClasses(std::move(labels)), {}, 0};
  for (const auto& ex : train) {
    const std::ptrdiff_t id = ex.answers.empty() ? -1 : out.classes.find(ex.answers.front());
    out.target.push_back(id);
    if (id < 0) ++out.excluded;
  }
  return out;
}

}  // namespace rcvqa

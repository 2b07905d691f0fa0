#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rcvqa/dataset.hpp"
#include "rcvqa/model.hpp"
#include "rcvqa/retrieval.hpp"
#include "rcvqa/vocab.hpp"

namespace rcvqa {

// An example turned into model inputs and training targets.
struct PreparedExample {
  QAExample source;
  AssembledContext context_text;
  TokenizedText context;
  TokenizedText question;
  std::optional<std::pair<std::size_t, std::size_t>> gold_span;  // span mode
  std::ptrdiff_t gold_class = -1;                                 // open-ended mode
  std::vector<TokenizedText> choices;                             // multiple-choice mode

  // Whether the example contributes a training target in `mode`.
  bool trainable(Mode mode) const {
    switch (mode) {
      case Mode::Span: return gold_span.has_value();
      case Mode::OpenEnded: return gold_class >= 0;
      case Mode::MultipleChoice: return source.correct_index.has_value();
    }
    return false;
  }
};

// First occurrence of any gold answer's token sequence in the context.
inline std::optional<std::pair<std::size_t, std::size_t>> locate_answer(const std::string& context,
                                                                         const std::vector<std::string>& answers) {
  const auto ctx = tokenize(context);
  for (const auto& answer : answers) {
    const auto ans = tokenize(answer);
    if (ans.empty() || ans.size() > ctx.size()) continue;
    for (std::size_t i = 0; i + ans.size() <= ctx.size(); ++i) {
      if (std::equal(ans.begin(), ans.end(), ctx.begin() + static_cast<std::ptrdiff_t>(i))) {
        return std::make_pair(i, i + ans.size() - 1);
      }
    }
  }
  return std::nullopt;
}

inline PreparedExample prepare_example(const QAExample& ex, const Vocabulary& vocab, const ModelConfig& config,
                                       const AnswerClasses* classes = nullptr) {
  PreparedExample p;
  p.source = ex;
  p.context_text = assemble_context(ex, config.context_limit);
  p.context = encode_context(p.context_text, vocab, config.max_word_len);
  p.question = encode_text(ex.question, vocab, config.max_word_len, config.question_limit);
  if (p.question.length() == 0) throw DataError("example " + ex.id + " has an empty question");
  switch (config.mode) {
    case Mode::Span:
      p.gold_span = locate_answer(p.context_text.text, ex.answers);
      break;
    case Mode::OpenEnded:
      if (!classes) throw ConfigError("open-ended preparation needs an answer class map");
      p.gold_class = ex.answers.empty() ? -1 : classes->find(ex.answers.front());
      break;
    case Mode::MultipleChoice:
      if (!ex.choices) throw DataError("example " + ex.id + " has no answer choices for multiple-choice mode");
      for (const auto& c : *ex.choices) {
        p.choices.push_back(encode_text(c, vocab, config.max_word_len, config.question_limit));
        if (p.choices.back().length() == 0) throw DataError("example " + ex.id + " has an empty answer choice");
      }
      break;
  }
  return p;
}

inline std::vector<PreparedExample> prepare_examples(const std::vector<QAExample>& examples, const Vocabulary& vocab,
                                                     const ModelConfig& config, const AnswerClasses* classes = nullptr) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(prepare_example(ex, vocab, config, classes));
  return out;
}

// Fills in supporting facts for examples that carry none, from the top-k
// retrieved facts for their question and visual concepts.
inline std::size_t attach_retrieved_facts(std::vector<QAExample>& examples, const FactIndex& index, std::size_t k) {
  std::size_t attached = 0;
  for (auto& ex : examples) {
    if (!ex.facts.empty()) continue;
    ex.facts = fact_sentences(retrieve_top_k(index, ex.question, ex.visual_concepts, k));
    if (!ex.facts.empty()) ++attached;
  }
  return attached;
}

// Pads every sequence to the longest one in the group.
inline void pad_group(std::vector<TokenizedText*>& group) {
  std::size_t n = 0;
  for (auto* t : group) n = std::max(n, t->length());
  for (auto* t : group) t->pad_to(n);
}

}  // namespace rcvqa

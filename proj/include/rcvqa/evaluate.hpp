#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/checkpoint.hpp"
#include "rcvqa/heads.hpp"
#include "rcvqa/model.hpp"
#include "rcvqa/pipeline.hpp"

namespace rcvqa {

struct QTypeStats {
  std::size_t count = 0;
  std::size_t correct = 0;
  double top1() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

struct EvalReport {
  Mode mode = Mode::OpenEnded;
  std::size_t num_examples = 0;
  std::size_t correct_top1 = 0;
  std::size_t correct_top3 = 0;
  double top1 = 0.0;
  double top3 = 0.0;  // equals top1 in multiple-choice mode
  std::map<QType, QTypeStats> per_qtype;  // only non-empty buckets

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mode"] = std::string(mode_name(mode));
    j["num_examples"] = num_examples;
    j["top1"] = top1;
    if (mode != Mode::MultipleChoice) j["top3"] = top3;
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [t, s] : per_qtype) per[std::string(qtype_name(t))] = {{"top1", s.top1()}, {"count", s.count}};
    j["per_qtype"] = per;
    return j;
  }

  // Per-type table in the 6W order with overall rows; empty types omitted.
  std::string table() const {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-10s %8s %8s\n", "qtype", "count", "top1");
    os << buf;
    for (QType t : kAllQTypes) {
      auto it = per_qtype.find(t);
      if (it == per_qtype.end()) continue;
      std::snprintf(buf, sizeof buf, "%-10s %8zu %8.4f\n", std::string(qtype_name(t)).c_str(), it->second.count,
                    it->second.top1());
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-10s %8zu %8.4f\n", "overall", num_examples, top1);
    os << buf;
    if (mode != Mode::MultipleChoice) {
      std::snprintf(buf, sizeof buf, "%-10s %8zu %8.4f\n", "top3", num_examples, top3);
      os << buf;
    }
    return os.str();
  }
};

struct ExampleOutcome {
  QType qtype = QType::Other;
  bool top1 = false;
  bool top3 = false;
};

inline EvalReport tally(Mode mode, const std::vector<ExampleOutcome>& outcomes) {
  EvalReport r;
  r.mode = mode;
  r.num_examples = outcomes.size();
  for (const auto& o : outcomes) {
    auto& s = r.per_qtype[o.qtype];
    ++s.count;
    if (o.top1) {
      ++s.correct;
      ++r.correct_top1;
    }
    if (o.top3 || o.top1) ++r.correct_top3;
  }
  if (r.num_examples) {
    r.top1 = static_cast<double>(r.correct_top1) / static_cast<double>(r.num_examples);
    r.top3 = static_cast<double>(r.correct_top3) / static_cast<double>(r.num_examples);
  }
  return r;
}

// String match after normalization against any gold answer.
inline bool answer_matches(const std::string& predicted, const std::vector<std::string>& golds) {
  const std::string p = normalize_answer(predicted);
  return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

// Scores ranked answer strings (best first) for open-ended or span output.
inline EvalReport score_ranked(Mode mode, const std::vector<QAExample>& examples,
                               const std::vector<std::vector<std::string>>& ranked) {
  if (examples.size() != ranked.size()) throw DimensionError("one ranked prediction list is needed per example");
  std::vector<ExampleOutcome> outcomes;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ExampleOutcome o{examples[i].qtype, false, false};
    for (std::size_t r = 0; r < ranked[i].size() && r < 3; ++r) {
      if (answer_matches(ranked[i][r], examples[i].answers)) {
        o.top1 = o.top1 || r == 0;
        o.top3 = true;
      }
    }
    outcomes.push_back(o);
  }
  return tally(mode, outcomes);
}

// Scores chosen answer indices for multiple-choice output.
inline EvalReport score_choices(const std::vector<QAExample>& examples, const std::vector<std::size_t>& chosen) {
  if (examples.size() != chosen.size()) throw DimensionError("one chosen index is needed per example");
  std::vector<ExampleOutcome> outcomes;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].correct_index) throw DataError("example " + examples[i].id + " has no correct choice index");
    const bool ok = chosen[i] == *examples[i].correct_index;
    outcomes.push_back({examples[i].qtype, ok, ok});
  }
  return tally(Mode::MultipleChoice, outcomes);
}

// Lowest index among equal maxima.
inline std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct RankedClass {
  std::string label;
  double probability = 0.0;
};

template <class T>
std::vector<RankedClass> predict_open_ended(const ReadingModel<T>& model, const PreparedExample& ex,
                                            const AnswerClasses& classes, std::size_t top = 3) {
  auto out = model.classify_forward(ex.context, ex.question);
  const auto p = out.p.data();
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::vector<RankedClass> ranked;
  for (std::size_t i = 0; i < order.size() && i < top; ++i)
    ranked.push_back({classes.label(order[i]), static_cast<double>(p[order[i]])});
  return ranked;
}

template <class T>
std::vector<ChoiceScore> predict_choices(const ReadingModel<T>& model, const PreparedExample& ex) {
  Rng unused(0);
  std::vector<ChoiceScore> out;
  for (const auto& e : model.choice_logits(ex.context, ex.question, ex.choices, false, unused))
    out.push_back(choice_score(static_cast<double>(e.item())));
  return out;
}

struct SpanAnswer {
  SpanPrediction span;
  std::string text;              // contiguous substring of the context
  std::string source_sentence;   // sentence holding the span start
};

template <class T>
SpanAnswer predict_span(const ReadingModel<T>& model, const PreparedExample& ex) {
  auto out = model.span_forward(ex.context, ex.question);
  SpanAnswer a;
  a.span = decode_span(out, model.config().max_span);
  const auto& spans = ex.context.spans;
  a.text = ex.context_text.text.substr(spans[a.span.start].begin, spans[a.span.end].end - spans[a.span.start].begin);
  a.source_sentence = sentence_text(ex.context_text, spans[a.span.start].sentence);
  return a;
}

template <class T>
EvalReport evaluate(const ReadingModel<T>& model, const std::vector<PreparedExample>& data, Mode mode,
                    const AnswerClasses* classes = nullptr) {
  if (model.config().mode != mode) {
    throw ConfigError("model mode " + std::string(mode_name(model.config().mode)) + " does not match evaluation mode " +
                      std::string(mode_name(mode)));
  }
  std::vector<QAExample> sources;
  for (const auto& ex : data) sources.push_back(ex.source);
  switch (mode) {
    case Mode::MultipleChoice: {
      std::vector<std::size_t> chosen;
      for (const auto& ex : data) {
        if (ex.choices.size() != 4) throw DataError("example " + ex.source.id + " lacks four answer choices");
        std::vector<double> probs;
        for (const auto& c : predict_choices(model, ex)) probs.push_back(c.probability);
        chosen.push_back(argmax_first(probs));
      }
      return score_choices(sources, chosen);
    }
    case Mode::OpenEnded: {
      if (!classes) throw ConfigError("open-ended evaluation needs the answer class map");
      std::vector<std::vector<std::string>> ranked;
      for (const auto& ex : data) {
        std::vector<std::string> labels;
        for (const auto& r : predict_open_ended(model, ex, *classes)) labels.push_back(r.label);
        ranked.push_back(std::move(labels));
      }
      return score_ranked(mode, sources, ranked);
    }
    case Mode::Span: {
      std::vector<std::vector<std::string>> ranked;
      for (const auto& ex : data) ranked.push_back({predict_span(model, ex).text});
      return score_ranked(mode, sources, ranked);
    }
  }
  return {};
}

}  // namespace rcvqa

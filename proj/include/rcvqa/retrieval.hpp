#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rcvqa/dataset.hpp"
#include "rcvqa/error.hpp"
#include "rcvqa/text.hpp"

namespace rcvqa {

inline bool is_retrieval_stopword(std::string_view w) {
  return w == "a" || w == "an" || w == "the" || w == "is" || w == "of" || w == "to";
}

// Normalized content tokens of a text: each token goes through the answer
// normalization rules, then empties and stopwords are dropped.
inline std::set<std::string> content_tokens(std::string_view text) {
  std::set<std::string> out;
  for (const auto& tok : tokenize(text)) {
    if (is_retrieval_stopword(tok)) continue;
    std::string norm = normalize_answer(tok);
    if (norm.empty() || is_retrieval_stopword(norm)) continue;
    out.insert(std::move(norm));
  }
  return out;
}

inline std::set<std::string> fact_tokens(const Fact& f) {
  std::set<std::string> out;
  for (const auto* field : {&f.subject, &f.relation, &f.object, &f.sentence}) {
    auto t = content_tokens(*field);
    out.insert(t.begin(), t.end());
  }
  return out;
}

class FactIndex {
 public:
  const std::vector<Fact>& facts() const { return facts_; }
  const Fact& fact(std::size_t id) const { return facts_.at(id); }
  std::size_t size() const { return facts_.size(); }
  const std::set<std::string>& tokens_of(std::size_t id) const { return tokens_.at(id); }

  const std::vector<std::size_t>& postings(const std::string& token) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = postings_.find(token);
    return it == postings_.end() ? kEmpty : it->second;
  }

  friend FactIndex index_facts(std::vector<Fact> facts);

 private:
  std::vector<Fact> facts_;
  std::vector<std::set<std::string>> tokens_;
  std::map<std::string, std::vector<std::size_t>> postings_;
};

// Inverted index from content token to fact ids. Duplicate facts keep
// separate ids.
inline FactIndex index_facts(std::vector<Fact> facts) {
  if (facts.empty()) throw DataError("cannot index an empty fact list");
  FactIndex index;
  for (std::size_t id = 0; id < facts.size(); ++id) {
    const Fact& f = facts[id];
    if (f.subject.empty() || f.object.empty() || f.sentence.empty()) {
      throw DataError("fact " + std::to_string(id) + " has an empty subject, object or sentence");
    }
    auto toks = fact_tokens(f);
    if (toks.empty()) throw DataError("fact " + std::to_string(id) + " has no indexable content token");
    for (const auto& t : toks) index.postings_[t].push_back(id);
    index.tokens_.push_back(std::move(toks));
  }
  index.facts_ = std::move(facts);
  return index;
}

struct ScoredFact {
  std::size_t id = 0;
  int score = 0;
  const Fact* fact = nullptr;
};

// score = |question tokens in fact| + 2 |concept tokens in fact|; zero
// scores are dropped; ranked by score, then fact id.
inline std::vector<ScoredFact> retrieve_top_k(const FactIndex& index, std::string_view question,
                                              const std::vector<std::string>& visual_concepts, std::size_t k = 3) {
  if (k == 0) throw ConfigError("retrieval k must be at least 1");
  const auto q_tokens = content_tokens(question);
  std::set<std::string> c_tokens;
  for (const auto& c : visual_concepts) {
    auto t = content_tokens(c);
    c_tokens.insert(t.begin(), t.end());
  }
  std::map<std::size_t, int> scores;
  for (const auto& t : q_tokens)
    for (std::size_t id : index.postings(t)) scores[id] += 1;
  for (const auto& t : c_tokens)
    for (std::size_t id : index.postings(t)) scores[id] += 2;

  std::vector<ScoredFact> ranked;
  for (const auto& [id, s] : scores) ranked.push_back({id, s, &index.fact(id)});
  std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredFact& a, const ScoredFact& b) { return a.score > b.score; });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

// Fact sentences in rank order as one context paragraph of at most
// `limit` tokens.
inline std::string facts_to_paragraph(const std::vector<ScoredFact>& ranked, std::size_t limit) {
  std::vector<std::string> sentences;
  for (const auto& r : ranked) sentences.push_back(r.fact->sentence);
  return assemble_context({}, sentences, limit).text;
}

inline std::vector<std::string> fact_sentences(const std::vector<ScoredFact>& ranked) {
  std::vector<std::string> out;
  for (const auto& r : ranked) out.push_back(r.fact->sentence);
  return out;
}

}  // namespace rcvqa

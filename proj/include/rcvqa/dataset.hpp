#pragma once

#include <array>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/error.hpp"
#include "rcvqa/text.hpp"

namespace rcvqa {

using json = nlohmann::json;

enum class QType { What, Where, When, Who, Why, How, Other };

inline constexpr std::array<QType, 7> kAllQTypes = {QType::What, QType::Where, QType::When, QType::Who,
                                                    QType::Why,  QType::How,   QType::Other};

inline std::string_view qtype_name(QType t) {
  switch (t) {
    case QType::What: return "what";
    case QType::Where: return "where";
    case QType::When: return "when";
    case QType::Who: return "who";
    case QType::Why: return "why";
    case QType::How: return "how";
    case QType::Other: return "other";
  }
  return "other";
}

inline std::optional<QType> parse_qtype(std::string_view s) {
  for (QType t : kAllQTypes)
    if (qtype_name(t) == s) return t;
  return std::nullopt;
}

// One knowledge triple with its sentence rendering.
struct Fact {
  std::string subject;
  std::string relation;
  std::string object;
  std::string sentence;
};

struct QAExample {
  std::string id;
  std::vector<std::string> description_sentences;
  std::vector<std::string> facts;  // fact sentences
  std::string question;
  std::vector<std::string> answers;
  QType qtype = QType::Other;
  std::optional<std::vector<std::string>> choices;  // exactly 4 when present
  std::optional<std::size_t> correct_index;
  std::vector<std::string> visual_concepts;  // retrieval hints, may be empty

  bool has_choices() const { return choices.has_value(); }
};

namespace detail {

inline std::vector<std::string> string_array(const json& j, const char* field, std::size_t line) {
  if (!j.is_array()) {
    throw ParseError("line " + std::to_string(line) + ": field \"" + field + "\" must be an array");
  }
  std::vector<std::string> out;
  for (const auto& item : j) {
    if (item.is_string()) {
      out.push_back(item.get<std::string>());
    } else if (item.is_object() && item.contains("sentence") && item["sentence"].is_string()) {
      out.push_back(item["sentence"].get<std::string>());
    } else {
      throw ParseError("line " + std::to_string(line) + ": field \"" + field + "\" must hold strings");
    }
  }
  return out;
}

}  // namespace detail

// Validates one parsed record; `line` is 1-based and used in messages.
inline QAExample example_from_json(const json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!j.is_object()) throw ParseError(where + "record is not a JSON object");
  auto require_string = [&](const char* field) {
    if (!j.contains(field)) throw ParseError(where + "missing field \"" + field + "\"");
    if (!j[field].is_string()) throw ParseError(where + "field \"" + field + "\" must be a string");
    return j[field].get<std::string>();
  };
  QAExample ex;
  ex.id = require_string("id");
  ex.question = require_string("question");
  const std::string qtype = require_string("qtype");
  auto parsed = parse_qtype(qtype);
  if (!parsed) throw ParseError(where + "unknown qtype \"" + qtype + "\"");
  ex.qtype = *parsed;
  if (!j.contains("answers")) throw ParseError(where + "missing field \"answers\"");
  ex.answers = detail::string_array(j["answers"], "answers", line);
  if (j.contains("description_sentences"))
    ex.description_sentences = detail::string_array(j["description_sentences"], "description_sentences", line);
  if (j.contains("facts")) ex.facts = detail::string_array(j["facts"], "facts", line);
  if (j.contains("visual_concepts")) ex.visual_concepts = detail::string_array(j["visual_concepts"], "visual_concepts", line);
  if (j.contains("choices") && !j["choices"].is_null()) {
    ex.choices = detail::string_array(j["choices"], "choices", line);
    if (ex.choices->size() != 4) throw ParseError(where + "\"choices\" must hold exactly 4 strings");
  }
  if (j.contains("correct_index") && !j["correct_index"].is_null()) {
    if (!j["correct_index"].is_number_unsigned()) throw ParseError(where + "\"correct_index\" must be 0..3");
    ex.correct_index = j["correct_index"].get<std::size_t>();
    if (*ex.correct_index > 3) throw ParseError(where + "\"correct_index\" must be 0..3");
  }
  if (ex.choices.has_value() != ex.correct_index.has_value()) {
    throw ParseError(where + "\"choices\" and \"correct_index\" must appear together");
  }
  return ex;
}

inline json example_to_json(const QAExample& ex) {
  json j;
  j["id"] = ex.id;
  j["description_sentences"] = ex.description_sentences;
  j["facts"] = ex.facts;
  j["question"] = ex.question;
  j["answers"] = ex.answers;
  j["qtype"] = std::string(qtype_name(ex.qtype));
  if (ex.choices) {
    j["choices"] = *ex.choices;
    j["correct_index"] = *ex.correct_index;
  }
  if (!ex.visual_concepts.empty()) j["visual_concepts"] = ex.visual_concepts;
  return j;
}

// Calls fn(parsed_json, line_number) for each non-blank line.
template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    fn(j, line);
  }
}

// Reads a dataset file. Records without any description or fact sentence
// are rejected unless `allow_empty_context` is set (facts may be attached
// later by retrieval).
inline std::vector<QAExample> load_examples(const std::string& path, bool allow_empty_context = false) {
  std::vector<QAExample> out;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    QAExample ex;
    try {
      ex = example_from_json(j, line);
    } catch (const ParseError& e) {
      throw ParseError(path + ": " + e.what());
    }
    if (!allow_empty_context && ex.description_sentences.empty() && ex.facts.empty()) {
      throw EmptyContextError(path + ": line " + std::to_string(line) + ": record has neither descriptions nor facts");
    }
    if (!ids.insert(ex.id).second) {
      throw DataError(path + ": line " + std::to_string(line) + ": duplicate id \"" + ex.id + "\"");
    }
    out.push_back(std::move(ex));
  });
  return out;
}

inline void save_examples(const std::string& path, const std::vector<QAExample>& examples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

inline Fact fact_from_json(const json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  Fact f;
  for (auto [field, dest] : {std::pair<const char*, std::string*>{"subject", &f.subject},
                             {"relation", &f.relation},
                             {"object", &f.object},
                             {"sentence", &f.sentence}}) {
    if (!j.contains(field) || !j[field].is_string()) {
      throw ParseError(where + "fact needs string field \"" + field + "\"");
    }
    *dest = j[field].get<std::string>();
  }
  if (f.subject.empty() || f.object.empty() || f.sentence.empty()) {
    throw DataError(where + "fact subject, object and sentence must be non-empty");
  }
  return f;
}

inline std::vector<Fact> load_facts(const std::string& path) {
  std::vector<Fact> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(fact_from_json(j, line));
    } catch (const ParseError& e) {
      throw ParseError(path + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ": " + e.what());
    }
  });
  return out;
}

// Context string for an example under a token limit.
inline AssembledContext assemble_context(const QAExample& ex, std::size_t limit) {
  return assemble_context(ex.description_sentences, ex.facts, limit);
}

}  // namespace rcvqa

// rcvqa: ingest, train, eval, predict and retrieve from the command line.
//
// Every command prints a single-line JSON record first (carrying the seed
// and a config echo), optionally followed by human-readable lines. Failures
// print one line "error: <category>: <message>" to stderr and exit nonzero.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rcvqa/rcvqa.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rcvqa;

namespace {

struct RunConfig {
  std::string mode = "open_ended";
  std::string profile = "desk";
  std::string train;
  std::string validation;
  std::string facts;
  std::string embeddings;
  bool require_embeddings = false;
  std::string output_dir = "run";
  std::uint64_t seed = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  Schedule schedule;
  std::size_t context_limit = 500;
  std::size_t num_classes = 5000;
  std::size_t retrieve_k = 3;
  std::size_t min_freq = 1;
  std::size_t limit = 0;

  json to_json() const {
    return {{"mode", mode},
            {"profile", profile},
            {"train", train},
            {"validation", validation},
            {"facts", facts},
            {"embeddings", embeddings},
            {"require_embeddings", require_embeddings},
            {"output_dir", output_dir},
            {"seed", seed},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"schedule",
             {{"base_lr", schedule.base_lr},
              {"decay", schedule.decay},
              {"interval", schedule.interval},
              {"floor", schedule.floor},
              {"phases", schedule.phases}}},
            {"context_limit", context_limit},
            {"num_classes", num_classes},
            {"retrieve_k", retrieve_k},
            {"min_freq", min_freq},
            {"limit", limit}};
  }

  static RunConfig from_json(const json& j) {
    static const std::set<std::string> known = {
        "mode",   "profile",    "train",      "validation",    "facts",       "embeddings", "require_embeddings",
        "output_dir", "seed",   "epochs",     "batch_size",    "schedule",    "context_limit", "num_classes",
        "retrieve_k", "min_freq", "limit"};
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (!known.count(key)) throw ConfigError("unknown run config field \"" + key + "\"");
    RunConfig c;
    try {
      c.mode = j.value("mode", c.mode);
      c.profile = j.value("profile", c.profile);
      c.train = j.value("train", c.train);
      c.validation = j.value("validation", c.validation);
      c.facts = j.value("facts", c.facts);
      c.embeddings = j.value("embeddings", c.embeddings);
      c.require_embeddings = j.value("require_embeddings", c.require_embeddings);
      c.output_dir = j.value("output_dir", c.output_dir);
      c.seed = j.value("seed", c.seed);
      c.epochs = j.value("epochs", c.epochs);
      c.batch_size = j.value("batch_size", c.batch_size);
      if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        c.schedule.base_lr = s.value("base_lr", c.schedule.base_lr);
        c.schedule.decay = s.value("decay", c.schedule.decay);
        c.schedule.interval = s.value("interval", c.schedule.interval);
        c.schedule.floor = s.value("floor", c.schedule.floor);
        if (s.contains("phases")) c.schedule.phases = s["phases"].get<std::vector<std::pair<std::size_t, double>>>();
      }
      c.context_limit = j.value("context_limit", c.context_limit);
      c.num_classes = j.value("num_classes", c.num_classes);
      c.retrieve_k = j.value("retrieve_k", c.retrieve_k);
      c.min_freq = j.value("min_freq", c.min_freq);
      c.limit = j.value("limit", c.limit);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("run config field has the wrong type: ") + e.what());
    }
    return c;
  }

  // Checks everything that can fail before any training compute starts.
  void validate() const {
    parse_mode(mode);
    ModelConfig::for_profile(profile, Mode::Span);
    if (train.empty()) throw ConfigError("run config needs a \"train\" dataset path");
    for (const auto* p : {&train, &validation, &facts})
      if (!p->empty() && !fs::exists(*p)) throw ConfigError("path does not exist: " + *p);
    if (require_embeddings && (embeddings.empty() || !fs::exists(embeddings))) {
      throw ConfigError("embeddings are required but \"" + embeddings + "\" does not exist");
    }
    if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be at least 1");
    if (schedule.phases.empty() && (schedule.interval == 0 || schedule.base_lr <= 0.0)) {
      throw ConfigError("schedule needs a positive base_lr and interval");
    }
    if (context_limit == 0 || num_classes == 0 || retrieve_k == 0) {
      throw ConfigError("context_limit, num_classes and retrieve_k must be at least 1");
    }
  }
};

void emit(const json& record) { std::cout << record.dump() << '\n'; }

std::vector<QAExample> load_dataset(const std::string& path, std::size_t limit, const std::string& facts_path,
                                    std::size_t k, std::size_t* attached = nullptr) {
  auto examples = load_examples(path, !facts_path.empty());
  if (limit && examples.size() > limit) examples.resize(limit);
  if (!facts_path.empty()) {
    const auto index = index_facts(load_facts(facts_path));
    const std::size_t n = attach_retrieved_facts(examples, index, k);
    if (attached) *attached = n;
    std::erase_if(examples, [](const QAExample& ex) { return ex.description_sentences.empty() && ex.facts.empty(); });
  }
  return examples;
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
  std::string input, out_dir, mode = "open_ended", facts;
  std::size_t classes = 5000, k = 3, min_freq = 1;
  std::uint64_t seed = 1;
};

int cmd_ingest(const IngestArgs& a) {
  const Mode mode = parse_mode(a.mode);
  std::size_t attached = 0;
  auto examples = load_dataset(a.input, 0, a.facts, a.k, &attached);
  if (examples.empty()) throw DataError(a.input + " contains no examples");
  fs::create_directories(a.out_dir);
  const auto vocab = build_vocab(examples, a.min_freq);
  vocab.save((fs::path(a.out_dir) / "vocab.json").string());
  std::size_t excluded = 0, classes = 0;
  if (mode == Mode::OpenEnded) {
    const auto map = build_answer_classes(examples, a.classes);
    excluded = map.excluded;
    classes = map.classes.size();
    std::ofstream out(fs::path(a.out_dir) / "classes.json");
    out << json(map.classes.labels()).dump(1) << '\n';
  }
  if (mode == Mode::MultipleChoice) {
    for (const auto& ex : examples)
      if (!ex.choices || ex.choices->size() != 4 || !ex.correct_index) {
        throw DataError("example " + ex.id + " lacks four choices and a correct index");
      }
  }
  save_examples((fs::path(a.out_dir) / "examples.jsonl").string(), examples);
  emit({{"command", "ingest"},
        {"seed", a.seed},
        {"config", {{"input", a.input}, {"out", a.out_dir}, {"mode", a.mode}, {"classes", a.classes},
                    {"facts", a.facts}, {"k", a.k}, {"min_freq", a.min_freq}}},
        {"kept", examples.size()},
        {"excluded_out_of_class", excluded},
        {"answer_classes", classes},
        {"vocabulary_words", vocab.num_words()},
        {"vocabulary_chars", vocab.num_chars()},
        {"facts_attached", attached}});
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, mode, profile, finetune_from;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> limit;
};

// Copies every checkpoint parameter whose name and shape exist in the model.
std::size_t copy_matching(ReadingModel<float>& model, const Checkpoint& ck) {
  std::size_t copied = 0;
  for (const auto& r : ck.records) {
    if (!model.params().contains(r.name)) continue;
    auto t = model.params().get(r.name);
    if (t.shape() != r.shape) continue;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < r.length; ++i) dst[i] = ck.payload[r.offset / 4 + i];
    ++copied;
  }
  return copied;
}

int cmd_train(const TrainArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw IoError("cannot open run config " + a.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(a.config + ": " + e.what());
  }
  RunConfig rc = RunConfig::from_json(j);
  if (!a.mode.empty()) rc.mode = a.mode;
  if (!a.profile.empty()) rc.profile = a.profile;
  if (a.seed) rc.seed = *a.seed;
  if (a.limit) rc.limit = *a.limit;
  if (!a.finetune_from.empty()) {
    if (!fs::exists(a.finetune_from)) throw ConfigError("path does not exist: " + a.finetune_from);
    rc.schedule = Schedule::finetune();
    rc.epochs = rc.schedule.phase_epochs();
  }
  rc.validate();

  const Mode mode = parse_mode(rc.mode);
  auto train_raw = load_dataset(rc.train, rc.limit, rc.facts, rc.retrieve_k);
  std::vector<QAExample> val_raw;
  if (!rc.validation.empty()) val_raw = load_dataset(rc.validation, rc.limit, rc.facts, rc.retrieve_k);

  std::optional<Checkpoint> base;
  if (!a.finetune_from.empty()) base = load_checkpoint(a.finetune_from);
  const Vocabulary vocab = base ? base->vocab : build_vocab(train_raw, rc.min_freq);
  AnswerClasses classes;
  std::size_t excluded = 0;
  ModelConfig mc = ModelConfig::for_profile(rc.profile, mode);
  mc.context_limit = rc.context_limit;
  if (mode == Mode::OpenEnded) {
    auto map = build_answer_classes(train_raw, rc.num_classes);
    classes = map.classes;
    excluded = map.excluded;
    mc.num_classes = classes.size();
  }
  const AnswerClasses* cls = mode == Mode::OpenEnded ? &classes : nullptr;
  const auto train_set = prepare_examples(train_raw, vocab, mc, cls);
  const auto val_set = prepare_examples(val_raw, vocab, mc, cls);

  std::string embeddings = rc.embeddings;
  if (!embeddings.empty() && !fs::exists(embeddings)) {
    std::cerr << "warning: embeddings " << embeddings << " not found; word vectors are randomly initialized\n";
    embeddings.clear();
  }
  EmbeddingLoadStats stats;
  auto words = load_embeddings<float>(embeddings, vocab, mc.word_dim, rc.seed, mc.finetune_word_embeddings, &stats);
  ReadingModel<float> model(mc, vocab, std::move(words), rc.seed);
  std::size_t copied = base ? copy_matching(model, *base) : 0;

  fs::create_directories(rc.output_dir);
  const std::string ckpt_path = (fs::path(rc.output_dir) / "model.ckpt").string();
  const std::string trace_path = (fs::path(rc.output_dir) / "trace.csv").string();
  const json echo = rc.to_json();
  {
    std::ofstream out(fs::path(rc.output_dir) / "run.json");
    out << json{{"seed", rc.seed}, {"config", echo}, {"finetune_from", a.finetune_from}}.dump(1) << '\n';
  }

  TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.schedule = rc.schedule;
  tc.seed = rc.seed;
  auto result = train(model, train_set, val_set.empty() ? nullptr : &val_set, tc, cls, [&](std::size_t) {
    save_checkpoint(ckpt_path, make_checkpoint(model, vocab, classes, rc.seed, echo));
  });
  write_trace(trace_path, result.trace);

  emit({{"command", "train"},
        {"seed", rc.seed},
        {"config", echo},
        {"examples", train_set.size()},
        {"validation_examples", val_set.size()},
        {"excluded_out_of_class", excluded},
        {"parameters", model.params().num_values()},
        {"embeddings_covered", stats.covered},
        {"finetune_parameters_copied", copied},
        {"epochs_run", result.epochs_run},
        {"steps", result.steps},
        {"best_epoch", result.best_epoch},
        {"best_top1", result.best_top1},
        {"checkpoint", ckpt_path},
        {"trace", trace_path}});
  return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, facts, mode;
  std::size_t k = 3, limit = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  if (!a.mode.empty() && parse_mode(a.mode) != ck.config.mode) {
    throw ConfigError("checkpoint was trained for " + std::string(mode_name(ck.config.mode)) + ", not " + a.mode);
  }
  auto model = model_from_checkpoint<float>(ck);
  const Mode mode = ck.config.mode;
  const auto raw = load_dataset(a.data, a.limit, a.facts, a.k);
  const AnswerClasses* cls = mode == Mode::OpenEnded ? &ck.classes : nullptr;
  const auto data = prepare_examples(raw, ck.vocab, ck.config, cls);
  const auto report = evaluate(*model, data, mode, cls);
  json record = report.to_json();
  record["command"] = "eval";
  record["seed"] = ck.seed;
  record["config"] = ck.run;
  record["checkpoint"] = a.checkpoint;
  record["data"] = a.data;
  emit(record);
  std::cout << report.table();
  return 0;
}

// ---- predict ---------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, question, facts;
  std::vector<std::string> context, choices, concepts;
  std::size_t k = 3;
};

int cmd_predict(const PredictArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  auto model = model_from_checkpoint<float>(ck);
  const Mode mode = ck.config.mode;
  QAExample ex;
  ex.id = "predict";
  ex.question = a.question;
  ex.description_sentences = a.context;
  ex.visual_concepts = a.concepts;
  if (!a.facts.empty()) {
    const auto index = index_facts(load_facts(a.facts));
    ex.facts = fact_sentences(retrieve_top_k(index, ex.question, ex.visual_concepts, a.k));
  }
  if (ex.description_sentences.empty() && ex.facts.empty()) {
    throw UsageError("predict needs --context sentences or --facts with matching facts");
  }
  if (mode == Mode::MultipleChoice) {
    if (a.choices.size() != 4) throw UsageError("multiple-choice predict needs exactly four --choice values");
    ex.choices = a.choices;
  }
  const AnswerClasses* cls = mode == Mode::OpenEnded ? &ck.classes : nullptr;
  const auto prepared = prepare_example(ex, ck.vocab, ck.config, cls);
  json record{{"command", "predict"}, {"seed", ck.seed}, {"config", ck.run}, {"mode", mode_name(mode)},
              {"question", a.question}, {"context", prepared.context_text.text}};
  std::vector<std::string> lines;
  char buf[512];
  switch (mode) {
    case Mode::MultipleChoice: {
      const auto scores = predict_choices(*model, prepared);
      std::vector<double> probs;
      json choices = json::array();
      for (std::size_t i = 0; i < scores.size(); ++i) {
        probs.push_back(scores[i].probability);
        choices.push_back({{"choice", a.choices[i]}, {"probability", scores[i].probability}, {"score", scores[i].e}});
      }
      const std::size_t best = argmax_first(probs);
      record["choices"] = choices;
      record["answer"] = a.choices[best];
      for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%c %s (%.4f)", i == best ? '*' : ' ', a.choices[i].c_str(), probs[i]);
        lines.emplace_back(buf);
      }
      break;
    }
    case Mode::OpenEnded: {
      json top = json::array();
      for (const auto& r : predict_open_ended(*model, prepared, ck.classes)) {
        top.push_back({{"answer", r.label}, {"probability", r.probability}});
        std::snprintf(buf, sizeof buf, "%s (%.4f)", r.label.c_str(), r.probability);
        lines.emplace_back(buf);
      }
      record["top3"] = top;
      record["answer"] = top.empty() ? json() : top[0]["answer"];
      break;
    }
    case Mode::Span: {
      const auto ans = predict_span(*model, prepared);
      record["answer"] = ans.text;
      record["start"] = ans.span.start;
      record["end"] = ans.span.end;
      record["score"] = ans.span.score;
      record["supporting_sentence"] = ans.source_sentence;
      lines.push_back("answer: " + ans.text);
      lines.push_back("supporting sentence: " + ans.source_sentence);
      break;
    }
  }
  emit(record);
  for (const auto& l : lines) std::cout << l << '\n';
  return 0;
}

// ---- retrieve ----------------------------------------------------------------------

struct RetrieveArgs {
  std::string facts, question;
  std::vector<std::string> concepts;
  std::size_t k = 3;
};

int cmd_retrieve(const RetrieveArgs& a) {
  const auto index = index_facts(load_facts(a.facts));
  const auto ranked = retrieve_top_k(index, a.question, a.concepts, a.k);
  json rows = json::array();
  for (const auto& r : ranked) rows.push_back({{"id", r.id}, {"score", r.score}, {"sentence", r.fact->sentence}});
  emit({{"command", "retrieve"},
        {"seed", nullptr},
        {"config", {{"facts", a.facts}, {"question", a.question}, {"concepts", a.concepts}, {"k", a.k}}},
        {"facts", rows}});
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::cout << i + 1 << ". [" << ranked[i].score << "] (fact " << ranked[i].id << ") " << ranked[i].fact->sentence
              << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual question answering as reading comprehension"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a dataset and write vocabulary, classes and examples");
  ingest_cmd->add_option("input", ingest.input, "Dataset JSONL")->required();
  ingest_cmd->add_option("--out", ingest.out_dir, "Output directory")->required();
  ingest_cmd->add_option("--mode", ingest.mode, "open_ended, multiple_choice or span");
  ingest_cmd->add_option("--classes", ingest.classes, "Answer classes to keep (open-ended)");
  ingest_cmd->add_option("--facts", ingest.facts, "Fact base JSONL for retrieval");
  ingest_cmd->add_option("--k", ingest.k, "Facts retrieved per question");
  ingest_cmd->add_option("--min-freq", ingest.min_freq, "Minimum word frequency");
  ingest_cmd->add_option("--seed", ingest.seed, "Seed recorded in the report");

  TrainArgs train_args;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("--config", train_args.config, "Run config JSON")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Override the seed");
  train_cmd->add_option("--mode", train_args.mode, "Override the mode");
  train_cmd->add_option("--profile", train_args.profile, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  train_cmd->add_option("--finetune-from", train_args.finetune_from, "Checkpoint to start from");
  auto* limit_opt = train_cmd->add_option("--limit", limit, "Use at most this many examples per split");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset JSONL")->required();
  eval_cmd->add_option("--mode", eval_args.mode, "Expected mode");
  eval_cmd->add_option("--facts", eval_args.facts, "Fact base for examples without context");
  eval_cmd->add_option("--k", eval_args.k, "Facts retrieved per question");
  eval_cmd->add_option("--limit", eval_args.limit, "Evaluate at most this many examples");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Answer one question");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--question", predict_args.question, "Question text")->required();
  predict_cmd->add_option("--context", predict_args.context, "Context sentence (repeatable)");
  predict_cmd->add_option("--choice", predict_args.choices, "Candidate answer (repeat four times)");
  predict_cmd->add_option("--facts", predict_args.facts, "Fact base to retrieve context from");
  predict_cmd->add_option("--concept", predict_args.concepts, "Visual concept (repeatable)");
  predict_cmd->add_option("--k", predict_args.k, "Facts retrieved");

  RetrieveArgs retrieve_args;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank supporting facts for a question");
  retrieve_cmd->add_option("--facts", retrieve_args.facts, "Fact base JSONL")->required();
  retrieve_cmd->add_option("--question", retrieve_args.question, "Question text")->required();
  retrieve_cmd->add_option("--concept", retrieve_args.concepts, "Visual concept (repeatable)");
  retrieve_cmd->add_option("--k", retrieve_args.k, "Number of facts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest);
    if (*train_cmd) {
      if (*seed_opt) train_args.seed = seed;
      if (*limit_opt) train_args.limit = limit;
      return cmd_train(train_args);
    }
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*predict_cmd) return cmd_predict(predict_args);
    if (*retrieve_cmd) return cmd_retrieve(retrieve_args);
  } catch (const rcvqa::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

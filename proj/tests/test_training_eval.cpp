#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "model_fixture.hpp"

using namespace rcvqa;
using rcvqa::testing::fixture;
using rcvqa::testing::make_workbench;
using rcvqa::testing::tiny_config;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rcvqa_train_" + name)).string();
}

QAExample mc_example() {
  QAExample ex;
  ex.id = "mc";
  ex.description_sentences = {"a red ball"};
  ex.question = "what color is the ball ?";
  ex.answers = {"red"};
  ex.choices = std::vector<std::string>{"blue", "red", "green", "pink"};
  ex.correct_index = 1;
  return ex;
}

std::vector<PreparedExample> first(const std::vector<PreparedExample>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

}  // namespace

// ---- optimizer ---------------------------------------------------------------

TEST(Adam, ThreeStepScalarTrajectory) {
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[] = {0.5, -0.2, 0.1};
  double theta = 1.0, m = 0.0, v = 0.0;
  std::vector<double> param{1.0}, mb{0.0}, vb{0.0};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    std::vector<double> grad{g};
    adam_update<double>(param, grad, mb, vb, static_cast<std::size_t>(t), lr, AdamHyper{});
    EXPECT_NEAR(param[0], theta, 1e-8) << "step " << t;
    if (t == 1) { EXPECT_NEAR(1.0 - param[0], lr, 1e-10); }
  }
}

TEST(Adam, FirstStepMovesEveryParameterByAboutLr) {
  ParameterStore<double> store;
  auto a = store.add("a", Tensor<double>({3}, {1.0, -2.0, 0.5}, true));
  auto state = make_optimizer_state(store);
  const std::vector<double> g{3.0, -1e-3, 40.0};
  std::copy(g.begin(), g.end(), a.mutable_grad().begin());
  adam_step(store, state, 0.01);
  EXPECT_NEAR(a[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(a[1], -2.0 + 0.01, 1e-7);
  EXPECT_NEAR(a[2], 0.5 - 0.01, 1e-8);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, MismatchedStateRaises) {
  ParameterStore<double> store, other;
  store.add("a", Tensor<double>({2}, 0.0, true));
  auto state = make_optimizer_state(other);
  EXPECT_THROW(adam_step(store, state, 0.1), DimensionError);
}

TEST(Clipping, ScalesToMaxNorm) {
  ParameterStore<double> store;
  auto a = store.add("a", Tensor<double>({2}, 0.0, true));
  auto b = store.add("b", Tensor<double>({1}, 0.0, true));
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  b.mutable_grad()[0] = 12.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 5.0), 13.0);
  EXPECT_NEAR(global_grad_norm(store), 5.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 3.0 * 5.0 / 13.0, 1e-12);
  EXPECT_NEAR(clip_grad_norm(store, 10.0), 5.0, 1e-12);
  EXPECT_NEAR(global_grad_norm(store), 5.0, 1e-12);
}

TEST(Schedule, StepDecayValues) {
  const auto s = Schedule::from_scratch();
  for (std::size_t e : {0, 1, 2}) EXPECT_DOUBLE_EQ(lr_at(s, e), 0.001);
  for (std::size_t e : {3, 4, 5}) EXPECT_NEAR(lr_at(s, e), 0.0008, 1e-15);
  EXPECT_NEAR(lr_at(s, 6), 0.00064, 1e-15);
  EXPECT_NEAR(lr_at(s, 9), 0.000512, 1e-15);
  EXPECT_NEAR(lr_at(s, 30), 0.001 * std::pow(0.8, 10), 1e-15);
  EXPECT_NEAR(lr_at(s, 31), 0.000107374182, 1e-12);
  EXPECT_NEAR(lr_at(s, 32), 0.000107374182, 1e-12);
  EXPECT_DOUBLE_EQ(lr_at(s, 33), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at(s, 1000), 0.0001);
}

TEST(Schedule, NonIncreasingAndFloored) {
  const auto s = Schedule::from_scratch();
  for (std::size_t e = 1; e < 200; ++e) {
    EXPECT_LE(lr_at(s, e), lr_at(s, e - 1));
    EXPECT_GE(lr_at(s, e), s.floor);
  }
}

TEST(Schedule, FinetunePhases) {
  const auto s = Schedule::finetune();
  EXPECT_EQ(s.phase_epochs(), 20u);
  for (std::size_t e = 0; e < 10; ++e) EXPECT_DOUBLE_EQ(lr_at(s, e), 0.001);
  for (std::size_t e = 10; e < 20; ++e) EXPECT_DOUBLE_EQ(lr_at(s, e), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at(s, 25), 0.0001);
}

// ---- negative sampling -------------------------------------------------------

TEST(NegativeSampling, PositiveFirstThenTwoDistinctNegatives) {
  Rng rng(1);
  const auto ex = mc_example();
  for (int i = 0; i < 100; ++i) {
    auto t = sample_negatives(ex, rng);
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t[0].label, 1);
    EXPECT_EQ(t[0].answer, "red");
    EXPECT_EQ(t[1].label, 0);
    EXPECT_EQ(t[2].label, 0);
    EXPECT_NE(t[1].choice, t[2].choice);
    EXPECT_NE(t[1].choice, 1u);
    EXPECT_NE(t[2].choice, 1u);
    EXPECT_EQ(t[1].answer, (*ex.choices)[t[1].choice]);
  }
}

TEST(NegativeSampling, EachWrongChoiceAppearsTwoThirdsOfTheTime) {
  Rng rng(7);
  const auto ex = mc_example();
  std::size_t counts[4] = {0, 0, 0, 0};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (const auto& t : sample_negatives(ex, rng))
      if (t.label == 0) ++counts[t.choice];
  for (std::size_t c : {0u, 2u, 3u}) EXPECT_NEAR(static_cast<double>(counts[c]) / draws, 2.0 / 3.0, 0.02);
  EXPECT_EQ(counts[1], 0u);
}

TEST(NegativeSampling, RejectsMalformedExamples) {
  Rng rng(1);
  auto ex = mc_example();
  ex.choices->pop_back();
  EXPECT_THROW(sample_negatives(ex, rng), DataError);
  ex = mc_example();
  ex.correct_index.reset();
  EXPECT_THROW(sample_negatives(ex, rng), DataError);
}

// ---- training loop -------------------------------------------------------------

TEST(Training, StepsPerEpochIsCeilOfStreamOverBatch) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  auto data = first(w.train, 40);
  TrainConfig cfg;
  cfg.epochs = 2;
  EXPECT_EQ(train(*w.model, data, nullptr, cfg).steps, 4u);
  cfg.epochs = 1;
  cfg.batch_size = 7;
  EXPECT_EQ(train(*w.model, data, nullptr, cfg).steps, 6u);

  auto mc = make_workbench(tiny_config(Mode::MultipleChoice), "mc_train.jsonl");
  cfg.batch_size = 32;
  // Three stream items (one positive, two negatives) per example.
  EXPECT_EQ(train(*mc.model, first(mc.train, 20), nullptr, cfg).steps, 2u);
}

TEST(Training, OneSmallStepLowersBatchLoss) {
  auto w = make_workbench<double>(tiny_config(Mode::Span), "span_train.jsonl");
  auto data = first(w.train, 8);
  const auto items = detail::evaluation_items(data, Mode::Span);
  int lowered = 0;
  for (std::uint64_t init = 0; init < 50; ++init) {
    w.seed = init;
    w.reset_model();
    Rng rng(0);
    std::size_t correct = 0;
    auto& params = w.model->params();
    auto before = detail::batch_loss(*w.model, data, items, false, rng, correct);
    params.zero_grad();
    backward(before);
    auto state = make_optimizer_state(params);
    adam_step(params, state, 1e-4);
    const double after = detail::batch_loss(*w.model, data, items, false, rng, correct).item();
    lowered += after < before.item() ? 1 : 0;
  }
  EXPECT_EQ(lowered, 50);
}

// End-to-end gradient through embedding, encoders, both query-role passes
// and the choice MLP, for every mode's loss.
TEST(Training, FullModelGradientsMatchFiniteDifferences) {
  const std::vector<std::pair<Mode, std::string>> cases = {{Mode::Span, "span_train.jsonl"},
                                                           {Mode::OpenEnded, "open_ended_train.jsonl"},
                                                           {Mode::MultipleChoice, "mc_train.jsonl"}};
  for (const auto& [mode, file] : cases) {
    auto config = tiny_config(mode);
    config.mc_dropout = 0.0;
    auto w = make_workbench<double>(config, file);
    auto data = first(w.train, 1);
    const auto items = detail::evaluation_items(data, mode);
    std::vector<Tensor<double>> leaves;
    for (const auto& [name, t] : w.model->params())
      if (name != "embedding.words") leaves.push_back(t);
    Rng rng(0);
    auto r = grad_check(
        [&] {
          std::size_t correct = 0;
          return detail::batch_loss(*w.model, data, items, false, rng, correct);
        },
        leaves);
    EXPECT_TRUE(r.passed) << mode_name(mode) << " worst relative error " << r.max_rel_error;
  }
}

TEST(Training, SameSeedRunsAreByteIdentical) {
  std::string traces[2], checkpoints[2];
  for (int run = 0; run < 2; ++run) {
    auto w = make_workbench(tiny_config(Mode::OpenEnded), "open_ended_train.jsonl", "", 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 5;
    auto r = train(*w.model, w.train, &w.train, cfg, &w.classes);
    traces[run] = trace_csv(r.trace);
    checkpoints[run] = serialize_checkpoint(make_checkpoint(*w.model, w.vocab, w.classes, 5));
  }
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_EQ(checkpoints[0], checkpoints[1]);
  EXPECT_NE(traces[0].find("epoch,split,loss,top1\n0,train,"), std::string::npos);
}

TEST(Training, DifferentSeedsDiverge) {
  auto a = make_workbench(tiny_config(Mode::Span), "span_train.jsonl", "", 1);
  auto b = make_workbench(tiny_config(Mode::Span), "span_train.jsonl", "", 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_NE(trace_csv(train(*a.model, first(a.train, 16), nullptr, cfg).trace),
            trace_csv(train(*b.model, first(b.train, 16), nullptr, cfg).trace));
}

TEST(Training, NonFiniteLossAbortsWithContext) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  for (auto& [name, t] : w.model->params())
    if (name.find("w_start") != std::string::npos) t.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(*w.model, first(w.train, 4), nullptr, cfg);
    ADD_FAILURE() << "expected a training error";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("span-"), std::string::npos) << msg;
  }
}

TEST(Training, ImprovementCallbackAndValidationRows) {
  auto w = make_workbench(tiny_config(Mode::OpenEnded), "open_ended_train.jsonl");
  TrainConfig cfg;
  cfg.epochs = 4;
  std::vector<std::size_t> improved;
  auto r = train(*w.model, w.train, &w.train, cfg, &w.classes, [&](std::size_t e) { improved.push_back(e); });
  ASSERT_EQ(r.trace.size(), 8u);
  EXPECT_EQ(r.trace[1].split, "val");
  ASSERT_FALSE(improved.empty());
  EXPECT_EQ(improved.front(), 0u);
  EXPECT_EQ(improved.back(), r.best_epoch);
  for (const auto& row : r.trace) {
    EXPECT_GE(row.top1, 0.0);
    EXPECT_LE(row.top1, 1.0);
  }
}

TEST(Training, NoUsableTargetRaises) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  auto data = first(w.train, 2);
  for (auto& ex : data) ex.gold_span.reset();
  EXPECT_THROW(train(*w.model, data, nullptr, TrainConfig{}), DataError);
}

// ---- checkpoints -------------------------------------------------------------

TEST(Checkpoint, RoundTripReproducesPredictions) {
  auto w = make_workbench(tiny_config(Mode::OpenEnded), "open_ended_train.jsonl");
  TrainConfig cfg;
  cfg.epochs = 2;
  train(*w.model, w.train, nullptr, cfg, &w.classes);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, make_checkpoint(*w.model, w.vocab, w.classes, w.seed, {{"note", "x"}}));
  auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.run["note"], "x");
  EXPECT_EQ(ck.classes.labels(), w.classes.labels());
  EXPECT_EQ(ck.vocab.words(), w.vocab.words());
  auto restored = model_from_checkpoint<float>(ck);
  for (const auto& ex : w.train) {
    auto a = w.model->classify_forward(ex.context, ex.question).p.values();
    auto b = restored->classify_forward(ex.context, ex.question).p.values();
    ASSERT_EQ(a, b);
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, CorruptFilesRaiseParseError) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  const std::string good = serialize_checkpoint(make_checkpoint(*w.model, w.vocab, w.classes, 1));
  EXPECT_NO_THROW(parse_checkpoint(good));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), ParseError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, 10)), ParseError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() - 4)), ParseError);
  std::string bad_version = good;
  bad_version[8] = 9;
  EXPECT_THROW(parse_checkpoint(bad_version), ParseError);
  std::string bad_json = good;
  bad_json[20] = '#';
  EXPECT_THROW(parse_checkpoint(bad_json), ParseError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), IoError);
}

TEST(Checkpoint, ShapeMismatchOnRestoreRaises) {
  auto a = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  auto cfg = tiny_config(Mode::Span);
  cfg.mc_hidden = 4;
  cfg.d = 4;
  cfg.embedding_encoder.d = cfg.model_encoder.d = 4;
  auto b = make_workbench(cfg, "span_train.jsonl");
  EXPECT_THROW(restore_parameters(*b.model, make_checkpoint(*a.model, a.vocab, a.classes, 1)), DimensionError);
}

// ---- evaluation ----------------------------------------------------------------

TEST(Evaluate, TwelveExampleFixtureMatchesHandCount) {
  auto examples = load_examples(fixture("eval_12.jsonl"));
  std::vector<std::vector<std::string>> ranked;
  std::ifstream in(fixture("eval_12.jsonl"));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ranked.push_back(nlohmann::json::parse(line).at("ranked_predictions"));
  ASSERT_EQ(examples.size(), 12u);
  auto r = score_ranked(Mode::OpenEnded, examples, ranked);
  EXPECT_EQ(r.correct_top1, 4u);
  EXPECT_EQ(r.correct_top3, 8u);
  EXPECT_DOUBLE_EQ(r.top1, 4.0 / 12.0);
  EXPECT_DOUBLE_EQ(r.top3, 8.0 / 12.0);
  const std::map<QType, std::pair<std::size_t, std::size_t>> expected = {
      {QType::What, {1, 3}}, {QType::Where, {1, 2}}, {QType::When, {0, 1}},
      {QType::Who, {1, 3}},  {QType::Why, {1, 1}},   {QType::How, {0, 2}}};
  ASSERT_EQ(r.per_qtype.size(), expected.size());
  for (const auto& [t, cc] : expected) {
    EXPECT_EQ(r.per_qtype.at(t).correct, cc.first) << qtype_name(t);
    EXPECT_EQ(r.per_qtype.at(t).count, cc.second) << qtype_name(t);
  }
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j["per_qtype"]["where"]["top1"].get<double>(), 0.5);
  EXPECT_FALSE(j["per_qtype"].contains("other"));
  const std::string table = r.table();
  EXPECT_NE(table.find("where             2   0.5000"), std::string::npos) << table;
  EXPECT_EQ(table.find("other"), std::string::npos);
}

TEST(Evaluate, PerTypeAndOverallFromFourExamples) {
  std::vector<ExampleOutcome> outcomes = {
      {QType::What, true, true}, {QType::What, true, true}, {QType::Who, false, false}, {QType::Who, false, true}};
  auto r = tally(Mode::OpenEnded, outcomes);
  EXPECT_DOUBLE_EQ(r.per_qtype.at(QType::What).top1(), 1.0);
  EXPECT_DOUBLE_EQ(r.per_qtype.at(QType::Who).top1(), 0.0);
  EXPECT_DOUBLE_EQ(r.top1, 0.5);
  EXPECT_DOUBLE_EQ(r.top3, 0.75);
  EXPECT_EQ(r.per_qtype.count(QType::Where), 0u);
}

TEST(Evaluate, TopOneNeverExceedsTopThree) {
  Rng rng(3);
  const std::vector<std::string> words{"red", "blue", "dog", "dogs", "the park", "Park."};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<QAExample> ex;
    std::vector<std::vector<std::string>> ranked;
    for (std::size_t i = 0, n = 1 + rng.below(10); i < n; ++i) {
      QAExample e;
      e.id = std::to_string(i);
      e.answers = {words[rng.below(words.size())]};
      e.qtype = kAllQTypes[rng.below(kAllQTypes.size())];
      ex.push_back(e);
      std::vector<std::string> r;
      for (std::size_t k = 0, m = rng.below(5); k < m; ++k) r.push_back(words[rng.below(words.size())]);
      ranked.push_back(r);
    }
    auto r = score_ranked(Mode::OpenEnded, ex, ranked);
    ASSERT_LE(0.0, r.top1);
    ASSERT_LE(r.top1, r.top3);
    ASSERT_LE(r.top3, 1.0);
  }
}

TEST(Evaluate, MultipleChoiceScoringAndTieBreak) {
  EXPECT_EQ(argmax_first({0.2, 0.7, 0.7, 0.1}), 1u);
  std::vector<QAExample> ex(2, mc_example());
  auto r = score_choices(ex, {1, 3});
  EXPECT_DOUBLE_EQ(r.top1, 0.5);
  EXPECT_FALSE(r.to_json().contains("top3"));
  ex[0].correct_index.reset();
  EXPECT_THROW(score_choices(ex, {1, 3}), DataError);
}

TEST(Evaluate, ModeMismatchRaises) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  EXPECT_THROW(evaluate(*w.model, w.train, Mode::OpenEnded), ConfigError);
}

TEST(Evaluate, TrainedModelsReportBoundedScores) {
  for (Mode mode : {Mode::Span, Mode::OpenEnded, Mode::MultipleChoice}) {
    const char* file = mode == Mode::Span ? "span_train.jsonl"
                       : mode == Mode::OpenEnded ? "open_ended_train.jsonl"
                                                 : "mc_train.jsonl";
    auto w = make_workbench(tiny_config(mode), file);
    auto data = first(w.train, 12);
    auto r = evaluate(*w.model, data, mode, mode == Mode::OpenEnded ? &w.classes : nullptr);
    EXPECT_EQ(r.num_examples, 12u);
    EXPECT_LE(r.top1, r.top3);
    EXPECT_LE(r.top3, 1.0);
  }
}

TEST(Prediction, SpanTextIsContextSubstring) {
  auto w = make_workbench(tiny_config(Mode::Span), "span_train.jsonl");
  for (const auto& ex : first(w.train, 10)) {
    auto a = predict_span(*w.model, ex);
    EXPECT_NE(ex.context_text.text.find(a.text), std::string::npos);
    EXPECT_NE(a.source_sentence.find(a.text.substr(0, a.text.find(' '))), std::string::npos);
    EXPECT_LE(a.span.start, a.span.end);
  }
}

TEST(Prediction, OpenEndedRanksThreeDistinctClasses) {
  auto w = make_workbench(tiny_config(Mode::OpenEnded), "open_ended_train.jsonl");
  auto ranked = predict_open_ended(*w.model, w.train.front(), w.classes);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_GE(ranked[0].probability, ranked[1].probability);
  EXPECT_GE(ranked[1].probability, ranked[2].probability);
  EXPECT_NE(ranked[0].label, ranked[1].label);
}

// ---- pipeline ------------------------------------------------------------------

TEST(Pipeline, LocateAnswerFindsFirstTokenMatch) {
  auto span = locate_answer("the red car and the red hat .", {"red hat"});
  ASSERT_TRUE(span);
  EXPECT_EQ(span->first, 5u);
  EXPECT_EQ(span->second, 6u);
  span = locate_answer("The Red car", {"red"});
  ASSERT_TRUE(span);
  EXPECT_EQ(span->first, 1u);
  EXPECT_FALSE(locate_answer("a blue car", {"red"}));
}

TEST(Pipeline, RetrievedFactsFillOnlyEmptyContexts) {
  auto index = index_facts(load_facts(fixture("facts.jsonl")));
  QAExample with_desc, bare;
  with_desc.id = "a";
  with_desc.question = "what category is water ?";
  with_desc.description_sentences = {"a glass of water"};
  with_desc.facts = {"given fact"};
  bare.id = "b";
  bare.question = "what category is water ?";
  bare.visual_concepts = {"water"};
  std::vector<QAExample> ex{with_desc, bare};
  EXPECT_EQ(attach_retrieved_facts(ex, index, 3), 1u);
  EXPECT_EQ(ex[0].facts, (std::vector<std::string>{"given fact"}));
  ASSERT_FALSE(ex[1].facts.empty());
  EXPECT_EQ(ex[1].facts.front(), "Water belongs to the category of drink");
}

TEST(Pipeline, MultipleChoiceNeedsChoices) {
  auto ex = mc_example();
  ex.choices.reset();
  auto vocab = build_vocab({mc_example()});
  EXPECT_THROW(prepare_example(ex, vocab, tiny_config(Mode::MultipleChoice)), DataError);
}

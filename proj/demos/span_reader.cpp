// Trains a desk-size span reader on the bundled copy-task fixture, then
// answers a question about a scene description and names the supporting
// sentence. Also ranks facts from the bundled fact base.
//
// usage: span_reader [epochs]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "rcvqa/rcvqa.hpp"

using namespace rcvqa;

namespace {

std::string fixture(const std::string& name) { return std::string(RCVQA_SOURCE_DIR) + "/data/fixtures/" + name; }

}  // namespace

int main(int argc, char** argv) {
  const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 15;
  const std::uint64_t seed = 1;
  try {
    const auto train_raw = load_examples(fixture("span_train.jsonl"));
    const auto test_raw = load_examples(fixture("span_test.jsonl"));
    const auto vocab = build_vocab(train_raw);
    const auto config = ModelConfig::desk(Mode::Span);
    const auto train_set = prepare_examples(train_raw, vocab, config);
    const auto test_set = prepare_examples(test_raw, vocab, config);

    auto words = load_embeddings<float>("", vocab, config.word_dim, seed);
    ReadingModel<float> model(config, vocab, std::move(words), seed);
    std::printf("%zu parameters, %zu training examples\n", model.params().num_values(), train_set.size());

    TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = seed;
    const auto result = train(model, train_set, &test_set, tc);
    for (const auto& row : result.trace)
      if (row.split == "val") std::printf("epoch %2zu  val loss %.4f  exact match %.3f\n", row.epoch, row.loss, row.top1);

    QAExample ex;
    ex.id = "demo";
    ex.description_sentences = {"the lamp on the ground is brown", "a woman is reading near the window"};
    ex.question = "where is the woman reading ?";
    const auto answer = predict_span(model, prepare_example(ex, vocab, config));
    std::printf("\nQ: %s\nA: %s\nsupporting sentence: %s\n", ex.question.c_str(), answer.text.c_str(),
                answer.source_sentence.c_str());

    const auto index = index_facts(load_facts(fixture("facts.jsonl")));
    std::printf("\nfacts for \"what can this animal do\" with concept \"cat\":\n");
    for (const auto& f : retrieve_top_k(index, "what can this animal do", {"cat"}, 3))
      std::printf("  [%d] %s\n", f.score, f.fact->sentence.c_str());
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(e.category()).c_str(), e.what());
    return 1;
  }
  return 0;
}

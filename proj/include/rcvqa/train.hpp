#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "rcvqa/evaluate.hpp"
#include "rcvqa/heads.hpp"
#include "rcvqa/model.hpp"
#include "rcvqa/optim.hpp"
#include "rcvqa/pipeline.hpp"

namespace rcvqa {

struct ChoiceTriplet {
  std::string question;
  std::string answer;
  std::size_t choice = 0;
  int label = 0;
};

// The positive (question, answer) pair plus two distinct negatives drawn
// uniformly without replacement from the three incorrect choices.
inline std::vector<ChoiceTriplet> sample_negatives(const QAExample& ex, Rng& rng) {
  if (!ex.choices || ex.choices->size() != 4 || !ex.correct_index || *ex.correct_index >= 4) {
    throw DataError("example " + ex.id + " needs exactly four choices with one correct index");
  }
  const std::size_t correct = *ex.correct_index;
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < 4; ++i)
    if (i != correct) wrong.push_back(i);
  const std::size_t left_out = rng.below(3);
  std::vector<ChoiceTriplet> out{{ex.question, (*ex.choices)[correct], correct, 1}};
  for (std::size_t k = 0; k < 3; ++k)
    if (k != left_out) out.push_back({ex.question, (*ex.choices)[wrong[k]], wrong[k], 0});
  return out;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  Schedule schedule;
  AdamHyper adam;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  // When set, the train row of the trace reports top-1 from a full
  // inference pass over the training set instead of the running value.
  bool evaluate_train = false;
  // Stop once train top-1 reaches this value (needs evaluate_train).
  double stop_at_train_top1 = 2.0;
};

struct TraceRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_top1 = -1.0;
};

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,split,loss,top1\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.6f\n", r.epoch, r.split.c_str(), r.loss, r.top1);
    out += buf;
  }
  return out;
}

inline void write_trace(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << trace_csv(trace);
}

namespace detail {

// One unit of the training stream: an example, or for multiple choice one
// (example, choice, label) triplet.
struct StreamItem {
  std::size_t example = 0;
  std::size_t choice = 0;
  int label = 0;
};

template <class T>
struct ItemResult {
  Tensor<T> loss;
  bool correct = false;
};

template <class T>
ItemResult<T> item_loss(const ReadingModel<T>& model, const PreparedExample& ex, const TokenizedText& context,
                        const TokenizedText& question, const TokenizedText* answer, const StreamItem& item,
                        bool training, Rng& rng) {
  switch (model.config().mode) {
    case Mode::Span: {
      auto out = model.span_forward(context, question);
      const auto [gs, ge] = *ex.gold_span;
      const auto pred = decode_span(out, model.config().max_span);
      return {span_loss(out, gs, ge), pred.start == gs && pred.end == ge};
    }
    case Mode::OpenEnded: {
      auto out = model.classify_forward(context, question);
      const auto gold = static_cast<std::size_t>(ex.gold_class);
      const auto p = out.p.data();
      const bool ok = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == gold;
      return {cross_entropy_logits(out.logits, gold), ok};
    }
    case Mode::MultipleChoice: {
      auto e = model.choice_logits(context, question, {*answer}, training, rng).front();
      const bool ok = (e.item() > T(0)) == (item.label == 1);
      return {binary_logistic_loss(e, item.label), ok};
    }
  }
  throw ConfigError("unknown mode");
}

// Pads the batch's contexts together and its query-role sequences together,
// then returns the summed loss tensor.
template <class T>
Tensor<T> batch_loss(const ReadingModel<T>& model, const std::vector<PreparedExample>& data,
                     const std::vector<StreamItem>& items, bool training, Rng& rng, std::size_t& correct) {
  std::vector<TokenizedText> contexts, questions, answers;
  for (const auto& it : items) {
    contexts.push_back(data[it.example].context);
    questions.push_back(data[it.example].question);
    if (model.config().mode == Mode::MultipleChoice) answers.push_back(data[it.example].choices.at(it.choice));
  }
  std::vector<TokenizedText*> cgroup, qgroup;
  for (auto& c : contexts) cgroup.push_back(&c);
  for (auto& q : questions) qgroup.push_back(&q);
  for (auto& a : answers) qgroup.push_back(&a);
  pad_group(cgroup);
  pad_group(qgroup);
  Tensor<T> total;
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto r = item_loss(model, data[items[k].example], contexts[k], questions[k], answers.empty() ? nullptr : &answers[k],
                       items[k], training, rng);
    correct += r.correct ? 1 : 0;
    total = total.defined() ? add(total, r.loss) : r.loss;
  }
  return total;
}

inline std::vector<StreamItem> evaluation_items(const std::vector<PreparedExample>& data, Mode mode) {
  std::vector<StreamItem> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].trainable(mode)) continue;
    if (mode == Mode::MultipleChoice) {
      for (std::size_t c = 0; c < data[i].choices.size(); ++c)
        items.push_back({i, c, c == *data[i].source.correct_index ? 1 : 0});
    } else {
      items.push_back({i, 0, 0});
    }
  }
  return items;
}

}  // namespace detail

// Mean loss over the items that carry a target, without dropout.
template <class T>
double mean_loss(const ReadingModel<T>& model, const std::vector<PreparedExample>& data) {
  const auto items = detail::evaluation_items(data, model.config().mode);
  if (items.empty()) return 0.0;
  Rng rng(0);
  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& it : items) total += static_cast<double>(detail::batch_loss(model, data, {it}, false, rng, correct).item());
  return total / static_cast<double>(items.size());
}

// Mini-batch ADAM training. `on_improve(epoch)` fires whenever the
// selection metric (validation top-1, or train top-1 without a validation
// set) strictly improves; callers save checkpoints there.
template <class T>
TrainResult train(ReadingModel<T>& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>* val_set, const TrainConfig& cfg,
                  const AnswerClasses* classes = nullptr,
                  const std::function<void(std::size_t)>& on_improve = {}) {
  const Mode mode = model.config().mode;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (train_set[i].trainable(mode)) usable.push_back(i);
  if (usable.empty()) throw DataError("training set has no example with a usable target");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be at least 1");

  auto state = make_optimizer_state(model.params(), cfg.adam);
  Rng rng(cfg.seed);
  TrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<detail::StreamItem> stream;
    for (std::size_t i : usable) {
      if (mode == Mode::MultipleChoice) {
        for (const auto& t : sample_negatives(train_set[i].source, rng)) stream.push_back({i, t.choice, t.label});
      } else {
        stream.push_back({i, 0, 0});
      }
    }
    rng.shuffle(stream);

    const double lr = lr_at(cfg.schedule, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < stream.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(stream.size(), start + cfg.batch_size);
      std::vector<detail::StreamItem> items(stream.begin() + static_cast<std::ptrdiff_t>(start),
                                            stream.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor<T> total = detail::batch_loss(model, train_set, items, true, rng, correct);
      const double batch_sum = static_cast<double>(total.item());
      if (!std::isfinite(batch_sum)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                            " (first example " + train_set[items.front().example].source.id + ")");
      }
      loss_sum += batch_sum;
      model.params().zero_grad();
      backward(scale(total, T(1) / static_cast<T>(items.size())));
      clip_grad_norm(model.params(), cfg.clip_norm);
      adam_step(model.params(), state, lr);
      ++result.steps;
    }

    double train_top1 = static_cast<double>(correct) / static_cast<double>(stream.size());
    if (cfg.evaluate_train) {
      std::vector<PreparedExample> subset;
      for (std::size_t i : usable) subset.push_back(train_set[i]);
      train_top1 = evaluate(model, subset, mode, classes).top1;
    }
    result.trace.push_back({epoch, "train", loss_sum / static_cast<double>(stream.size()), train_top1});
    double metric = train_top1;
    if (val_set && !val_set->empty()) {
      const double val_loss = mean_loss(model, *val_set);
      metric = evaluate(model, *val_set, mode, classes).top1;
      result.trace.push_back({epoch, "val", val_loss, metric});
    }
    result.epochs_run = epoch + 1;
    if (metric > result.best_top1) {
      result.best_top1 = metric;
      result.best_epoch = epoch;
      if (on_improve) on_improve(epoch);
    }
    if (cfg.evaluate_train && train_top1 >= cfg.stop_at_train_top1) break;
  }
  return result;
}

}  // namespace rcvqa

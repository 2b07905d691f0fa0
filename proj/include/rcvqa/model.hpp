#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/cq_attention.hpp"
#include "rcvqa/embedding.hpp"
#include "rcvqa/encoder.hpp"
#include "rcvqa/glove.hpp"
#include "rcvqa/heads.hpp"
#include "rcvqa/params.hpp"
#include "rcvqa/vocab.hpp"

namespace rcvqa {

enum class Mode { OpenEnded, MultipleChoice, Span };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::OpenEnded: return "open_ended";
    case Mode::MultipleChoice: return "multiple_choice";
    case Mode::Span: return "span";
  }
  return "span";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "open_ended") return Mode::OpenEnded;
  if (s == "multiple_choice") return Mode::MultipleChoice;
  if (s == "span") return Mode::Span;
  throw ConfigError("unknown mode \"" + std::string(s) + "\" (expected open_ended, multiple_choice or span)");
}

struct ModelConfig {
  Mode mode = Mode::Span;
  std::string profile = "desk";
  std::size_t word_dim = 16;
  std::size_t char_dim = 8;
  std::size_t max_word_len = 16;
  std::size_t d = 32;
  EncoderConfig embedding_encoder{32, 4, 4, 7, 1, 32};
  EncoderConfig model_encoder{32, 4, 2, 7, 2, 32};
  std::size_t num_classes = 0;  // open-ended only
  std::size_t mc_hidden = 32;
  double mc_dropout = 0.5;
  // Layer-normalize the four pooled vectors before the choice MLP. The raw
  // residual stream carries a large offset shared by every choice.
  bool mc_normalize_pooled = true;
  // Multiply the embedding block output by sqrt(d) before the encoder so
  // token identity is not swamped by the unit-amplitude positional encoding.
  bool scale_embeddings = true;
  std::size_t max_span = 30;
  std::size_t context_limit = 500;
  std::size_t question_limit = 50;
  bool share_query_highway = true;
  // Alternate reading of the parameter-sharing sentence: model-encoder
  // passes reuse the embedding encoder instead of a dedicated set.
  bool model_encoder_shares_embedding_encoder = false;
  bool finetune_word_embeddings = false;

  static ModelConfig desk(Mode mode) {
    ModelConfig c;
    c.mode = mode;
    return c;
  }

  static ModelConfig full(Mode mode) {
    ModelConfig c;
    c.mode = mode;
    c.profile = "full";
    c.word_dim = 300;
    c.char_dim = 64;
    c.d = 128;
    c.embedding_encoder = {128, 4, 4, 7, 1, 128};
    c.model_encoder = {128, 4, 2, 7, 7, 128};
    c.mc_hidden = 128;
    return c;
  }

  static ModelConfig for_profile(std::string_view profile, Mode mode) {
    if (profile == "desk") return desk(mode);
    if (profile == "full") return full(mode);
    throw ConfigError("unknown profile \"" + std::string(profile) + "\" (expected desk or full)");
  }

  void validate() const {
    if (word_dim == 0 || char_dim == 0 || max_word_len == 0 || d == 0) throw ConfigError("model widths must be positive");
    if (embedding_encoder.d != d || model_encoder.d != d) throw ConfigError("encoder widths must equal the model width");
    embedding_encoder.validate();
    model_encoder.validate();
    if (mode == Mode::OpenEnded && num_classes == 0) throw ConfigError("open-ended mode needs at least one answer class");
    if (!(mc_dropout >= 0.0 && mc_dropout < 1.0)) throw ConfigError("mc_dropout must lie in [0, 1)");
    if (max_span == 0 || context_limit == 0 || question_limit == 0) throw ConfigError("span and length limits must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"mode", std::string(mode_name(c.mode))},
       {"profile", c.profile},
       {"word_dim", c.word_dim},
       {"char_dim", c.char_dim},
       {"max_word_len", c.max_word_len},
       {"d", c.d},
       {"embedding_encoder", c.embedding_encoder},
       {"model_encoder", c.model_encoder},
       {"num_classes", c.num_classes},
       {"mc_hidden", c.mc_hidden},
       {"mc_dropout", c.mc_dropout},
       {"mc_normalize_pooled", c.mc_normalize_pooled},
       {"scale_embeddings", c.scale_embeddings},
       {"max_span", c.max_span},
       {"context_limit", c.context_limit},
       {"question_limit", c.question_limit},
       {"share_query_highway", c.share_query_highway},
       {"model_encoder_shares_embedding_encoder", c.model_encoder_shares_embedding_encoder},
       {"finetune_word_embeddings", c.finetune_word_embeddings}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.mode = parse_mode(j.value("mode", std::string(mode_name(c.mode))));
  c.profile = j.value("profile", c.profile);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.char_dim = j.value("char_dim", c.char_dim);
  c.max_word_len = j.value("max_word_len", c.max_word_len);
  c.d = j.value("d", c.d);
  if (j.contains("embedding_encoder")) c.embedding_encoder = j["embedding_encoder"].get<EncoderConfig>();
  if (j.contains("model_encoder")) c.model_encoder = j["model_encoder"].get<EncoderConfig>();
  c.num_classes = j.value("num_classes", c.num_classes);
  c.mc_hidden = j.value("mc_hidden", c.mc_hidden);
  c.mc_dropout = j.value("mc_dropout", c.mc_dropout);
  c.mc_normalize_pooled = j.value("mc_normalize_pooled", c.mc_normalize_pooled);
  c.scale_embeddings = j.value("scale_embeddings", c.scale_embeddings);
  c.max_span = j.value("max_span", c.max_span);
  c.context_limit = j.value("context_limit", c.context_limit);
  c.question_limit = j.value("question_limit", c.question_limit);
  c.share_query_highway = j.value("share_query_highway", c.share_query_highway);
  c.model_encoder_shares_embedding_encoder =
      j.value("model_encoder_shares_embedding_encoder", c.model_encoder_shares_embedding_encoder);
  c.finetune_word_embeddings = j.value("finetune_word_embeddings", c.finetune_word_embeddings);
}

// The reading-comprehension network: embedding block, embedding encoder,
// context-question attention, a model encoder applied three times, and the
// head for the configured mode.
template <class T>
class ReadingModel {
 public:
  ReadingModel(ModelConfig config, const Vocabulary& vocab, EmbeddingTable<T> words, std::uint64_t seed)
      : config_(std::move(config)), words_(std::move(words)) {
    config_.validate();
    if (words_.size() != vocab.num_words() || words_.dim() != config_.word_dim) {
      throw DimensionError("word table " + shape_str(words_.rows.shape()) + " does not match vocabulary of " +
                           std::to_string(vocab.num_words()) + " words and width " + std::to_string(config_.word_dim));
    }
    Rng rng(seed);
    const std::size_t d = config_.d;
    words_.rows = params_.add("embedding.words", words_.rows);
    chars_ = make_char_table<T>(vocab, config_.char_dim, rng);
    chars_.rows = params_.add("embedding.chars", chars_.rows);
    const std::size_t in_width = config_.word_dim + config_.char_dim;
    highway_ = make_highway(params_, "highway", in_width, d, rng);
    if (!config_.share_query_highway) query_highway_ = make_highway(params_, "query_highway", in_width, d, rng);
    embedding_encoder_ = make_encoder(params_, "embedding_encoder", config_.embedding_encoder, rng);
    cq_ = make_cq_attention(params_, "cq_attention", d, rng);
    if (!config_.model_encoder_shares_embedding_encoder) {
      model_encoder_ = make_encoder(params_, "model_encoder", config_.model_encoder, rng);
    }
    switch (config_.mode) {
      case Mode::Span:
        span_ = make_span_head(params_, "span_head", d, rng);
        break;
      case Mode::OpenEnded:
        classifier_ = make_classification_head(params_, "class_head", d, config_.num_classes, rng);
        break;
      case Mode::MultipleChoice:
        choice_ = make_multichoice_head(params_, "choice_head", d, config_.mc_hidden, rng);
        if (config_.mc_normalize_pooled) pool_norm_ = make_layer_norm(params_, "choice_head.pool_norm", d);
        break;
    }
  }

  ReadingModel(const ReadingModel&) = delete;
  ReadingModel& operator=(const ReadingModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  const EmbeddingTable<T>& word_table() const { return words_; }
  const EmbeddingTable<T>& char_table() const { return chars_; }

  // Embedding block plus embedding encoder: n x d.
  Tensor<T> encode_sequence(const TokenizedText& text, bool query_role) const {
    const auto& hw = (query_role && !config_.share_query_highway) ? query_highway_ : highway_;
    Tensor<T> x = highway(embed_tokens(text, words_, chars_), hw);
    if (config_.scale_embeddings) x = scale(x, static_cast<T>(std::sqrt(static_cast<double>(config_.d))));
    return encoder_forward(x, text.mask(), embedding_encoder_);
  }

  // Attention between an encoded context and an encoded query, then three
  // model-encoder passes.
  ModelEncoderOutputs<T> model_encode(const Tensor<T>& context, const Mask& context_mask, const Tensor<T>& query,
                                      const Mask& query_mask) const {
    const auto& enc = config_.model_encoder_shares_embedding_encoder ? embedding_encoder_ : model_encoder_;
    auto att = cq_attention(context, query, context_mask, query_mask, cq_);
    ModelEncoderOutputs<T> out;
    out.mask = context_mask;
    out.m0 = encoder_forward(att.projected, context_mask, enc);
    out.m1 = encoder_forward(out.m0, context_mask, enc);
    out.m2 = encoder_forward(out.m1, context_mask, enc);
    return out;
  }

  ModelEncoderOutputs<T> forward_pair(const TokenizedText& context, const TokenizedText& query) const {
    return model_encode(encode_sequence(context, false), context.mask(), encode_sequence(query, true), query.mask());
  }

  SpanHeadOutput<T> span_forward(const TokenizedText& context, const TokenizedText& question) const {
    require_mode(Mode::Span);
    return span_head(forward_pair(context, question), span_);
  }

  ClassificationOutput<T> classify_forward(const TokenizedText& context, const TokenizedText& question) const {
    require_mode(Mode::OpenEnded);
    return classification_head(forward_pair(context, question), classifier_);
  }

  // Pooled [v0, v1] of one query-role pass against an encoded context.
  std::pair<Tensor<T>, Tensor<T>> pooled_pass(const Tensor<T>& context, const Mask& context_mask,
                                              const TokenizedText& query) const {
    auto m = model_encode(context, context_mask, encode_sequence(query, true), query.mask());
    auto v0 = masked_mean_rows(m.m0, context_mask), v1 = masked_mean_rows(m.m1, context_mask);
    if (config_.mode == Mode::MultipleChoice && config_.mc_normalize_pooled) {
      return {layer_norm(v0, pool_norm_.gain, pool_norm_.bias), layer_norm(v1, pool_norm_.gain, pool_norm_.bias)};
    }
    return {v0, v1};
  }

  // Pre-sigmoid scores e for each candidate answer. The question pass is
  // shared; each answer runs its own query-role pass over the same context.
  std::vector<Tensor<T>> choice_logits(const TokenizedText& context, const TokenizedText& question,
                                       const std::vector<TokenizedText>& answers, bool training, Rng& rng) const {
    require_mode(Mode::MultipleChoice);
    Tensor<T> c = encode_sequence(context, false);
    const Mask cmask = context.mask();
    auto [v0q, v1q] = pooled_pass(c, cmask, question);
    std::vector<Tensor<T>> out;
    for (const auto& answer : answers) {
      auto [v0a, v1a] = pooled_pass(c, cmask, answer);
      out.push_back(multichoice_logit(v0q, v1q, v0a, v1a, choice_, training, rng, config_.mc_dropout));
    }
    return out;
  }

 private:
  void require_mode(Mode m) const {
    if (config_.mode != m) {
      throw ConfigError("model was built for " + std::string(mode_name(config_.mode)) + ", not " +
                        std::string(mode_name(m)));
    }
  }

  ModelConfig config_;
  ParameterStore<T> params_;
  EmbeddingTable<T> words_;
  EmbeddingTable<T> chars_;
  HighwayParams<T> highway_;
  HighwayParams<T> query_highway_;
  EncoderParams<T> embedding_encoder_;
  CQAttentionParams<T> cq_;
  EncoderParams<T> model_encoder_;
  SpanHeadParams<T> span_;
  ClassificationParams<T> classifier_;
  MultiChoiceParams<T> choice_;
  LayerNormParams<T> pool_norm_;
};

}  // namespace rcvqa

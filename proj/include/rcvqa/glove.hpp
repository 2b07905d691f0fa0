#pragma once

#include <cerrno>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rcvqa/embedding.hpp"
#include "rcvqa/rng.hpp"
#include "rcvqa/vocab.hpp"

namespace rcvqa {

struct EmbeddingLoadStats {
  std::size_t covered = 0;     // vocabulary words found in the file
  std::size_t random_rows = 0; // rows initialized at random (includes UNK)
  std::size_t lines = 0;
};

inline constexpr double kEmbeddingInitRange = 0.05;

// Word table from a GloVe text file (word followed by `dim` reals per line).
// Words absent from the file and UNK get U(-0.05, 0.05) rows; PAD is zero.
// Only UNK is trainable unless finetune_words is set. An empty path means
// no pre-trained vectors.
template <class T>
EmbeddingTable<T> load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                  std::uint64_t seed, bool finetune_words = false,
                                  EmbeddingLoadStats* stats = nullptr) {
  if (dim == 0) throw ConfigError("embedding dimension must be at least 1");
  const std::size_t rows = vocab.num_words();
  std::vector<T> values(rows * dim, T(0));
  std::vector<std::uint8_t> filled(rows, 0);
  EmbeddingLoadStats local;

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file " + path);
    std::string line;
    std::vector<std::string> fields;
    while (std::getline(in, line)) {
      ++local.lines;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(' ') == std::string::npos) continue;
      fields.clear();
      std::istringstream ss(line);
      for (std::string f; ss >> f;) fields.push_back(std::move(f));
      if (fields.size() != dim + 1) {
        throw ParseError(path + ": line " + std::to_string(local.lines) + ": expected " + std::to_string(dim + 1) +
                         " fields, found " + std::to_string(fields.size()));
      }
      const std::size_t id = vocab.word_id(fields[0]);
      if (id == Vocabulary::kUnk || id == Vocabulary::kPad || filled[id]) continue;
      for (std::size_t k = 0; k < dim; ++k) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(fields[k + 1].c_str(), &end);
        if (end == fields[k + 1].c_str() || *end != '\0' || errno == ERANGE) {
          throw ParseError(path + ": line " + std::to_string(local.lines) + ": bad number \"" + fields[k + 1] + "\"");
        }
        values[id * dim + k] = static_cast<T>(v);
      }
      filled[id] = 1;
      ++local.covered;
    }
  }

  Rng rng(seed);
  for (std::size_t id = 0; id < rows; ++id) {
    if (id == Vocabulary::kPad || filled[id]) continue;
    for (std::size_t k = 0; k < dim; ++k)
      values[id * dim + k] = static_cast<T>(rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange));
    ++local.random_rows;
  }

  EmbeddingTable<T> table{Tensor<T>({rows, dim}, std::move(values)), std::vector<std::uint8_t>(rows, finetune_words ? 1 : 0)};
  table.trainable[Vocabulary::kUnk] = 1;
  table.trainable[Vocabulary::kPad] = 0;
  if (stats) *stats = local;
  return table;
}

// Character table: every row random and trainable except PAD.
template <class T>
EmbeddingTable<T> make_char_table(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  const std::size_t rows = vocab.num_chars();
  std::vector<T> values(rows * dim, T(0));
  for (std::size_t id = 1; id < rows; ++id)
    for (std::size_t k = 0; k < dim; ++k) values[id * dim + k] = static_cast<T>(rng.uniform(-0.5, 0.5));
  EmbeddingTable<T> table{Tensor<T>({rows, dim}, std::move(values)), std::vector<std::uint8_t>(rows, 1)};
  table.trainable[Vocabulary::kPad] = 0;
  return table;
}

}  // namespace rcvqa

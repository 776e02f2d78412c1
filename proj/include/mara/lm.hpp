#pragma once

#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "mara/corpus.hpp"

namespace mara {

/// Add-k smoothed bigram language model over a fixed vocabulary.
///
/// P(w | v) = (c(v, w) + k) / (c(v, .) + k |V|) where c(v, .) counts bigrams
/// that start with v, so every conditional sums to one. The first token of a
/// sequence is scored with the add-k unigram distribution.
class BigramLM {
 public:
  explicit BigramLM(std::size_t vocab_size, double add_k = 0.1);

  static BigramLM train(const Corpus& corpus, double add_k = 0.1);

  void add_sequence(std::span<const TokenId> tokens);

  double log_prob(TokenId prev, TokenId next) const;
  double log_prob_first(TokenId token) const;
  /// Summed negative log-likelihood of the whole sequence.
  double nll(std::span<const TokenId> tokens) const;
  /// exp(mean NLL). Throws on an empty sequence.
  double perplexity(std::span<const TokenId> tokens) const;

  std::size_t vocab_size() const { return vocab_size_; }
  double add_k() const { return add_k_; }

  void save(const std::filesystem::path& path) const;
  static BigramLM load(const std::filesystem::path& path);

 private:
  static std::uint64_t key(TokenId a, TokenId b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

  std::size_t vocab_size_;
  double add_k_;
  std::uint64_t total_ = 0;
  std::vector<std::uint64_t> unigram_;
  std::vector<std::uint64_t> context_;
  std::unordered_map<std::uint64_t, std::uint64_t> bigram_;
};

}  // namespace mara

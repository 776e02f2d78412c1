#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mara/corpus.hpp"

namespace mara {

struct SyntheticParams {
  std::uint64_t seed = 7;
  std::size_t n_docs = 500;
  std::size_t n_queries = 20;
  std::size_t n_ood_queries = 20;
  std::size_t n_topics = 10;
  std::size_t vocab_size = 1000;
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 8;
  std::size_t min_sentence_len = 6;
  std::size_t max_sentence_len = 14;
};

/// Generated benchmark. Topic -1 marks the shared background pool.
struct SyntheticBenchmark {
  std::vector<TextRecord> documents;
  std::vector<TextRecord> queries;
  std::vector<int> query_topics;
  /// Queries over each topic's tail terms, disjoint from `queries`.
  std::vector<TextRecord> ood_queries;
  Qrels qrels;
  /// word -> synonym words (members of the same synonym group)
  std::vector<std::pair<std::string, std::vector<std::string>>> synonyms;
};

/// Topic-structured corpus: each topic owns a disjoint term pool, documents
/// mix one to three topics plus background words, and queries draw 2-4
/// terms from a single topic. Pure function of `params`.
SyntheticBenchmark generate_synthetic_corpus(const SyntheticParams& params);

/// Count of query-term occurrences in the document, clipped to [0, 3].
int relevance_grade(const std::vector<std::string>& query_terms, const std::vector<std::string>& doc_words);

/// Deterministic pronounceable pseudo-word for a vocabulary slot.
std::string synthetic_word(std::size_t index);

void write_query_topics(const std::filesystem::path& path, const SyntheticBenchmark& bench);
/// query id -> topic, as written by write_query_topics.
std::map<std::string, int> read_query_topics(const std::filesystem::path& path);

}  // namespace mara

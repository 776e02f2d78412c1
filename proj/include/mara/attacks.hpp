#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mara/corpus.hpp"
#include "mara/lm.hpp"
#include "mara/ranker.hpp"

namespace mara {

/// Perturbation granularity; the numeric values index confidence columns.
enum class Granularity : std::uint8_t { Word = 0, Phrase = 1, Sentence = 2, None = 3 };

inline constexpr std::size_t kNumLabels = 4;

char granularity_code(Granularity g);
Granularity granularity_from_code(char c);

struct LengthWindow {
  std::size_t min = 0;
  std::size_t max = 0;
  bool contains(std::size_t n) const { return n >= min && n <= max; }
};

/// {1} for words, [2,5] for phrases, [6,10] for sentences.
LengthWindow length_window(Granularity g);

struct PerturbationSpan {
  Granularity granularity = Granularity::Word;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  double confidence = 0.0;

  std::size_t length() const { return end - start; }
  friend bool operator==(const PerturbationSpan& a, const PerturbationSpan& b) {
    return a.granularity == b.granularity && a.start == b.start && a.end == b.end;
  }
};

struct PerturbationCandidate {
  PerturbationSpan span;
  std::vector<TokenId> replacement;
  bool no_op = false;

  /// |p|: number of manipulated terms.
  std::size_t length() const { return replacement.size(); }
};

class SynonymTable {
 public:
  /// Deduplicates, and drops self-synonyms and the unknown token.
  void add(TokenId token, std::span<const TokenId> synonyms);
  const std::vector<TokenId>& synonyms(TokenId token) const;
  std::size_t size() const { return table_.size(); }

  static SynonymTable from_words(const std::vector<std::pair<std::string, std::vector<std::string>>>& rows,
                                 const Vocabulary& vocab);
  /// "token<TAB>syn1,syn2,..." lines.
  static SynonymTable load(const std::filesystem::path& path, const Vocabulary& vocab);
  void save(const std::filesystem::path& path, const Vocabulary& vocab) const;

 private:
  std::unordered_map<TokenId, std::vector<TokenId>> table_;
};

class PhraseTable {
 public:
  struct Entry {
    std::vector<TokenId> tokens;
    std::uint64_t frequency = 0;
  };

  PhraseTable() = default;
  explicit PhraseTable(std::vector<Entry> entries, std::uint64_t min_freq = 1);

  /// Corpus n-grams of length 2-5 occurring at least `min_freq` times,
  /// most frequent first (ties by token sequence).
  static PhraseTable mine(const Corpus& corpus, std::uint64_t min_freq = 3);
  /// "phrase<TAB>freq" lines.
  static PhraseTable load(const std::filesystem::path& path, const Vocabulary& vocab, std::uint64_t min_freq = 1);
  void save(const std::filesystem::path& path, const Vocabulary& vocab) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Entry indices by (query-term overlap desc, frequency desc, tokens asc).
  std::vector<std::size_t> rank_for_query(std::span<const TokenId> query) const;

 private:
  std::vector<Entry> entries_;
};

/// Scores a fixed (query, document) pair under span substitutions with
/// O(m) incremental mean updates.
class SubstitutionScorer {
 public:
  SubstitutionScorer(const SurrogateRanker& ranker, std::span<const TokenId> query, std::span<const TokenId> doc);

  double base_score() const { return base_score_; }
  double score_with(std::size_t start, std::size_t end, std::span<const TokenId> replacement) const;
  /// Scores every replacement of the same span in one batch.
  std::vector<double> score_batch(std::size_t start, std::size_t end,
                                  const std::vector<std::vector<TokenId>>& replacements) const;

  const SurrogateRanker& ranker() const { return ranker_; }
  std::span<const double> query_mean() const { return query_mean_; }
  std::span<const double> doc_sum() const { return doc_sum_; }
  std::span<const TokenId> doc() const { return doc_; }

 private:
  const SurrogateRanker& ranker_;
  std::span<const TokenId> doc_;
  std::vector<double> query_mean_;
  std::vector<double> doc_sum_;
  double base_score_ = 0.0;
};

PerturbationCandidate word_substitute(const SurrogateRanker& r, const Query& q, const Document& d,
                                      const PerturbationSpan& span, const SynonymTable& syn, std::size_t top_n = 20);

PerturbationCandidate phrase_substitute(const SurrogateRanker& r, const Query& q, const Document& d,
                                        const PerturbationSpan& span, const PhraseTable& phrases,
                                        std::size_t top_n = 20);

/// Top `size` vocabulary tokens by alignment of their embedding with the
/// document-side score gradient (unknown token excluded; ties by lower id).
std::vector<TokenId> salient_shortlist(const SurrogateRanker& r, const Query& q, const Document& d, std::size_t size);

/// Greedy left-to-right trigger of exactly `len_target` tokens. Each step
/// picks the shortlist token maximising
///   score_gain - fluency_weight * (-log P(token | previous token)),
/// where score_gain is the surrogate score change from appending the token
/// to the trigger prefix. An infinite weight yields the LM's greedy path.
PerturbationCandidate sentence_trigger(const SurrogateRanker& r, const Query& q, const Document& d,
                                       const PerturbationSpan& span, const BigramLM& lm, std::size_t len_target,
                                       double fluency_weight, std::size_t shortlist_size = 200);

struct AttackTables {
  const SynonymTable* synonyms = nullptr;
  const PhraseTable* phrases = nullptr;
  const BigramLM* lm = nullptr;
};

struct GeneratorConfig {
  std::size_t top_n = 20;
  std::size_t shortlist = 200;
  double fluency_weight = 0.02;
};

/// One candidate per span, in span order, from the matching generator.
std::vector<PerturbationCandidate> generate_candidates(const SurrogateRanker& r, const Query& q, const Document& d,
                                                       std::span<const PerturbationSpan> spans,
                                                       const AttackTables& tables, const GeneratorConfig& cfg);

/// Replaces [span.start, span.end) of `tokens` with `replacement`.
std::vector<TokenId> splice(std::span<const TokenId> tokens, const PerturbationSpan& span,
                            std::span<const TokenId> replacement);

}  // namespace mara

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mara/common.hpp"

namespace mara {

using TokenId = std::uint32_t;
inline constexpr TokenId kUnknownToken = 0;
inline constexpr std::size_t kDefaultMaxDocLen = 512;

/// Half-open token range [start, end) of one sentence.
struct SentenceBound {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const SentenceBound&, const SentenceBound&) = default;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<SentenceBound> sentence_bounds;
};

struct Query {
  std::string id;
  std::string text;
  std::vector<TokenId> tokens;
};

/// Token <-> id bijection with corpus frequencies. Id 0 is the reserved
/// unknown token; real tokens get dense ids in first-seen order.
class Vocabulary {
 public:
  Vocabulary();

  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t count(TokenId id) const { return counts_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercased, punctuation-stripped words with sentence ends detected from
/// terminal punctuation (. ! ?) before stripping.
struct SplitText {
  std::vector<std::string> words;
  std::vector<SentenceBound> sentence_bounds;
};

SplitText split_text(std::string_view text);

struct TokenizedText {
  std::vector<TokenId> tokens;
  std::vector<SentenceBound> sentence_bounds;
};

TokenizedText tokenize(std::string_view text, const Vocabulary& vocab);

/// Rejoins token strings with single spaces.
std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);

/// Clips sentence bounds to the first `len` tokens, dropping empty ones.
std::vector<SentenceBound> clip_bounds(const std::vector<SentenceBound>& bounds, std::size_t len);

struct TextRecord {
  std::string id;
  std::string text;
};

class Corpus {
 public:
  Corpus() = default;

  const std::vector<Document>& documents() const { return docs_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Document& document(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::size_t size() const { return docs_.size(); }

  friend Corpus build_corpus(const std::vector<TextRecord>& records, std::size_t max_doc_len);

 private:
  std::vector<Document> docs_;
  Vocabulary vocab_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Builds vocabulary and tokenized documents from in-memory records.
/// Throws on empty text or duplicate id.
Corpus build_corpus(const std::vector<TextRecord>& records, std::size_t max_doc_len = kDefaultMaxDocLen);

/// Reads JSONL records with `id` and `text` fields.
std::vector<TextRecord> read_jsonl_records(const std::filesystem::path& path);
void write_jsonl_records(const std::filesystem::path& path, const std::vector<TextRecord>& records);

Corpus ingest_corpus(const std::filesystem::path& path, std::size_t max_doc_len = kDefaultMaxDocLen);

Query make_query(const TextRecord& record, const Vocabulary& vocab);
std::vector<Query> ingest_queries(const std::filesystem::path& path, const Vocabulary& vocab);

/// qrels: query_id -> doc_id -> grade. Absent pairs are grade 0.
using Qrels = std::map<std::string, std::map<std::string, int>>;

Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);
int grade_of(const Qrels& qrels, std::string_view query_id, std::string_view doc_id);

}  // namespace mara

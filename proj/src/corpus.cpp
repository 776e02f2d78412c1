#include "mara/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mara {

Vocabulary::Vocabulary() {
  tokens_.push_back("<unk>");
  counts_.push_back(0);
  index_.emplace("<unk>", kUnknownToken);
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) {
    ++counts_[it->second];
    return it->second;
  }
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  counts_.push_back(1);
  index_.emplace(std::string(token), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknownToken : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("token id out of range: " + std::to_string(id));
  return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary: " + path.string());
  out << "mara-vocab 1 " << tokens_.size() << '\n';
  for (std::size_t i = 1; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocabulary: " + path.string());
  std::string magic;
  int version = 0;
  std::size_t n = 0;
  in >> magic >> version >> n;
  if (magic != "mara-vocab" || version != 1) throw Error("not a vocabulary file: " + path.string());
  Vocabulary v;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("malformed vocabulary line: " + line);
    const TokenId id = v.add(line.substr(0, tab));
    v.counts_[id] = std::stoull(line.substr(tab + 1));
  }
  if (v.size() != n) throw Error("vocabulary size mismatch in " + path.string());
  return v;
}

namespace {

bool ends_sentence(std::string_view raw) {
  std::size_t end = raw.size();
  while (end > 0 && (raw[end - 1] == '"' || raw[end - 1] == '\'' || raw[end - 1] == ')' || raw[end - 1] == ']'))
    --end;
  if (end == 0) return false;
  const char c = raw[end - 1];
  return c == '.' || c == '!' || c == '?';
}

std::string normalise_word(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    if (c < 128 && std::ispunct(c)) continue;
    out.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
  }
  return out;
}

}  // namespace

SplitText split_text(std::string_view text) {
  SplitText out;
  std::size_t sentence_start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t begin = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (begin == i) break;
    const std::string_view raw = text.substr(begin, i - begin);
    std::string word = normalise_word(raw);
    if (!word.empty()) out.words.push_back(std::move(word));
    if (ends_sentence(raw) && out.words.size() > sentence_start) {
      out.sentence_bounds.push_back({sentence_start, out.words.size()});
      sentence_start = out.words.size();
    }
  }
  if (out.words.size() > sentence_start) out.sentence_bounds.push_back({sentence_start, out.words.size()});
  return out;
}

TokenizedText tokenize(std::string_view text, const Vocabulary& vocab) {
  SplitText split = split_text(text);
  TokenizedText out;
  out.tokens.reserve(split.words.size());
  for (const auto& w : split.words) out.tokens.push_back(vocab.id(w));
  out.sentence_bounds = std::move(split.sentence_bounds);
  return out;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(tokens[i]);
  }
  return out;
}

std::vector<SentenceBound> clip_bounds(const std::vector<SentenceBound>& bounds, std::size_t len) {
  std::vector<SentenceBound> out;
  for (const auto& b : bounds) {
    if (b.start >= len) break;
    out.push_back({b.start, std::min(b.end, len)});
  }
  return out;
}

const Document& Corpus::document(std::string_view id) const { return docs_[index_of(id)]; }

std::size_t Corpus::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw Error("unknown document id: " + std::string(id));
  return it->second;
}

bool Corpus::contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

Corpus build_corpus(const std::vector<TextRecord>& records, std::size_t max_doc_len) {
  if (max_doc_len == 0) throw Error("max_doc_len must be positive");
  Corpus corpus;
  corpus.docs_.reserve(records.size());
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto& rec = records[n];
    SplitText split = split_text(rec.text);
    if (split.words.empty()) throw Error("record " + std::to_string(n + 1) + ": empty document");
    if (corpus.index_.count(rec.id)) throw Error("record " + std::to_string(n + 1) + ": duplicate id " + rec.id);
    if (split.words.size() > max_doc_len) split.words.resize(max_doc_len);
    Document doc;
    doc.id = rec.id;
    doc.text = rec.text;
    doc.tokens.reserve(split.words.size());
    for (const auto& w : split.words) doc.tokens.push_back(corpus.vocab_.add(w));
    doc.sentence_bounds = clip_bounds(split.sentence_bounds, doc.tokens.size());
    corpus.index_.emplace(rec.id, corpus.docs_.size());
    corpus.docs_.push_back(std::move(doc));
  }
  return corpus;
}

std::vector<TextRecord> read_jsonl_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TextRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.filename().string() + ":" + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(where + ": malformed line");
    if (!j.contains("id") || !j.contains("text") || !j["text"].is_string())
      throw Error(where + ": malformed line (need id and text fields)");
    TextRecord rec;
    rec.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    rec.text = j["text"].get<std::string>();
    if (split_text(rec.text).words.empty()) throw Error(where + ": empty document");
    out.push_back(std::move(rec));
  }
  return out;
}

void write_jsonl_records(const std::filesystem::path& path, const std::vector<TextRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

Corpus ingest_corpus(const std::filesystem::path& path, std::size_t max_doc_len) {
  const auto records = read_jsonl_records(path);
  try {
    return build_corpus(records, max_doc_len);
  } catch (const Error& e) {
    throw Error(path.filename().string() + ": " + e.what());
  }
}

Query make_query(const TextRecord& record, const Vocabulary& vocab) {
  Query q;
  q.id = record.id;
  q.text = record.text;
  q.tokens = tokenize(record.text, vocab).tokens;
  if (q.tokens.empty()) throw Error("query " + record.id + ": empty query");
  return q;
}

std::vector<Query> ingest_queries(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<Query> out;
  for (const auto& rec : read_jsonl_records(path)) out.push_back(make_query(rec, vocab));
  return out;
}

Qrels read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Qrels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string qid, did;
    int grade = 0;
    if (!(ss >> qid)) continue;
    if (!(ss >> did >> grade)) throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": malformed qrels line");
    q[qid][did] = grade;
  }
  return q;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [qid, docs] : qrels)
    for (const auto& [did, g] : docs) out << qid << ' ' << did << ' ' << g << '\n';
}

int grade_of(const Qrels& qrels, std::string_view query_id, std::string_view doc_id) {
  auto it = qrels.find(std::string(query_id));
  if (it == qrels.end()) return 0;
  auto jt = it->second.find(std::string(doc_id));
  return jt == it->second.end() ? 0 : jt->second;
}

}  // namespace mara

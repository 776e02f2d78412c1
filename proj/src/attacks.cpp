#include "mara/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mara/kernels.hpp"

namespace mara {

char granularity_code(Granularity g) {
  switch (g) {
    case Granularity::Word: return 'W';
    case Granularity::Phrase: return 'P';
    case Granularity::Sentence: return 'S';
    case Granularity::None: return 'N';
  }
  return '?';
}

Granularity granularity_from_code(char c) {
  switch (c) {
    case 'W': case 'w': return Granularity::Word;
    case 'P': case 'p': return Granularity::Phrase;
    case 'S': case 's': return Granularity::Sentence;
    case 'N': case 'n': return Granularity::None;
    default: throw Error(std::string("unknown granularity code '") + c + "'");
  }
}

LengthWindow length_window(Granularity g) {
  switch (g) {
    case Granularity::Word: return {1, 1};
    case Granularity::Phrase: return {2, 5};
    case Granularity::Sentence: return {6, 10};
    case Granularity::None: return {0, 0};
  }
  return {0, 0};
}

void SynonymTable::add(TokenId token, std::span<const TokenId> synonyms) {
  auto& list = table_[token];
  for (TokenId s : synonyms) {
    if (s == token || s == kUnknownToken) continue;
    if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
  }
  if (list.empty()) table_.erase(token);
}

const std::vector<TokenId>& SynonymTable::synonyms(TokenId token) const {
  static const std::vector<TokenId> kEmpty;
  auto it = table_.find(token);
  return it == table_.end() ? kEmpty : it->second;
}

SynonymTable SynonymTable::from_words(const std::vector<std::pair<std::string, std::vector<std::string>>>& rows,
                                      const Vocabulary& vocab) {
  SynonymTable t;
  for (const auto& [word, syns] : rows) {
    const TokenId id = vocab.id(word);
    if (id == kUnknownToken) continue;
    std::vector<TokenId> ids;
    for (const auto& s : syns) ids.push_back(vocab.id(s));
    t.add(id, ids);
  }
  return t;
}

SynonymTable SynonymTable::load(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synonym table " + path.string());
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": expected token<TAB>synonyms");
    std::vector<std::string> syns;
    std::stringstream ss(line.substr(tab + 1));
    std::string s;
    while (std::getline(ss, s, ','))
      if (!s.empty()) syns.push_back(s);
    rows.emplace_back(line.substr(0, tab), std::move(syns));
  }
  return from_words(rows, vocab);
}

void SynonymTable::save(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  std::vector<TokenId> keys;
  for (const auto& [k, v] : table_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (TokenId k : keys) {
    out << vocab.token(k) << '\t';
    const auto& v = table_.at(k);
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << vocab.token(v[i]);
    out << '\n';
  }
}

PhraseTable::PhraseTable(std::vector<Entry> entries, std::uint64_t min_freq) {
  for (auto& e : entries) {
    if (!length_window(Granularity::Phrase).contains(e.tokens.size())) continue;
    if (e.frequency < min_freq) continue;
    if (std::find(e.tokens.begin(), e.tokens.end(), kUnknownToken) != e.tokens.end()) continue;
    entries_.push_back(std::move(e));
  }
  std::stable_sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.tokens < b.tokens;
  });
}

PhraseTable PhraseTable::mine(const Corpus& corpus, std::uint64_t min_freq) {
  std::map<std::vector<TokenId>, std::uint64_t> counts;
  for (const auto& d : corpus.documents())
    for (const auto& b : d.sentence_bounds)
      for (std::size_t i = b.start; i < b.end; ++i)
        for (std::size_t n = 2; n <= 5 && i + n <= b.end; ++n)
          ++counts[std::vector<TokenId>(d.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                        d.tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  std::vector<Entry> entries;
  for (auto& [tokens, c] : counts)
    if (c >= min_freq) entries.push_back({tokens, c});
  return PhraseTable(std::move(entries), min_freq);
}

PhraseTable PhraseTable::load(const std::filesystem::path& path, const Vocabulary& vocab, std::uint64_t min_freq) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open phrase table " + path.string());
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": expected phrase<TAB>freq");
    Entry e;
    e.tokens = tokenize(line.substr(0, tab), vocab).tokens;
    e.frequency = std::stoull(line.substr(tab + 1));
    entries.push_back(std::move(e));
  }
  return PhraseTable(std::move(entries), min_freq);
}

void PhraseTable::save(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : entries_) out << detokenize(e.tokens, vocab) << '\t' << e.frequency << '\n';
}

std::vector<std::size_t> PhraseTable::rank_for_query(std::span<const TokenId> query) const {
  const std::unordered_set<TokenId> qset(query.begin(), query.end());
  std::vector<std::size_t> overlap(entries_.size(), 0);
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (TokenId t : entries_[i].tokens)
      if (qset.count(t)) ++overlap[i];
  std::vector<std::size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), 0);
  // entries_ is already frequency-then-token ordered
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return overlap[a] > overlap[b]; });
  return order;
}

SubstitutionScorer::SubstitutionScorer(const SurrogateRanker& ranker, std::span<const TokenId> query,
                                       std::span<const TokenId> doc)
    : ranker_(ranker), doc_(doc), doc_sum_(ranker.dim()) {
  if (query.empty() || doc.empty()) throw Error("SubstitutionScorer: empty query or document");
  query_mean_ = ranker.mean_embedding(query);
  ranker.embedding_sum(doc, doc_sum_);
  std::vector<double> mean(doc_sum_);
  for (auto& x : mean) x /= static_cast<double>(doc.size());
  base_score_ = ranker.score_means(query_mean_, mean);
}

namespace {

void check_span(const PerturbationSpan& span, std::size_t len) {
  if (span.start >= span.end || span.end > len)
    throw Error("span [" + std::to_string(span.start) + "," + std::to_string(span.end) + ") out of bounds for length " +
                std::to_string(len));
}

// mean embedding of doc with [start,end) swapped for `replacement`
void substituted_mean(const SubstitutionScorer& s, std::size_t start, std::size_t end,
                      std::span<const TokenId> replacement, std::span<double> out) {
  const auto& r = s.ranker();
  const auto doc = s.doc();
  const std::size_t m = r.dim();
  std::copy(s.doc_sum().begin(), s.doc_sum().end(), out.begin());
  for (std::size_t i = start; i < end; ++i) {
    const auto e = r.embedding(doc[i]);
    for (std::size_t k = 0; k < m; ++k) out[k] -= e[k];
  }
  for (TokenId t : replacement) {
    const auto e = r.embedding(t);
    for (std::size_t k = 0; k < m; ++k) out[k] += e[k];
  }
  const std::size_t len = doc.size() - (end - start) + replacement.size();
  if (len == 0) throw Error("substitution leaves an empty document");
  for (std::size_t k = 0; k < m; ++k) out[k] /= static_cast<double>(len);
}

// index of the best score; ties go to the lexicographically smaller sequence
std::size_t argmax_with_tiebreak(const std::vector<double>& scores, const std::vector<std::vector<TokenId>>& seqs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best] || (scores[i] == scores[best] && seqs[i] < seqs[best])) best = i;
  return best;
}

PerturbationCandidate no_op_candidate(const Document& d, const PerturbationSpan& span) {
  PerturbationCandidate c;
  c.span = span;
  c.replacement.assign(d.tokens.begin() + static_cast<std::ptrdiff_t>(span.start),
                       d.tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
  c.no_op = true;
  return c;
}

PerturbationCandidate phrase_from_ranked(const SubstitutionScorer& scorer, const Document& d,
                                         const PerturbationSpan& span, const PhraseTable& phrases,
                                         const std::vector<std::size_t>& ranked, std::size_t top_n) {
  const std::size_t lo = std::max<std::size_t>(2, span.length() > 0 ? span.length() - 1 : 0);
  const std::size_t hi = std::min<std::size_t>(5, span.length() + 1);
  std::vector<std::vector<TokenId>> pool;
  for (std::size_t idx : ranked) {
    if (pool.size() >= top_n) break;
    const auto& e = phrases.entries()[idx];
    if (e.tokens.size() >= lo && e.tokens.size() <= hi) pool.push_back(e.tokens);
  }
  if (pool.empty()) return no_op_candidate(d, span);
  const auto scores = scorer.score_batch(span.start, span.end, pool);
  PerturbationCandidate c;
  c.span = span;
  c.replacement = pool[argmax_with_tiebreak(scores, pool)];
  return c;
}

std::vector<TokenId> shortlist_from_gradient(const SurrogateRanker& r, const SubstitutionScorer& scorer,
                                             std::size_t size) {
  std::vector<double> mean(scorer.doc_sum().begin(), scorer.doc_sum().end());
  for (auto& x : mean) x /= static_cast<double>(scorer.doc().size());
  const auto grad = r.mean_gradient(scorer.query_mean(), mean);
  const std::size_t v = r.shape().vocab_size;
  std::vector<std::pair<double, TokenId>> align;
  align.reserve(v);
  for (TokenId t = 1; t < v; ++t) align.emplace_back(dot(grad.doc, r.embedding(t)), t);
  size = std::min(size, align.size());
  std::partial_sort(align.begin(), align.begin() + static_cast<std::ptrdiff_t>(size), align.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<TokenId> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.push_back(align[i].second);
  return out;
}

PerturbationCandidate trigger_from_shortlist(const SubstitutionScorer& scorer, const PerturbationSpan& span,
                                             const BigramLM& lm, std::size_t len_target, double fluency_weight,
                                             const std::vector<TokenId>& shortlist) {
  const auto& r = scorer.ranker();
  const auto doc = scorer.doc();
  const std::size_t m = r.dim();
  if (shortlist.empty()) throw Error("sentence_trigger: empty shortlist");
  // document with the span removed
  std::vector<double> rest(scorer.doc_sum().begin(), scorer.doc_sum().end());
  for (std::size_t i = span.start; i < span.end; ++i) {
    const auto e = r.embedding(doc[i]);
    for (std::size_t k = 0; k < m; ++k) rest[k] -= e[k];
  }
  const std::size_t rest_len = doc.size() - span.length();
  const bool fluency_only = std::isinf(fluency_weight);

  PerturbationCandidate c;
  c.span = span;
  std::vector<double> prefix(m, 0.0);
  std::vector<double> mean(m);
  Matrix means(shortlist.size(), m);
  std::vector<double> scores(shortlist.size());
  for (std::size_t j = 0; j < len_target; ++j) {
    double prefix_score = 0.0;
    if (rest_len + j > 0) {
      for (std::size_t k = 0; k < m; ++k) mean[k] = (rest[k] + prefix[k]) / static_cast<double>(rest_len + j);
      prefix_score = r.score_means(scorer.query_mean(), mean);
    }
    const double denom = static_cast<double>(rest_len + j + 1);
    for (std::size_t i = 0; i < shortlist.size(); ++i) {
      const auto e = r.embedding(shortlist[i]);
      auto row = means.row(i);
      for (std::size_t k = 0; k < m; ++k) row[k] = (rest[k] + prefix[k] + e[k]) / denom;
    }
    if (!fluency_only) kernels::score_means(r, scorer.query_mean(), means, scores);

    const bool has_prev = !c.replacement.empty() || span.start > 0;
    const TokenId prev = !c.replacement.empty() ? c.replacement.back() : (span.start > 0 ? doc[span.start - 1] : 0);
    std::size_t best = 0;
    double best_obj = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < shortlist.size(); ++i) {
      const double nll = has_prev ? -lm.log_prob(prev, shortlist[i]) : -lm.log_prob_first(shortlist[i]);
      const double obj = fluency_only ? -nll : (scores[i] - prefix_score) - fluency_weight * nll;
      if (obj > best_obj || (obj == best_obj && shortlist[i] < shortlist[best])) {
        best_obj = obj;
        best = i;
      }
    }
    c.replacement.push_back(shortlist[best]);
    const auto e = r.embedding(shortlist[best]);
    for (std::size_t k = 0; k < m; ++k) prefix[k] += e[k];
  }
  return c;
}

}  // namespace

double SubstitutionScorer::score_with(std::size_t start, std::size_t end, std::span<const TokenId> replacement) const {
  check_span({Granularity::Word, start, end, 0.0}, doc_.size());
  std::vector<double> mean(ranker_.dim());
  substituted_mean(*this, start, end, replacement, mean);
  return ranker_.score_means(query_mean_, mean);
}

std::vector<double> SubstitutionScorer::score_batch(std::size_t start, std::size_t end,
                                                    const std::vector<std::vector<TokenId>>& replacements) const {
  check_span({Granularity::Word, start, end, 0.0}, doc_.size());
  Matrix means(replacements.size(), ranker_.dim());
  for (std::size_t i = 0; i < replacements.size(); ++i) substituted_mean(*this, start, end, replacements[i], means.row(i));
  std::vector<double> out(replacements.size());
  kernels::score_means(ranker_, query_mean_, means, out);
  return out;
}

PerturbationCandidate word_substitute(const SurrogateRanker& r, const Query& q, const Document& d,
                                      const PerturbationSpan& span, const SynonymTable& syn, std::size_t top_n) {
  check_span(span, d.tokens.size());
  if (span.granularity != Granularity::Word || span.length() != 1)
    throw Error("word_substitute: span must be a length-1 word span");
  const auto& all = syn.synonyms(d.tokens[span.start]);
  if (all.empty() || top_n == 0) return no_op_candidate(d, span);
  std::vector<std::vector<TokenId>> pool;
  for (std::size_t i = 0; i < std::min(top_n, all.size()); ++i) pool.push_back({all[i]});
  const SubstitutionScorer scorer(r, q.tokens, d.tokens);
  const auto scores = scorer.score_batch(span.start, span.end, pool);
  PerturbationCandidate c;
  c.span = span;
  c.replacement = pool[argmax_with_tiebreak(scores, pool)];
  return c;
}

PerturbationCandidate phrase_substitute(const SurrogateRanker& r, const Query& q, const Document& d,
                                        const PerturbationSpan& span, const PhraseTable& phrases, std::size_t top_n) {
  check_span(span, d.tokens.size());
  if (span.granularity != Granularity::Phrase || !length_window(Granularity::Phrase).contains(span.length()))
    throw Error("phrase_substitute: span must be a phrase span of length 2-5");
  const SubstitutionScorer scorer(r, q.tokens, d.tokens);
  return phrase_from_ranked(scorer, d, span, phrases, phrases.rank_for_query(q.tokens), top_n);
}

std::vector<TokenId> salient_shortlist(const SurrogateRanker& r, const Query& q, const Document& d, std::size_t size) {
  const SubstitutionScorer scorer(r, q.tokens, d.tokens);
  return shortlist_from_gradient(r, scorer, size);
}

PerturbationCandidate sentence_trigger(const SurrogateRanker& r, const Query& q, const Document& d,
                                       const PerturbationSpan& span, const BigramLM& lm, std::size_t len_target,
                                       double fluency_weight, std::size_t shortlist_size) {
  check_span(span, d.tokens.size());
  if (span.granularity != Granularity::Sentence) throw Error("sentence_trigger: span must be a sentence span");
  if (!length_window(Granularity::Sentence).contains(len_target))
    throw Error("sentence_trigger: len_target must be in [6,10]");
  if (fluency_weight < 0.0) throw Error("sentence_trigger: fluency_weight must be non-negative");
  const SubstitutionScorer scorer(r, q.tokens, d.tokens);
  return trigger_from_shortlist(scorer, span, lm, len_target, fluency_weight,
                                shortlist_from_gradient(r, scorer, shortlist_size));
}

std::vector<PerturbationCandidate> generate_candidates(const SurrogateRanker& r, const Query& q, const Document& d,
                                                       std::span<const PerturbationSpan> spans,
                                                       const AttackTables& tables, const GeneratorConfig& cfg) {
  std::vector<PerturbationSpan> sorted(spans.begin(), spans.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    check_span(sorted[i], d.tokens.size());
    if (sorted[i].granularity == Granularity::None) throw Error("generate_candidates: span labelled N");
    if (i > 0 && sorted[i].start < sorted[i - 1].end) throw Error("generate_candidates: overlapping spans");
  }
  std::vector<PerturbationCandidate> out(spans.size());
  if (spans.empty()) return out;

  bool need_phrase = false, need_sentence = false, need_word = false;
  for (const auto& s : spans) {
    need_word |= s.granularity == Granularity::Word;
    need_phrase |= s.granularity == Granularity::Phrase;
    need_sentence |= s.granularity == Granularity::Sentence;
  }
  if ((need_word && !tables.synonyms) || (need_phrase && !tables.phrases) || (need_sentence && !tables.lm))
    throw Error("generate_candidates: missing attack table for a requested granularity");

  const SubstitutionScorer scorer(r, q.tokens, d.tokens);
  const auto ranked_phrases = need_phrase ? tables.phrases->rank_for_query(q.tokens) : std::vector<std::size_t>{};
  const auto shortlist = need_sentence ? shortlist_from_gradient(r, scorer, cfg.shortlist) : std::vector<TokenId>{};

  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(spans.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& span = spans[static_cast<std::size_t>(i)];
      PerturbationCandidate c;
      switch (span.granularity) {
        case Granularity::Word:
          c = word_substitute(r, q, d, span, *tables.synonyms, cfg.top_n);
          break;
        case Granularity::Phrase:
          c = phrase_from_ranked(scorer, d, span, *tables.phrases, ranked_phrases, cfg.top_n);
          break;
        case Granularity::Sentence: {
          const std::size_t len = std::clamp<std::size_t>(span.length(), 6, 10);
          c = trigger_from_shortlist(scorer, span, *tables.lm, len, cfg.fluency_weight, shortlist);
          break;
        }
        case Granularity::None:
          break;
      }
      c.span.confidence = span.confidence;
      out[static_cast<std::size_t>(i)] = std::move(c);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<TokenId> splice(std::span<const TokenId> tokens, const PerturbationSpan& span,
                            std::span<const TokenId> replacement) {
  check_span(span, tokens.size());
  std::vector<TokenId> out;
  out.reserve(tokens.size() - span.length() + replacement.size());
  out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(span.start));
  out.insert(out.end(), replacement.begin(), replacement.end());
  out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(span.end), tokens.end());
  return out;
}

}  // namespace mara

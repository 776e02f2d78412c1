#include "mara/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

namespace mara {

namespace {

constexpr std::size_t kSynonymGroup = 4;
constexpr double kBackgroundRate = 0.3;
constexpr double kSuccessorRate = 0.5;
constexpr std::size_t kQueryHead = 30;

struct Pool {
  std::vector<std::string> words;
  std::vector<double> zipf;
};

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
  return w;
}

std::size_t successor(std::size_t idx, std::size_t n) { return (idx * 5 + 1) % n; }

}  // namespace

std::string synthetic_word(std::size_t index) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                            "s", "t", "v", "z", "ch", "sh", "br", "tr", "pl", "gr"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
  // 100 syllables, three per word: a bijection on [0, 1e6) scrambled by a unit multiplier
  std::size_t code = (index * 7919 + 12345) % 1000000;
  std::string w;
  for (int s = 0; s < 3; ++s) {
    const std::size_t syl = code % 100;
    code /= 100;
    w += kOnsets[syl / 5];
    w += kVowels[syl % 5];
  }
  return w;
}

int relevance_grade(const std::vector<std::string>& query_terms, const std::vector<std::string>& doc_words) {
  const std::unordered_set<std::string> q(query_terms.begin(), query_terms.end());
  int n = 0;
  for (const auto& w : doc_words)
    if (q.count(w)) ++n;
  return std::clamp(n, 0, 3);
}

SyntheticBenchmark generate_synthetic_corpus(const SyntheticParams& p) {
  if (p.n_topics < 2) throw Error("generate_synthetic_corpus: n_topics must be >= 2");
  if (p.vocab_size < 50 * p.n_topics) throw Error("generate_synthetic_corpus: vocab_size must be >= 50 * n_topics");
  if (p.n_docs == 0 || p.n_queries == 0) throw Error("generate_synthetic_corpus: need at least one document and query");
  if (p.min_sentences == 0 || p.min_sentences > p.max_sentences || p.min_sentence_len == 0 ||
      p.min_sentence_len > p.max_sentence_len)
    throw Error("generate_synthetic_corpus: bad sentence shape parameters");

  Rng rng(p.seed);
  const std::size_t background_size = p.vocab_size / 5;
  const std::size_t topic_size = (p.vocab_size - background_size) / p.n_topics;

  std::size_t next_word = 0;
  auto make_pool = [&](std::size_t n) {
    Pool pool;
    for (std::size_t i = 0; i < n; ++i) pool.words.push_back(synthetic_word(next_word++));
    pool.zipf = zipf_weights(n, 0.9);
    return pool;
  };
  Pool background = make_pool(background_size);
  std::vector<Pool> topics;
  for (std::size_t t = 0; t < p.n_topics; ++t) topics.push_back(make_pool(topic_size));

  SyntheticBenchmark out;

  auto add_synonyms = [&](const Pool& pool) {
    for (std::size_t i = 0; i < pool.words.size(); ++i) {
      const std::size_t g0 = (i / kSynonymGroup) * kSynonymGroup;
      std::vector<std::string> syn;
      for (std::size_t j = g0; j < std::min(g0 + kSynonymGroup, pool.words.size()); ++j)
        if (j != i) syn.push_back(pool.words[j]);
      if (!syn.empty()) out.synonyms.emplace_back(pool.words[i], std::move(syn));
    }
  };
  add_synonyms(background);
  for (const auto& t : topics) add_synonyms(t);

  std::vector<std::vector<std::string>> doc_words(p.n_docs);
  for (std::size_t d = 0; d < p.n_docs; ++d) {
    const std::size_t n_mix = 1 + rng() % 3;
    std::vector<std::size_t> mix;
    while (mix.size() < n_mix) {
      const std::size_t t = rng() % p.n_topics;
      if (std::find(mix.begin(), mix.end(), t) == mix.end()) mix.push_back(t);
    }
    std::vector<double> mix_w(n_mix);
    for (auto& w : mix_w) w = 0.2 + uniform01(rng);

    const std::size_t n_sent = p.min_sentences + rng() % (p.max_sentences - p.min_sentences + 1);
    std::string text;
    for (std::size_t s = 0; s < n_sent; ++s) {
      const std::size_t len = p.min_sentence_len + rng() % (p.max_sentence_len - p.min_sentence_len + 1);
      int prev_topic = -1;
      std::size_t prev_idx = 0;
      for (std::size_t k = 0; k < len; ++k) {
        std::string word;
        if (uniform01(rng) < kBackgroundRate) {
          word = background.words[sample_categorical(background.zipf, rng)];
          prev_topic = -1;
        } else {
          const std::size_t t = mix[sample_categorical(mix_w, rng)];
          const Pool& pool = topics[t];
          std::size_t idx;
          if (prev_topic == static_cast<int>(t) && uniform01(rng) < kSuccessorRate)
            idx = successor(prev_idx, pool.words.size());
          else
            idx = sample_categorical(pool.zipf, rng);
          word = pool.words[idx];
          prev_topic = static_cast<int>(t);
          prev_idx = idx;
        }
        doc_words[d].push_back(word);
        if (k == 0) {
          word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
          if (!text.empty()) text += ' ';
        } else {
          text += ' ';
        }
        text += word;
      }
      text += '.';
    }
    out.documents.push_back({"d" + std::to_string(d), std::move(text)});
  }

  auto draw_terms = [&](const Pool& pool, std::size_t first, std::size_t last) {
    const std::size_t n_terms = 2 + rng() % 3;
    last = std::min(last, pool.words.size());
    std::vector<double> w(pool.zipf.begin() + static_cast<std::ptrdiff_t>(first),
                          pool.zipf.begin() + static_cast<std::ptrdiff_t>(last));
    std::vector<std::string> terms;
    while (terms.size() < n_terms) {
      const std::size_t idx = sample_categorical(w, rng);
      w[idx] = 0.0;
      terms.push_back(pool.words[first + idx]);
    }
    return terms;
  };
  auto join = [](const std::vector<std::string>& terms) {
    std::string text;
    for (const auto& term : terms) text += (text.empty() ? "" : " ") + term;
    return text;
  };

  for (std::size_t q = 0; q < p.n_queries; ++q) {
    const std::size_t t = rng() % p.n_topics;
    const auto terms = draw_terms(topics[t], 0, kQueryHead);
    const std::string qid = "q" + std::to_string(q);
    out.queries.push_back({qid, join(terms)});
    out.query_topics.push_back(static_cast<int>(t));
    for (std::size_t d = 0; d < p.n_docs; ++d) {
      const int g = relevance_grade(terms, doc_words[d]);
      if (g > 0) out.qrels[qid]["d" + std::to_string(d)] = g;
    }
  }
  for (std::size_t q = 0; q < p.n_ood_queries; ++q) {
    const std::size_t t = rng() % p.n_topics;
    out.ood_queries.push_back({"ood" + std::to_string(q), join(draw_terms(topics[t], kQueryHead, 2 * kQueryHead))});
  }
  return out;
}

void write_query_topics(const std::filesystem::path& path, const SyntheticBenchmark& bench) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < bench.queries.size(); ++i)
    out << bench.queries[i].id << ' ' << bench.query_topics[i] << '\n';
}

std::map<std::string, int> read_query_topics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::map<std::string, int> out;
  std::string id;
  int t;
  while (in >> id >> t) out[id] = t;
  return out;
}

}  // namespace mara

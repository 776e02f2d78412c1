#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mara/agents.hpp"
#include "mara/attacks.hpp"
#include "mara/corpus.hpp"
#include "mara/environment.hpp"
#include "mara/lm.hpp"
#include "mara/ranker.hpp"
#include "mara/synthetic.hpp"

namespace mara::test {

/// Small topic corpus with a random surrogate and all attack tables.
struct World {
  std::shared_ptr<const Corpus> corpus;
  std::vector<Query> queries;
  Qrels qrels;
  SynonymTable synonyms;
  PhraseTable phrases;
  std::unique_ptr<BigramLM> lm;
  SurrogateRanker ranker;
  std::unique_ptr<NaturalnessOracle> oracle;
  EpisodeContext ctx;

  explicit World(std::size_t n_docs = 40, std::uint64_t seed = 5, std::size_t dim = 8) {
    SyntheticParams p;
    p.seed = seed;
    p.n_docs = n_docs;
    p.n_queries = 4;
    p.n_ood_queries = 2;
    p.n_topics = 4;
    p.vocab_size = 200;
    const auto bench = generate_synthetic_corpus(p);
    corpus = std::make_shared<const Corpus>(build_corpus(bench.documents));
    for (const auto& q : bench.queries) queries.push_back(make_query(q, corpus->vocab()));
    qrels = bench.qrels;
    synonyms = SynonymTable::from_words(bench.synonyms, corpus->vocab());
    phrases = PhraseTable::mine(*corpus, 2);
    lm = std::make_unique<BigramLM>(BigramLM::train(*corpus, 0.1));
    RankerShape shape;
    shape.vocab_size = corpus->vocab().size();
    shape.dim = dim;
    shape.hidden = 8;
    ranker = SurrogateRanker(shape, seed + 1, 0.5);
    oracle = std::make_unique<NaturalnessOracle>(ranker, *lm, &corpus->vocab());
    ctx.surrogate = &ranker;
    ctx.tables = AttackTables{&synonyms, &phrases, lm.get()};
    ctx.generator.shortlist = 40;
    ctx.oracle = oracle.get();
  }

  const Document& doc(std::size_t i) const { return corpus->documents()[i]; }

  EpisodeInput input(std::size_t qi, std::size_t di, std::size_t n_others = 3) const {
    EpisodeInput in;
    in.query = &queries[qi];
    in.document = &doc(di);
    for (std::size_t k = 1; in.others.size() < n_others; ++k) in.others.push_back(&doc((di + k) % corpus->size()));
    return in;
  }
};

/// Relative error with an absolute floor for near-zero references.
inline double rel_err(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

}  // namespace mara::test

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mara/corpus.hpp"
#include "mara/lm.hpp"
#include "mara/synthetic.hpp"

using namespace mara;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mara_test_" + name);
}

}  // namespace

TEST_CASE("split_text lowercases, strips punctuation and finds sentences") {
  const auto s = split_text("Hello, World! This is it. Tail");
  REQUIRE(s.words == std::vector<std::string>{"hello", "world", "this", "is", "it", "tail"});
  REQUIRE(s.sentence_bounds.size() == 3);
  CHECK(s.sentence_bounds[0] == SentenceBound{0, 2});
  CHECK(s.sentence_bounds[1] == SentenceBound{2, 5});
  CHECK(s.sentence_bounds[2] == SentenceBound{5, 6});
}

TEST_CASE("vocabulary reserves id 0 and assigns ids in first-seen order") {
  Vocabulary v;
  CHECK(v.size() == 1);
  const TokenId a = v.add("alpha");
  const TokenId b = v.add("beta");
  CHECK(a == 1);
  CHECK(b == 2);
  CHECK(v.add("alpha") == a);
  CHECK(v.count(a) == 2);
  CHECK(v.id("missing") == kUnknownToken);
  CHECK(v.token(b) == "beta");

  const auto path = temp_path("vocab.tsv");
  v.save(path);
  const Vocabulary w = Vocabulary::load(path);
  CHECK(w.size() == v.size());
  CHECK(w.id("beta") == b);
  CHECK(w.count(a) == 2);
}

TEST_CASE("build_corpus tokenizes, truncates and rejects bad records") {
  const Corpus c = build_corpus({{"d1", "one two three. four five"}, {"d2", "two two six"}}, 4);
  CHECK(c.size() == 2);
  const Document& d1 = c.document("d1");
  CHECK(d1.tokens.size() == 4);
  REQUIRE(d1.sentence_bounds.size() == 2);
  CHECK(d1.sentence_bounds[1] == SentenceBound{3, 4});
  CHECK(c.index_of("d2") == 1);
  CHECK(detokenize(c.document("d2").tokens, c.vocab()) == "two two six");
  CHECK_THROWS_AS(build_corpus({{"a", "x"}, {"a", "y"}}), Error);
  CHECK_THROWS_AS(build_corpus({{"a", "  ...  "}}), Error);
  CHECK_THROWS_AS(c.document("nope"), Error);
}

TEST_CASE("corpus records and qrels round-trip through files") {
  const std::vector<TextRecord> recs = {{"a", "first doc"}, {"b", "second \"quoted\" doc"}};
  const auto path = temp_path("recs.jsonl");
  write_jsonl_records(path, recs);
  const auto back = read_jsonl_records(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].text == recs[1].text);

  Qrels q;
  q["q1"]["a"] = 2;
  q["q2"]["b"] = 1;
  const auto qp = temp_path("qrels.txt");
  write_qrels(qp, q);
  const Qrels r = read_qrels(qp);
  CHECK(grade_of(r, "q1", "a") == 2);
  CHECK(grade_of(r, "q2", "b") == 1);
  CHECK(grade_of(r, "q2", "a") == 0);
}

TEST_CASE("bigram conditionals sum to one and perplexity matches its definition") {
  const Corpus c = build_corpus({{"d", "a b a c a b b"}, {"e", "c c a"}});
  const BigramLM lm = BigramLM::train(c, 0.5);
  const std::size_t v = c.vocab().size();
  for (TokenId prev = 0; prev < v; ++prev) {
    double total = 0.0;
    for (TokenId next = 0; next < v; ++next) total += std::exp(lm.log_prob(prev, next));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  double first = 0.0;
  for (TokenId t = 0; t < v; ++t) first += std::exp(lm.log_prob_first(t));
  CHECK(first == doctest::Approx(1.0).epsilon(1e-12));

  // hand count: c(a,b) = 2, c(a,.) = 3 from "a b a c a b b" and "c c a"
  const TokenId a = c.vocab().id("a"), b = c.vocab().id("b");
  CHECK(std::exp(lm.log_prob(a, b)) == doctest::Approx((2 + 0.5) / (3 + 0.5 * v)));

  const std::vector<TokenId> seq = {a, b, b};
  const double nll = -(lm.log_prob_first(a) + lm.log_prob(a, b) + lm.log_prob(b, b));
  CHECK(lm.nll(seq) == doctest::Approx(nll));
  CHECK(lm.perplexity(seq) == doctest::Approx(std::exp(nll / 3)));
  CHECK_THROWS_AS(lm.perplexity(std::vector<TokenId>{}), Error);

  const auto path = temp_path("lm.bin");
  lm.save(path);
  const BigramLM back = BigramLM::load(path);
  CHECK(back.nll(seq) == doctest::Approx(nll).epsilon(1e-15));
}

TEST_CASE("synthetic corpus is a pure function of its parameters") {
  SyntheticParams p;
  p.n_docs = 30;
  p.n_queries = 3;
  p.n_ood_queries = 2;
  p.n_topics = 3;
  p.vocab_size = 200;
  const auto a = generate_synthetic_corpus(p);
  const auto b = generate_synthetic_corpus(p);
  REQUIRE(a.documents.size() == 30);
  CHECK(a.queries.size() == 3);
  CHECK(a.ood_queries.size() == 2);
  for (std::size_t i = 0; i < a.documents.size(); ++i) CHECK(a.documents[i].text == b.documents[i].text);
  CHECK(a.qrels == b.qrels);
  p.seed += 1;
  CHECK(generate_synthetic_corpus(p).documents[0].text != a.documents[0].text);

  // qrels agree with the grading rule
  for (std::size_t qi = 0; qi < a.queries.size(); ++qi) {
    const auto qt = split_text(a.queries[qi].text).words;
    for (const auto& d : a.documents)
      CHECK(grade_of(a.qrels, a.queries[qi].id, d.id) == relevance_grade(qt, split_text(d.text).words));
  }
  // OOD queries share no terms with in-distribution ones
  for (const auto& o : a.ood_queries)
    for (const auto& w : split_text(o.text).words)
      for (const auto& q : a.queries) {
        const auto qw = split_text(q.text).words;
        CHECK(std::find(qw.begin(), qw.end(), w) == qw.end());
      }
  p.n_topics = 1;
  CHECK_THROWS_AS(generate_synthetic_corpus(p), Error);
}

TEST_CASE("relevance grade counts query-term hits clipped at three") {
  CHECK(relevance_grade({"a", "b"}, {"x", "y"}) == 0);
  CHECK(relevance_grade({"a", "b"}, {"a", "x", "b"}) == 2);
  CHECK(relevance_grade({"a"}, {"a", "a", "a", "a", "a"}) == 3);
}

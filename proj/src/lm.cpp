#include "mara/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mara {

BigramLM::BigramLM(std::size_t vocab_size, double add_k)
    : vocab_size_(vocab_size), add_k_(add_k), unigram_(vocab_size, 0), context_(vocab_size, 0) {
  if (vocab_size == 0) throw Error("BigramLM: empty vocabulary");
  if (!(add_k > 0.0)) throw Error("BigramLM: add_k must be positive");
}

BigramLM BigramLM::train(const Corpus& corpus, double add_k) {
  BigramLM lm(corpus.vocab().size(), add_k);
  for (const auto& d : corpus.documents()) lm.add_sequence(d.tokens);
  return lm;
}

void BigramLM::add_sequence(std::span<const TokenId> tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab_size_) throw Error("BigramLM: token outside vocabulary");
    ++unigram_[tokens[i]];
    ++total_;
    if (i + 1 < tokens.size()) {
      ++context_[tokens[i]];
      ++bigram_[key(tokens[i], tokens[i + 1])];
    }
  }
}

double BigramLM::log_prob(TokenId prev, TokenId next) const {
  const auto it = bigram_.find(key(prev, next));
  const double c = it == bigram_.end() ? 0.0 : static_cast<double>(it->second);
  const double ctx = prev < vocab_size_ ? static_cast<double>(context_[prev]) : 0.0;
  return std::log((c + add_k_) / (ctx + add_k_ * static_cast<double>(vocab_size_)));
}

double BigramLM::log_prob_first(TokenId token) const {
  const double c = token < vocab_size_ ? static_cast<double>(unigram_[token]) : 0.0;
  return std::log((c + add_k_) / (static_cast<double>(total_) + add_k_ * static_cast<double>(vocab_size_)));
}

double BigramLM::nll(std::span<const TokenId> tokens) const {
  if (tokens.empty()) return 0.0;
  double s = -log_prob_first(tokens[0]);
  for (std::size_t i = 1; i < tokens.size(); ++i) s -= log_prob(tokens[i - 1], tokens[i]);
  return s;
}

double BigramLM::perplexity(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("perplexity of an empty sequence");
  return std::exp(nll(tokens) / static_cast<double>(tokens.size()));
}

void BigramLM::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "mara-bigram 1\n" << vocab_size_ << ' ' << add_k_ << ' ' << total_ << '\n';
  for (std::size_t i = 0; i < vocab_size_; ++i)
    if (unigram_[i]) out << "u " << i << ' ' << unigram_[i] << ' ' << context_[i] << '\n';
  std::vector<std::pair<std::uint64_t, std::uint64_t>> rows(bigram_.begin(), bigram_.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [k, c] : rows) out << "b " << (k >> 32) << ' ' << (k & 0xffffffffULL) << ' ' << c << '\n';
}

BigramLM BigramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "mara-bigram" || version != 1) throw Error("not a bigram count file: " + path.string());
  std::size_t v = 0;
  double k = 0;
  std::uint64_t total = 0;
  in >> v >> k >> total;
  BigramLM lm(v, k);
  lm.total_ = total;
  std::string tag;
  while (in >> tag) {
    if (tag == "u") {
      std::size_t i;
      std::uint64_t u, c;
      in >> i >> u >> c;
      if (i >= v) throw Error("bigram file: token out of range");
      lm.unigram_[i] = u;
      lm.context_[i] = c;
    } else if (tag == "b") {
      std::uint64_t a, b, c;
      in >> a >> b >> c;
      lm.bigram_[key(static_cast<TokenId>(a), static_cast<TokenId>(b))] = c;
    } else {
      throw Error("bigram file: unexpected record " + tag);
    }
  }
  return lm;
}

}  // namespace mara

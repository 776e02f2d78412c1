#include "mara/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace mara {

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "hard") return Difficulty::Hard;
  if (s == "mixture") return Difficulty::Mixture;
  throw Error("unknown difficulty '" + s + "' (expected easy, hard or mixture)");
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Hard: return "hard";
    case Difficulty::Mixture: return "mixture";
  }
  return "?";
}

std::vector<TargetPick> select_targets(const RankedList& list, Difficulty difficulty, std::size_t n, Rng& rng) {
  if (list.size() < kTargetListDepth)
    throw Error("select_targets: ranked list for " + list.query_id() + " has depth " + std::to_string(list.size()) +
                ", need " + std::to_string(kTargetListDepth));
  std::vector<std::size_t> easy, hard;
  for (std::size_t r = kEasyLow; r <= kEasyHigh; ++r) easy.push_back(r);
  for (std::size_t r = kTargetListDepth - n + 1; r <= kTargetListDepth && n <= kTargetListDepth; ++r) hard.push_back(r);

  auto sample = [&](std::vector<std::size_t> pool) {
    if (n > pool.size()) throw Error("select_targets: pool smaller than requested sample");
    // partial Fisher-Yates
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
  };

  std::vector<std::size_t> ranks;
  switch (difficulty) {
    case Difficulty::Easy:
      ranks = sample(easy);
      break;
    case Difficulty::Hard:
      ranks = hard;
      break;
    case Difficulty::Mixture: {
      std::vector<std::size_t> pool = easy;
      for (std::size_t r : hard)
        if (std::find(pool.begin(), pool.end(), r) == pool.end()) pool.push_back(r);
      ranks = sample(pool);
      break;
    }
  }
  std::sort(ranks.begin(), ranks.end());
  std::vector<TargetPick> out;
  for (std::size_t r : ranks) out.push_back({list.at_rank(r), r});
  return out;
}

std::string to_json_line(const AttackOutcome& o) {
  nlohmann::ordered_json j;
  j["query_id"] = o.query_id;
  j["doc_id"] = o.doc_id;
  j["rank_before"] = o.rank_before;
  j["rank_after"] = o.rank_after;
  j["budget"] = o.budget;
  j["word"] = o.counts[0];
  j["phrase"] = o.counts[1];
  j["sentence"] = o.counts[2];
  j["perturbed_text"] = o.perturbed_text;
  return j.dump();
}

AttackOutcome outcome_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error("malformed outcome line");
  AttackOutcome o;
  try {
    o.query_id = j.at("query_id").get<std::string>();
    o.doc_id = j.at("doc_id").get<std::string>();
    o.rank_before = j.at("rank_before").get<std::size_t>();
    o.rank_after = j.at("rank_after").get<std::size_t>();
    o.budget = j.value("budget", std::size_t{0});
    o.counts = {j.value("word", std::size_t{0}), j.value("phrase", std::size_t{0}), j.value("sentence", std::size_t{0})};
    o.perturbed_text = j.value("perturbed_text", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed outcome line: ") + e.what());
  }
  if (o.rank_before < 1 || o.rank_after < 1) throw Error("outcome ranks must be 1-based");
  return o;
}

void write_outcomes(const std::filesystem::path& path, std::span<const AttackOutcome> outcomes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& o : outcomes) out << to_json_line(o) << '\n';
}

std::vector<AttackOutcome> read_outcomes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<AttackOutcome> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(outcome_from_json_line(line));
    } catch (const Error& e) {
      throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw Error("no outcomes in " + path.string());
  return out;
}

MetricsReport compute_metrics(std::span<const AttackOutcome> outcomes, std::span<const std::size_t> ks) {
  if (outcomes.empty()) throw Error("no outcomes");
  MetricsReport r;
  r.count = outcomes.size();
  const double n = static_cast<double>(outcomes.size());
  // integer totals, one division each
  std::size_t success = 0, budget = 0;
  std::int64_t boost = 0;
  std::array<std::size_t, 3> counts{0, 0, 0};
  for (const auto& o : outcomes) {
    if (o.rank_after < o.rank_before) ++success;
    boost += static_cast<std::int64_t>(o.rank_before) - static_cast<std::int64_t>(o.rank_after);
    budget += o.budget;
    for (std::size_t g = 0; g < 3; ++g) counts[g] += o.counts[g];
  }
  r.asr = 100.0 * static_cast<double>(success) / n;
  r.boost = static_cast<double>(boost) / n;
  r.mean_budget = static_cast<double>(budget) / n;
  for (std::size_t g = 0; g < 3; ++g) r.mean_counts[g] = static_cast<double>(counts[g]) / n;
  for (std::size_t k : ks) {
    const auto hits = std::count_if(outcomes.begin(), outcomes.end(), [k](const AttackOutcome& o) { return o.rank_after <= k; });
    r.topk[k] = 100.0 * static_cast<double>(hits) / n;
  }
  return r;
}

double spamicity_score(std::span<const TokenId> doc, std::span<const TokenId> query, std::size_t window) {
  if (window == 0) throw Error("spamicity_score: window must be positive");
  if (doc.empty()) return 0.0;
  const std::unordered_set<TokenId> qset(query.begin(), query.end());
  const std::size_t w = std::min(window, doc.size());
  std::size_t hits = 0, best = 0;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    hits += qset.count(doc[i]);
    if (i >= w) hits -= qset.count(doc[i - w]);
    if (i + 1 >= w) best = std::max(best, hits);
  }
  return static_cast<double>(best) / static_cast<double>(w);
}

ScreeningReport screen_outcomes(std::span<const AttackOutcome> outcomes, const Corpus& corpus,
                                std::span<const Query> queries, const BigramLM& lm, std::span<const double> thresholds,
                                std::size_t window) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw Error("screen_outcomes: thresholds must be ascending");
  std::unordered_map<std::string, const Query*> qmap;
  for (const auto& q : queries) qmap.emplace(q.id, &q);
  ScreeningReport s;
  s.thresholds.assign(thresholds.begin(), thresholds.end());
  s.detection_rate.assign(thresholds.size(), 0.0);
  if (outcomes.empty()) return s;
  const double n = static_cast<double>(outcomes.size());
  for (const auto& o : outcomes) {
    auto it = qmap.find(o.query_id);
    if (it == qmap.end()) throw Error("screen_outcomes: unknown query " + o.query_id);
    const auto& orig = corpus.document(o.doc_id).tokens;
    auto attacked = tokenize(o.perturbed_text, corpus.vocab()).tokens;
    if (attacked.empty()) attacked = orig;
    const double sp = spamicity_score(attacked, it->second->tokens, window);
    s.mean_spamicity_original += spamicity_score(orig, it->second->tokens, window) / n;
    s.mean_spamicity_attacked += sp / n;
    const double p0 = lm.perplexity(orig), p1 = lm.perplexity(attacked);
    s.mean_perplexity_original += p0 / n;
    s.mean_perplexity_attacked += p1 / n;
    s.mean_perplexity_ratio += (p1 / p0) / n;
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      if (sp > thresholds[t]) s.detection_rate[t] += 100.0 / n;
  }
  return s;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace mara

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mara/common.hpp"
#include "mara/corpus.hpp"
#include "mara/lm.hpp"
#include "mara/ranker.hpp"

namespace mara {

enum class Difficulty { Easy, Hard, Mixture };

Difficulty difficulty_from_string(const std::string& s);
std::string to_string(Difficulty d);

inline constexpr std::size_t kTargetListDepth = 100;
inline constexpr std::size_t kEasyLow = 30;
inline constexpr std::size_t kEasyHigh = 60;

struct TargetPick {
  std::string doc_id;
  std::size_t rank = 0;
};

/// Easy: uniform sample from ranks [30,60]. Hard: the bottom n of the top
/// 100. Mixture: uniform sample from the union of both pools. Picks are
/// returned in rank order.
std::vector<TargetPick> select_targets(const RankedList& list, Difficulty difficulty, std::size_t n, Rng& rng);

struct AttackOutcome {
  std::string query_id;
  std::string doc_id;
  std::size_t rank_before = 0;
  std::size_t rank_after = 0;
  std::size_t budget = 0;
  std::array<std::size_t, 3> counts{0, 0, 0};  // applied W, P, S perturbations
  std::string perturbed_text;
};

std::string to_json_line(const AttackOutcome& o);
AttackOutcome outcome_from_json_line(const std::string& line);
void write_outcomes(const std::filesystem::path& path, std::span<const AttackOutcome> outcomes);
/// Errors with "no outcomes" when the file holds none.
std::vector<AttackOutcome> read_outcomes(const std::filesystem::path& path);

struct MetricsReport {
  std::size_t count = 0;
  double asr = 0.0;    // percent of targets with rank_after < rank_before
  double boost = 0.0;  // mean rank_before - rank_after
  std::map<std::size_t, double> topk;  // k -> percent with rank_after <= k
  double mean_budget = 0.0;
  std::array<double, 3> mean_counts{0.0, 0.0, 0.0};
};

MetricsReport compute_metrics(std::span<const AttackOutcome> outcomes, std::span<const std::size_t> ks);

/// Highest query-term density over windows of min(window, l) tokens.
double spamicity_score(std::span<const TokenId> doc, std::span<const TokenId> query, std::size_t window);

struct ScreeningReport {
  std::vector<double> thresholds;
  std::vector<double> detection_rate;  // percent with spamicity > threshold
  double mean_spamicity_original = 0.0;
  double mean_spamicity_attacked = 0.0;
  double mean_perplexity_original = 0.0;
  double mean_perplexity_attacked = 0.0;
  double mean_perplexity_ratio = 0.0;
};

inline constexpr std::size_t kSpamWindow = 50;

/// Re-tokenizes each outcome's perturbed text against the corpus vocabulary.
ScreeningReport screen_outcomes(std::span<const AttackOutcome> outcomes, const Corpus& corpus,
                                std::span<const Query> queries, const BigramLM& lm, std::span<const double> thresholds,
                                std::size_t window = kSpamWindow);

/// Rounds to two decimals, the precision every report uses.
double round2(double x);

}  // namespace mara

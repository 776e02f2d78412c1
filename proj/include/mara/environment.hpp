#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mara/agents.hpp"
#include "mara/attacks.hpp"
#include "mara/lm.hpp"
#include "mara/ranker.hpp"

namespace mara {

struct RewardConfig {
  double xi = 1.0;     // penalty for a step that lowers the surrogate score
  double beta = 0.2;   // naturalness weight
  double gamma = 0.9;  // discount
  std::size_t budget = 25;  // epsilon, manipulated-term budget
  /// When set, a perturbation whose similarity falls below the floor is
  /// rejected like a budget overflow.
  std::optional<double> similarity_floor;

  void validate() const;
};

/// -xi when f_cur < f_prev, else (f_cur - f_prev) / |p| + beta (r_sim + r_flu).
double step_reward(const RewardConfig& cfg, double f_prev, double f_cur, std::size_t perturbation_length, double r_sim,
                   double r_flu);

struct ExternalOracleConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/naturalness";
  double timeout_seconds = 5.0;
  int retries = 1;
  /// Provider scores are mapped from [score_min, score_max] onto [0, 1].
  double score_min = 0.0;
  double score_max = 1.0;
};

struct NaturalnessScores {
  double similarity = 1.0;
  double fluency = 1.0;
};

/// Scores a perturbed document against its original.
///
/// Local mode: similarity = (1 + cos(mean embeddings)) / 2 under the given
/// embedding table, fluency = exp(-max(0, PPL(perturbed)/PPL(original) - 1))
/// under the bigram model.
///
/// External mode POSTs {"original", "perturbed", "requests":
/// ["similarity","fluency"]} as JSON and expects {"similarity": x,
/// "fluency": y}. Failures after the configured retries fall back to the
/// local scores with a warning.
class NaturalnessOracle {
 public:
  NaturalnessOracle(const SurrogateRanker& embeddings, const BigramLM& lm, const Vocabulary* vocab = nullptr);

  void use_external(ExternalOracleConfig cfg);
  bool external() const { return external_.has_value(); }
  std::string mode_name() const { return external() ? "external" : "local"; }

  NaturalnessScores evaluate(std::span<const TokenId> original, std::span<const TokenId> perturbed) const;
  double similarity(std::span<const TokenId> original, std::span<const TokenId> perturbed) const;
  double fluency(std::span<const TokenId> original, std::span<const TokenId> perturbed) const;

 private:
  NaturalnessScores local(std::span<const TokenId> original, std::span<const TokenId> perturbed) const;
  std::optional<NaturalnessScores> remote(std::span<const TokenId> original, std::span<const TokenId> perturbed) const;

  const SurrogateRanker* embeddings_;
  const BigramLM* lm_;
  const Vocabulary* vocab_;
  std::optional<ExternalOracleConfig> external_;
};

/// Mutable document state of one episode. Candidate spans keep their
/// original-document coordinates; current positions are derived from the
/// length changes of the edits applied before them.
class AttackState {
 public:
  AttackState(std::span<const TokenId> original, std::vector<PerturbationCandidate> candidates);

  const std::vector<TokenId>& tokens() const { return tokens_; }
  const std::vector<TokenId>& original() const { return original_; }
  const std::vector<PerturbationCandidate>& candidates() const { return candidates_; }
  const std::vector<std::size_t>& remaining() const { return remaining_; }
  const std::vector<std::size_t>& applied() const { return applied_; }
  std::size_t step() const { return applied_.size(); }
  std::size_t budget_used() const { return budget_used_; }

  /// Start of candidate j's span in the current document.
  std::size_t current_start(std::size_t j) const;

  enum class ApplyResult { Applied, Rejected };
  /// Applies candidate j (which must be remaining) unless that would push
  /// the consumed budget past `budget`.
  ApplyResult apply(std::size_t j, std::size_t budget);
  /// Undoes an applied candidate, returning it to the remaining set.
  void revert(std::size_t j);

 private:
  std::vector<TokenId> original_;
  std::vector<TokenId> tokens_;
  std::vector<PerturbationCandidate> candidates_;
  std::vector<std::size_t> remaining_;
  std::vector<std::size_t> applied_;
  std::vector<bool> is_applied_;
  std::size_t budget_used_ = 0;
};

/// Read-only components shared by every episode.
struct EpisodeContext {
  const SurrogateRanker* surrogate = nullptr;
  AttackTables tables;
  GeneratorConfig generator;
  const NaturalnessOracle* oracle = nullptr;
  RewardConfig reward;
};

/// One (query, document) attack target plus the documents its pairwise
/// loss is measured against.
struct EpisodeInput {
  const Query* query = nullptr;
  const Document* document = nullptr;
  std::vector<const Document*> others;
};

enum class EpisodeStrategy {
  Policy,          // indicator labels + aggregator selection
  SingleGranular,  // only one granularity competes with N
  Greedy,          // aggregator replaced by average-confidence order
  Triple,          // levels ranked by mean confidence, then visited in turn
  Random,          // uniform labels and uniform selection order
};

struct EpisodeOptions {
  EpisodeStrategy strategy = EpisodeStrategy::Policy;
  ActionMode action = ActionMode::Sample;
  Granularity single = Granularity::Word;
  /// Replay hooks: fixed labels and per-step indices into the remaining set.
  const std::vector<Granularity>* forced_labels = nullptr;
  const std::vector<std::size_t>* forced_choices = nullptr;
};

struct StepRecord {
  std::vector<std::size_t> remaining;  // candidate ids before selection
  Matrix hidden_part;                  // per remaining candidate, sum of h over its span / |p|
  std::size_t choice = 0;              // index into `remaining`
  std::size_t candidate = 0;           // candidate id
  std::size_t length = 0;              // |p|
  double log_prob = 0.0;
  double reward = 0.0;
  double score_before = 0.0;
  double score_after = 0.0;
  double similarity = 0.0;
  double fluency = 0.0;
  bool failed = false;    // surrogate score decreased
  bool rejected = false;  // budget (or similarity floor) exceeded; not applied
};

struct Trajectory {
  std::string query_id;
  std::string doc_id;
  Matrix features;  // indicator input, l x 3m
  Matrix u;         // confidences used for labelling and representations
  Labeling labeling;
  std::vector<PerturbationSpan> spans;
  std::vector<PerturbationCandidate> candidates;  // no-ops removed
  std::vector<StepRecord> steps;                  // includes a trailing rejected step, if any
  std::vector<TokenId> final_tokens;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::size_t budget_used = 0;

  /// Number of applied steps, T.
  std::size_t applied_steps() const;
  bool rejected() const { return !steps.empty() && steps.back().rejected; }
  std::vector<double> rewards() const;
  double log_prob() const;
  /// Per-granularity counts of applied perturbations (W, P, S).
  std::array<std::size_t, 3> granularity_counts() const;
};

Trajectory run_episode(const EpisodeContext& ctx, const Agents& agents, const EpisodeInput& input,
                       const EpisodeOptions& opts, Rng& rng);

/// Episode i uses the stream Rng(derive_seed(seed, i)). The serial version
/// is the reference implementation of the parallel one.
std::vector<Trajectory> run_episodes_serial(const EpisodeContext& ctx, const Agents& agents,
                                            std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                            std::uint64_t seed);
std::vector<Trajectory> run_episodes_parallel(const EpisodeContext& ctx, const Agents& agents,
                                              std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                              std::uint64_t seed);
std::vector<Trajectory> run_episodes(const EpisodeContext& ctx, const Agents& agents,
                                     std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                     std::uint64_t seed);

/// R^t = sum over t' >= t of gamma^(t'-t) r^t'.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// Recomputes log P(trajectory) from its recorded features and choices.
double trajectory_log_prob(const Agents& agents, const Trajectory& traj);

/// Adds label_weight * grad log p(labels) + sum_t step_weights[t] *
/// grad log pi(step t) into `grad` (flat Agents layout).
void accumulate_log_prob_gradient(const Agents& agents, const Trajectory& traj, std::span<const double> step_weights,
                                  double label_weight, std::span<double> grad);

/// Monte Carlo gradient of E[sum_t gamma^(t-1) r^t]:
///   (1/U) sum_u [ (R^{u,1} - b) grad log p(labels)
///                 + sum_t gamma^(t-1) (R^{u,t} - b) grad log pi(p^t) ].
std::vector<double> policy_gradient(const Agents& agents, std::span<const Trajectory> batch, double gamma,
                                    double baseline);

/// Discounted episode return R^1.
double episode_return(const Trajectory& traj, double gamma);

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// Gradient ascent step on `params`.
  void ascend(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;  // U
  double learning_rate = 0.003;
  OptimizerKind optimizer = OptimizerKind::Adam;
  bool use_baseline = true;
  double baseline_decay = 0.9;
  std::uint64_t seed = 2024;
};

struct TrainLogRecord {
  std::size_t epoch = 0;
  double mean_return = 0.0;
  double mean_steps = 0.0;
  double mean_budget = 0.0;
  double mean_score_gain = 0.0;
  double baseline = 0.0;
  std::string oracle_mode;
};

std::string to_json_line(const TrainLogRecord& rec);

struct TrainResult {
  Agents agents;
  std::vector<TrainLogRecord> log;
};

/// REINFORCE over shuffled batches of targets for `epochs` passes.
TrainResult train_agents(Agents agents, const EpisodeContext& ctx, std::span<const EpisodeInput> targets,
                         const TrainConfig& cfg, const std::function<void(const TrainLogRecord&)>& on_epoch = {});

}  // namespace mara

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mara/agents.hpp"
#include "mara/attacks.hpp"
#include "mara/config.hpp"
#include "mara/environment.hpp"
#include "mara/evaluation.hpp"
#include "mara/lm.hpp"
#include "mara/ranker.hpp"
#include "mara/synthetic.hpp"

namespace mara {

/// How the attack command turns indicator output into edits.
struct AttackMode {
  EpisodeStrategy strategy = EpisodeStrategy::Policy;
  Granularity single = Granularity::Word;

  /// "rl", "single-granular=W|P|S", "triple", "greedy" or "random".
  static AttackMode parse(const std::string& s);
  std::string name() const;
};

/// Typed view of every configuration key, with defaults.
struct Settings {
  std::filesystem::path workdir;

  SyntheticParams synthetic;
  std::size_t max_doc_len = kDefaultMaxDocLen;
  double lm_add_k = 0.1;
  std::size_t phrase_min_freq = 3;
  std::filesystem::path synonyms_file;  // empty: workdir/synonyms.tsv
  std::filesystem::path phrases_file;   // empty: workdir/phrases.tsv

  RankerShape shape;
  TargetTrainConfig target;
  DistillConfig distill;
  bool distill_ood = false;
  bool white_box = false;

  RewardConfig reward;
  GeneratorConfig generator;
  std::size_t policy_hidden = 32;
  std::uint64_t agent_seed = 2024;
  TrainConfig train;
  Difficulty train_difficulty = Difficulty::Mixture;
  std::size_t train_targets = 50;
  Difficulty eval_difficulty = Difficulty::Mixture;
  std::size_t eval_targets = 50;
  std::uint64_t target_selection_seed = 31;
  std::size_t num_others = 10;
  AttackMode mode;
  std::uint64_t attack_seed = 77;

  std::optional<ExternalOracleConfig> external_oracle;

  std::vector<std::size_t> topk = {5, 10};
  std::vector<double> spam_thresholds = {0.2, 0.15, 0.1, 0.05};
  std::size_t spam_window = kSpamWindow;

  std::string outcomes_file = "outcomes.jsonl";
  std::string report_file = "report";

  static Settings from_config(const Config& cfg);
  static const std::vector<std::string>& known_keys();

  std::filesystem::path path(const std::string& name) const { return workdir / name; }
};

/// Everything derived from the corpus files.
struct Benchmark {
  std::shared_ptr<const Corpus> corpus;
  std::vector<Query> queries;
  std::vector<Query> ood_queries;
  Qrels qrels;
  SynonymTable synonyms;
  PhraseTable phrases;
  std::shared_ptr<const BigramLM> lm;
  std::uint64_t fingerprint = 0;  // hash of the corpus, query and qrels contents

  const Query& query(const std::string& id) const;
};

/// Checkpoint config hashes; each covers the settings its artifact depends on.
std::uint64_t target_hash(const Settings& s, const Benchmark& b);
std::uint64_t surrogate_hash(const Settings& s, const Benchmark& b);
std::uint64_t agents_hash(const Settings& s, const Benchmark& b);

/// Generates the synthetic benchmark in memory.
Benchmark make_benchmark(const Settings& s);
/// Writes corpus.jsonl, queries.jsonl, ood_queries.jsonl, qrels.txt,
/// query_topics.txt, synonyms.tsv and phrases.tsv under the workdir.
void write_benchmark_files(const Settings& s);
Benchmark load_benchmark(const Settings& s);

TargetRanker build_target(const Benchmark& b, const Settings& s);
DistillResult build_surrogate(const TargetRanker& target, const Benchmark& b, const Settings& s);

/// Selected attack targets with their pairwise-loss comparison documents.
struct TargetSet {
  std::vector<EpisodeInput> inputs;
  std::vector<std::size_t> rank_before;
  std::vector<RankedList> lists;  // one top-100 list per input
};

TargetSet select_benchmark_targets(const TargetRanker& target, const Benchmark& b, Difficulty difficulty,
                                   std::size_t total, std::size_t num_others, std::uint64_t seed);

/// Owns the oracle and exposes an episode context over borrowed models.
class AttackSession {
 public:
  AttackSession(const Benchmark& b, const SurrogateRanker& surrogate, const Settings& s);
  const EpisodeContext& context() const { return ctx_; }

 private:
  NaturalnessOracle oracle_;
  EpisodeContext ctx_;
};

TrainResult train_attacker(const Benchmark& b, const SurrogateRanker& surrogate, const TargetSet& targets,
                           const Settings& s, const std::function<void(const TrainLogRecord&)>& on_epoch = {});

/// Frozen-policy attack over `targets`, ranks measured by the black-box target.
std::vector<AttackOutcome> run_attack(const Benchmark& b, const TargetRanker& target, const SurrogateRanker& surrogate,
                                      const Agents& agents, const TargetSet& targets, const Settings& s,
                                      const AttackMode& mode);

struct FullReport {
  MetricsReport metrics;
  ScreeningReport screening;
  std::string mode;
};

FullReport evaluate_outcomes(const std::vector<AttackOutcome>& outcomes, const Benchmark& b, const Settings& s);
std::string report_json(const FullReport& r);
FullReport report_from_json(const std::string& text);
std::string report_table(const FullReport& r);

/// File-level commands used by the CLI.
void command_gen_corpus(const Settings& s);
void command_train_target(const Settings& s);
void command_distill_surrogate(const Settings& s);
void command_train_attacker(const Settings& s);
void command_attack(const Settings& s);
void command_evaluate(const Settings& s);
void command_report(const Settings& s);

}  // namespace mara

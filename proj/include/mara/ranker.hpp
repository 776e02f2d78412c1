#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mara/checkpoint.hpp"
#include "mara/common.hpp"
#include "mara/corpus.hpp"

namespace mara {

struct RankerShape {
  std::size_t vocab_size = 0;
  std::size_t dim = 32;     // m, embedding and hidden-state width
  std::size_t hidden = 32;  // scorer hidden layer width

  std::uint64_t hash() const;
};

/// Parameters of the mean-embedding interaction scorer. Also used as the
/// gradient accumulator for training (same shapes).
struct RankerParams {
  Matrix embeddings;             // |V| x m
  Matrix encoder_w;              // m x m
  std::vector<double> encoder_b; // m
  Matrix w1;                     // hidden x 3m
  std::vector<double> b1;        // hidden
  std::vector<double> w2;        // hidden
  double b2 = 0.0;

  static RankerParams zeros(const RankerShape& shape);
  /// this += scale * other
  void axpy(double scale, const RankerParams& other);
  bool all_finite() const;
};

/// Gradient of the score with respect to the two mean embeddings.
struct MeanGradient {
  std::vector<double> query;
  std::vector<double> doc;
};

/// Trainable, differentiable ranker:
///   f(q, d) = w2 . relu(W1 [e_q ; e_d ; e_q * e_d] + b1) + b2
/// where e_x is the mean token embedding. A separate position-free encoder
/// h_i = tanh(Wh x_i + bh) exposes per-token hidden states.
class SurrogateRanker {
 public:
  SurrogateRanker() = default;
  /// Random initialisation; embeddings are drawn N(0, embedding_scale^2).
  SurrogateRanker(const RankerShape& shape, std::uint64_t seed, double embedding_scale = 0.5);
  SurrogateRanker(const RankerShape& shape, RankerParams params);

  const RankerShape& shape() const { return shape_; }
  std::size_t dim() const { return shape_.dim; }
  const RankerParams& params() const { return params_; }
  RankerParams& mutable_params() { return params_; }

  std::span<const double> embedding(TokenId t) const;
  /// Sum of token embeddings (out must have size m; it is overwritten).
  void embedding_sum(std::span<const TokenId> tokens, std::span<double> out) const;
  std::vector<double> mean_embedding(std::span<const TokenId> tokens) const;
  /// Per-token embedding rows, l x m.
  Matrix embed(std::span<const TokenId> tokens) const;

  double score(std::span<const TokenId> query, std::span<const TokenId> doc) const;
  double score(const Query& q, const Document& d) const { return score(q.tokens, d.tokens); }
  double score_means(std::span<const double> query_mean, std::span<const double> doc_mean) const;
  /// Scores explicit per-token input vectors (rows), bypassing the table.
  double score_inputs(const Matrix& query_inputs, const Matrix& doc_inputs) const;

  MeanGradient mean_gradient(std::span<const double> query_mean, std::span<const double> doc_mean) const;
  /// d score / d x_i for each document position i (rows), l x m.
  Matrix doc_input_gradient(std::span<const TokenId> query, std::span<const TokenId> doc) const;

  /// Adds weight * d score / d params into `grad`, including the embedding
  /// rows of every query and document token.
  void accumulate_param_gradient(std::span<const TokenId> query, std::span<const TokenId> doc, double weight,
                                 RankerParams& grad) const;

  Matrix hidden_states(std::span<const TokenId> doc) const;

  Checkpoint to_checkpoint(const std::string& kind, std::uint64_t config_hash) const;
  static SurrogateRanker from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Forward {
    std::vector<double> z;    // 3m interaction features
    std::vector<double> pre;  // hidden pre-activations
    double score = 0.0;
  };
  Forward forward(std::span<const double> qm, std::span<const double> dm) const;

  RankerShape shape_;
  RankerParams params_;
};

/// Ordered result of a black-box ranking call: ids and 1-based positions only.
class RankedList {
 public:
  RankedList() = default;
  RankedList(std::string query_id, std::vector<std::string> ordered);

  const std::string& query_id() const { return query_id_; }
  const std::vector<std::string>& ids() const { return ordered_; }
  std::size_t size() const { return ordered_.size(); }
  /// 1-based rank; throws if absent.
  std::size_t position(const std::string& doc_id) const;
  bool contains(const std::string& doc_id) const { return pos_.count(doc_id) > 0; }
  const std::string& at_rank(std::size_t rank) const { return ordered_.at(rank - 1); }

 private:
  std::string query_id_;
  std::vector<std::string> ordered_;
  std::unordered_map<std::string, std::size_t> pos_;
};

/// The attacked model. Only rank positions leave this class.
class TargetRanker {
 public:
  TargetRanker(SurrogateRanker scorer, std::shared_ptr<const Corpus> corpus);

  /// Top-k of `candidates` by the hidden scorer; ties by lexical query-term
  /// overlap (more first), then doc id.
  RankedList rank(const Query& q, std::span<const std::string> candidates, std::size_t k) const;
  /// As rank(), with `doc_id`'s content replaced by `replacement`.
  RankedList rank_with_replacement(const Query& q, std::span<const std::string> candidates, std::size_t k,
                                   const std::string& doc_id, std::span<const TokenId> replacement) const;
  /// Ranks the whole corpus and keeps the top k.
  RankedList retrieve(const Query& q, std::size_t k) const;

  const Corpus& corpus() const { return *corpus_; }
  std::shared_ptr<const Corpus> corpus_ptr() const { return corpus_; }

 private:
  RankedList rank_impl(const Query& q, std::span<const std::string> candidates, std::size_t k,
                       const std::string* replaced_id, std::span<const TokenId> replacement) const;

  SurrogateRanker scorer_;
  std::shared_ptr<const Corpus> corpus_;
  Matrix doc_means_;

  friend SurrogateRanker white_box_scorer(const TargetRanker& target);
  friend Checkpoint target_checkpoint(const TargetRanker& target, std::uint64_t config_hash);
};

/// The target's own scorer, for white-box comparison runs.
SurrogateRanker white_box_scorer(const TargetRanker& target);
Checkpoint target_checkpoint(const TargetRanker& target, std::uint64_t config_hash);
TargetRanker target_from_checkpoint(const Checkpoint& ckpt, std::shared_ptr<const Corpus> corpus);

inline constexpr double kHingeMargin = 1.0;

/// Sum over others of max(0, 1 - f(q,d) + f(q,d')).
double pairwise_loss(const SurrogateRanker& r, const Query& q, const Document& d,
                     std::span<const Document* const> others);

/// d L_pair / d x_i averaged over the |others| pairs, one row per position.
Matrix doc_token_gradients(const SurrogateRanker& r, const Query& q, const Document& d,
                           std::span<const Document* const> others);

struct TargetTrainConfig {
  RankerShape shape;
  std::uint64_t seed = 1234;
  double embedding_scale = 0.5;
  std::size_t epochs = 100;
  std::size_t pairs_per_query = 400;
  double learning_rate = 0.05;
};

/// Fits the target scorer to graded relevance with the pairwise hinge loss.
TargetRanker train_target(std::shared_ptr<const Corpus> corpus, const std::vector<Query>& queries, const Qrels& qrels,
                          const TargetTrainConfig& cfg);

struct DistillConfig {
  RankerShape shape;
  std::uint64_t seed = 99;
  double embedding_scale = 0.2;
  std::size_t epochs = 400;
  std::size_t depth = 200;  // pseudo-relevance list depth
  std::size_t gap = 10;     // minimum rank gap of a training pair
  double learning_rate = 10.0;  // initial step; halved whenever a step would raise the loss
  /// L2 penalty (weight_decay / 2) * |theta|^2 added to the mean hinge loss.
  double weight_decay = 1e-3;
  /// Documents whose corpus index i has i % stride == stride - 1 never
  /// enter a training pair (0 keeps every document).
  std::size_t holdout_stride = 5;
};

bool is_heldout_document(std::size_t corpus_index, std::size_t holdout_stride);

struct DistillResult {
  SurrogateRanker surrogate;
  std::vector<double> epoch_loss;  // training objective before each update, plus final
  std::size_t pair_count = 0;
};

/// Pseudo-relevance-feedback distillation: the target's top-`depth` list
/// for each query yields (higher, lower) pairs with rank gap >= `gap`, fit
/// by full-batch gradient descent on the mean hinge loss.
DistillResult distill_surrogate(const TargetRanker& target, const std::vector<Query>& queries,
                                const DistillConfig& cfg);

/// Kendall tau between two score vectors (pairs tied in either count zero).
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Mean per-query Kendall tau between surrogate scores and the target's
/// ranking over the target's top-`depth` list (depth 0 = whole corpus),
/// restricted to held-out documents when `holdout_stride` is non-zero.
double ranking_agreement(const SurrogateRanker& surrogate, const TargetRanker& target,
                         const std::vector<Query>& queries, std::size_t depth = 0, std::size_t holdout_stride = 0);

}  // namespace mara

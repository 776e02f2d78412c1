#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mara/attacks.hpp"
#include "mara/checkpoint.hpp"
#include "mara/common.hpp"

namespace mara {

/// Two-layer tanh perceptron with all parameters in one flat vector:
/// [W1 (hidden x in) | b1 | W2 (out x hidden) | b2].
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out);

  /// W1 ~ N(0, 1/in), W2 ~ N(0, out_scale^2 / hidden), biases zero.
  void init(Rng& rng, double out_scale);

  std::size_t in() const { return in_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t out() const { return out_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void forward(std::span<const double> x, std::span<double> out) const;
  /// Adds d(dout . y)/dparams to `grad` and, when non-empty, d/dx to `dx`.
  void backward(std::span<const double> x, std::span<const double> dout, std::span<double> grad,
                std::span<double> dx) const;

 private:
  std::size_t in_ = 0, hidden_ = 0, out_ = 0;
  std::vector<double> params_;
};

/// Sub-agent: maps per-position features to confidences over {W,P,S,N}.
struct IndicatorPolicy {
  Mlp net;
  IndicatorPolicy() = default;
  /// Feature width 3m.
  IndicatorPolicy(std::size_t dim, std::size_t hidden);
  std::size_t dim() const { return net.in() / 3; }
};

/// Meta-agent: maps a span representation of width m+4 to one logit.
struct AggregatorPolicy {
  Mlp net;
  AggregatorPolicy() = default;
  AggregatorPolicy(std::size_t dim, std::size_t hidden);
  std::size_t dim() const { return net.in() - kNumLabels; }
};

struct Agents {
  IndicatorPolicy indicator;
  AggregatorPolicy aggregator;

  static Agents create(std::size_t dim, std::size_t hidden, std::uint64_t seed);
  std::size_t param_count() const { return indicator.net.param_count() + aggregator.net.param_count(); }
  /// Indicator parameters followed by aggregator parameters.
  std::vector<double> flat() const;
  void set_flat(std::span<const double> v);

  Checkpoint to_checkpoint(std::uint64_t config_hash) const;
  static Agents from_checkpoint(const Checkpoint& ckpt);
};

/// Per-position indicator features [g_i ; x_i ; g_i * x_i], l x 3m, where
/// g_i is the token gradient rescaled by the document length l.
Matrix indicator_features(const Matrix& gradients, const Matrix& embeddings);

/// Softmax confidences u, one row of 4 per position (l x 4).
Matrix predict_distribution(const IndicatorPolicy& pol, const Matrix& features);
/// Convenience form taking the gradient and embedding matrices directly.
Matrix predict_distribution(const IndicatorPolicy& pol, const Matrix& gradients, const Matrix& embeddings);

enum class ActionMode { Sample, Argmax };

struct Labeling {
  std::vector<Granularity> labels;
  double log_prob = 0.0;
};

/// Samples (or argmaxes, ties resolved to N) one label per position.
/// log_prob is the sum of log u_i[c_i].
Labeling label_positions(const Matrix& u, ActionMode mode, Rng& rng);

/// Merges label runs into spans and repairs them to the length windows.
/// Result is sorted, disjoint, window-compliant, has fewer spans than
/// labels, and decoding the labels it induces returns it unchanged.
std::vector<PerturbationSpan> decode_spans(std::span<const Granularity> labels,
                                           std::span<const SentenceBound> sentence_bounds);

/// Labels covered by `spans` (N elsewhere).
std::vector<Granularity> labels_from_spans(std::span<const PerturbationSpan> spans, std::size_t length);

/// e_j = sum over span positions o of [h_o ; u_o], divided by |p_j|.
/// `h_start` locates the span in the current hidden states and `u_start`
/// in the original confidences (they differ once earlier edits shift it).
std::vector<double> span_representation(const Matrix& h, std::size_t h_start, const Matrix& u, std::size_t u_start,
                                        std::size_t span_length, std::size_t replacement_length);
std::vector<double> span_representation(const Matrix& h, const Matrix& u, const PerturbationSpan& span,
                                        std::size_t replacement_length);

struct Selection {
  std::size_t index = 0;
  double log_prob = 0.0;
};

/// Softmax over the aggregator logits of `reps` (rows); ties under argmax
/// go to the lower index.
Selection select_perturbation(const AggregatorPolicy& pol, const Matrix& reps, ActionMode mode, Rng& rng);
std::vector<double> selection_probabilities(const AggregatorPolicy& pol, const Matrix& reps);

}  // namespace mara

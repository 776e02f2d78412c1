#include "mara/environment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "httplib.h"
#include "mara/kernels.hpp"
#include "json.hpp"

namespace mara {

void RewardConfig::validate() const {
  if (!(xi > 0.0)) throw Error("reward: xi must be positive");
  if (!(beta >= 0.0)) throw Error("reward: beta must be non-negative");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("reward: gamma must be in [0, 1)");
  if (budget < 1) throw Error("reward: budget must be at least 1");
  if (similarity_floor && !(*similarity_floor >= 0.0 && *similarity_floor <= 1.0))
    throw Error("reward: similarity floor must be in [0, 1]");
}

double step_reward(const RewardConfig& cfg, double f_prev, double f_cur, std::size_t perturbation_length, double r_sim,
                   double r_flu) {
  if (perturbation_length == 0) throw Error("step_reward: perturbation length must be positive");
  if (f_cur < f_prev) return -cfg.xi;
  return (f_cur - f_prev) / static_cast<double>(perturbation_length) + cfg.beta * (r_sim + r_flu);
}

NaturalnessOracle::NaturalnessOracle(const SurrogateRanker& embeddings, const BigramLM& lm, const Vocabulary* vocab)
    : embeddings_(&embeddings), lm_(&lm), vocab_(vocab) {}

void NaturalnessOracle::use_external(ExternalOracleConfig cfg) {
  if (!vocab_) throw Error("external oracle needs a vocabulary to render text");
  if (!(cfg.score_max > cfg.score_min)) throw Error("external oracle: score_max must exceed score_min");
  if (cfg.timeout_seconds <= 0.0) throw Error("external oracle: timeout must be positive");
  external_ = std::move(cfg);
}

NaturalnessScores NaturalnessOracle::local(std::span<const TokenId> original, std::span<const TokenId> perturbed) const {
  if (original.empty() || perturbed.empty()) throw Error("naturalness: empty document");
  NaturalnessScores s;
  const auto a = embeddings_->mean_embedding(original);
  const auto b = embeddings_->mean_embedding(perturbed);
  const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  double cos = 0.0;
  if (na > 0.0 && nb > 0.0) cos = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  else if (a == b) cos = 1.0;
  s.similarity = (1.0 + cos) / 2.0;
  const double ratio = lm_->perplexity(perturbed) / lm_->perplexity(original);
  s.fluency = std::exp(-std::max(0.0, ratio - 1.0));
  return s;
}

std::optional<NaturalnessScores> NaturalnessOracle::remote(std::span<const TokenId> original,
                                                           std::span<const TokenId> perturbed) const {
  const auto& cfg = *external_;
  const nlohmann::json body{{"original", detokenize(original, *vocab_)},
                            {"perturbed", detokenize(perturbed, *vocab_)},
                            {"requests", {"similarity", "fluency"}}};
  const auto secs = static_cast<time_t>(cfg.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg.timeout_seconds - static_cast<double>(secs)) * 1e6);
  auto rescale = [&](double x) { return std::clamp((x - cfg.score_min) / (cfg.score_max - cfg.score_min), 0.0, 1.0); };
  for (int attempt = 0; attempt <= std::max(0, cfg.retries); ++attempt) {
    httplib::Client cli(cfg.host, cfg.port);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(cfg.path, body.dump(), "application/json");
    if (!res || res->status != 200) continue;
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("similarity") || !j.contains("fluency") ||
        !j["similarity"].is_number() || !j["fluency"].is_number())
      continue;
    return NaturalnessScores{rescale(j["similarity"].get<double>()), rescale(j["fluency"].get<double>())};
  }
  return std::nullopt;
}

NaturalnessScores NaturalnessOracle::evaluate(std::span<const TokenId> original,
                                              std::span<const TokenId> perturbed) const {
  if (external_) {
    if (auto s = remote(original, perturbed)) return *s;
    log_warning("external naturalness oracle unavailable at " + external_->host + ":" +
                std::to_string(external_->port) + external_->path + "; using local scores");
  }
  return local(original, perturbed);
}

double NaturalnessOracle::similarity(std::span<const TokenId> original, std::span<const TokenId> perturbed) const {
  return evaluate(original, perturbed).similarity;
}

double NaturalnessOracle::fluency(std::span<const TokenId> original, std::span<const TokenId> perturbed) const {
  return evaluate(original, perturbed).fluency;
}

AttackState::AttackState(std::span<const TokenId> original, std::vector<PerturbationCandidate> candidates)
    : original_(original.begin(), original.end()),
      tokens_(original.begin(), original.end()),
      candidates_(std::move(candidates)),
      is_applied_(candidates_.size(), false) {
  for (std::size_t j = 0; j < candidates_.size(); ++j) {
    const auto& s = candidates_[j].span;
    if (s.start >= s.end || s.end > original_.size()) throw Error("AttackState: candidate span out of bounds");
    if (candidates_[j].replacement.empty()) throw Error("AttackState: empty replacement");
    for (std::size_t k = 0; k < j; ++k) {
      const auto& o = candidates_[k].span;
      if (s.start < o.end && o.start < s.end) throw Error("AttackState: overlapping candidate spans");
    }
    remaining_.push_back(j);
  }
}

std::size_t AttackState::current_start(std::size_t j) const {
  const auto& s = candidates_.at(j).span;
  std::ptrdiff_t shift = 0;
  for (std::size_t k : applied_) {
    const auto& c = candidates_[k];
    if (c.span.start < s.start)
      shift += static_cast<std::ptrdiff_t>(c.replacement.size()) - static_cast<std::ptrdiff_t>(c.span.length());
  }
  return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(s.start) + shift);
}

AttackState::ApplyResult AttackState::apply(std::size_t j, std::size_t budget) {
  auto it = std::find(remaining_.begin(), remaining_.end(), j);
  if (it == remaining_.end()) throw Error("AttackState::apply: candidate not remaining");
  const auto& c = candidates_[j];
  if (budget_used_ + c.replacement.size() > budget) return ApplyResult::Rejected;
  const std::size_t at = current_start(j);
  const auto first = tokens_.begin() + static_cast<std::ptrdiff_t>(at);
  tokens_.erase(first, first + static_cast<std::ptrdiff_t>(c.span.length()));
  tokens_.insert(tokens_.begin() + static_cast<std::ptrdiff_t>(at), c.replacement.begin(), c.replacement.end());
  remaining_.erase(it);
  applied_.push_back(j);
  is_applied_[j] = true;
  budget_used_ += c.replacement.size();
  return ApplyResult::Applied;
}

void AttackState::revert(std::size_t j) {
  auto it = std::find(applied_.begin(), applied_.end(), j);
  if (it == applied_.end()) throw Error("AttackState::revert: candidate not applied");
  const auto& c = candidates_[j];
  const std::size_t at = current_start(j);
  const auto first = tokens_.begin() + static_cast<std::ptrdiff_t>(at);
  tokens_.erase(first, first + static_cast<std::ptrdiff_t>(c.replacement.size()));
  tokens_.insert(tokens_.begin() + static_cast<std::ptrdiff_t>(at),
                 original_.begin() + static_cast<std::ptrdiff_t>(c.span.start),
                 original_.begin() + static_cast<std::ptrdiff_t>(c.span.end));
  applied_.erase(it);
  is_applied_[j] = false;
  budget_used_ -= c.replacement.size();
  remaining_.insert(std::lower_bound(remaining_.begin(), remaining_.end(), j), j);
}

std::size_t Trajectory::applied_steps() const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) { return !s.rejected; }));
}

std::vector<double> Trajectory::rewards() const {
  std::vector<double> r;
  r.reserve(steps.size());
  for (const auto& s : steps) r.push_back(s.reward);
  return r;
}

double Trajectory::log_prob() const {
  double lp = labeling.log_prob;
  for (const auto& s : steps) lp += s.log_prob;
  return lp;
}

std::array<std::size_t, 3> Trajectory::granularity_counts() const {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& s : steps)
    if (!s.rejected) ++c[static_cast<std::size_t>(candidates[s.candidate].span.granularity)];
  return c;
}

namespace {

Matrix uniform_confidences(std::size_t l) { return Matrix(l, kNumLabels, 1.0 / static_cast<double>(kNumLabels)); }

// Appends [hidden_part_j ; sum of u over span_j / |p_j|] as the row of e_j.
void fill_representation(std::span<double> e, std::span<const double> hidden_part, const Matrix& u,
                         const PerturbationCandidate& c) {
  const std::size_t m = hidden_part.size();
  std::copy(hidden_part.begin(), hidden_part.end(), e.begin());
  const double inv = 1.0 / static_cast<double>(c.replacement.size());
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    double s = 0.0;
    for (std::size_t o = c.span.start; o < c.span.end; ++o) s += u(o, k);
    e[m + k] = s * inv;
  }
}

Matrix step_representations(const StepRecord& step, const Matrix& u, const std::vector<PerturbationCandidate>& cands) {
  const std::size_t m = step.hidden_part.cols;
  Matrix reps(step.remaining.size(), m + kNumLabels);
  for (std::size_t r = 0; r < step.remaining.size(); ++r)
    fill_representation(reps.row(r), step.hidden_part.row(r), u, cands[step.remaining[r]]);
  return reps;
}

// Granularities present among the candidates, by mean span confidence
// (highest first, ties to the finer level).
std::vector<Granularity> levels_by_confidence(const std::vector<PerturbationCandidate>& cands) {
  std::array<double, 3> sum{0, 0, 0};
  std::array<std::size_t, 3> count{0, 0, 0};
  for (const auto& c : cands) {
    const auto g = static_cast<std::size_t>(c.span.granularity);
    sum[g] += c.span.confidence;
    ++count[g];
  }
  std::vector<Granularity> out;
  for (std::size_t g = 0; g < 3; ++g)
    if (count[g]) out.push_back(static_cast<Granularity>(g));
  auto mean = [&](Granularity g) {
    const auto k = static_cast<std::size_t>(g);
    return sum[k] / static_cast<double>(count[k]);
  };
  std::stable_sort(out.begin(), out.end(), [&](Granularity a, Granularity b) { return mean(a) > mean(b); });
  return out;
}

// Step t visits the levels in turn and takes that level's most confident
// remaining span; exhausted levels are skipped.
std::size_t triple_choice(const std::vector<PerturbationCandidate>& cands, const std::vector<std::size_t>& remaining,
                          const std::vector<Granularity>& levels, std::size_t t) {
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const Granularity g = levels[(t + k) % levels.size()];
    std::size_t best = remaining.size();
    for (std::size_t r = 0; r < remaining.size(); ++r) {
      const auto& c = cands[remaining[r]];
      if (c.span.granularity != g) continue;
      if (best == remaining.size() || c.span.confidence > cands[remaining[best]].span.confidence) best = r;
    }
    if (best < remaining.size()) return best;
  }
  throw Error("triple_choice: no remaining candidate");
}

}  // namespace

Trajectory run_episode(const EpisodeContext& ctx, const Agents& agents, const EpisodeInput& input,
                       const EpisodeOptions& opts, Rng& rng) {
  if (!ctx.surrogate || !ctx.oracle || !input.query || !input.document) throw Error("run_episode: incomplete context");
  const SurrogateRanker& r = *ctx.surrogate;
  const Query& q = *input.query;
  const Document& d0 = *input.document;
  const std::size_t l = d0.tokens.size();
  if (l == 0) throw Error("run_episode: empty document");

  Trajectory tr;
  tr.query_id = q.id;
  tr.doc_id = d0.id;
  const Matrix g = input.others.empty() ? Matrix(l, r.dim()) : doc_token_gradients(r, q, d0, input.others);
  tr.features = indicator_features(g, r.embed(d0.tokens));

  // labels
  if (opts.strategy == EpisodeStrategy::Random) {
    tr.u = uniform_confidences(l);
  } else {
    tr.u = predict_distribution(agents.indicator, tr.features);
    if (opts.strategy == EpisodeStrategy::SingleGranular) {
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t k = 0; k + 1 < kNumLabels; ++k)
          if (k != static_cast<std::size_t>(opts.single)) tr.u(i, k) = 0.0;
    }
  }
  if (opts.forced_labels) {
    if (opts.forced_labels->size() != l) throw Error("run_episode: forced labels have the wrong length");
    tr.labeling.labels = *opts.forced_labels;
    for (std::size_t i = 0; i < l; ++i) tr.labeling.log_prob += std::log(tr.u(i, static_cast<std::size_t>(tr.labeling.labels[i])));
  } else {
    const ActionMode mode = opts.strategy == EpisodeStrategy::Random ? ActionMode::Sample : opts.action;
    tr.labeling = label_positions(tr.u, mode, rng);
  }
  tr.spans = decode_spans(tr.labeling.labels, d0.sentence_bounds);
  if (opts.strategy == EpisodeStrategy::SingleGranular)
    std::erase_if(tr.spans, [&](const PerturbationSpan& s) { return s.granularity != opts.single; });
  for (auto& s : tr.spans) {
    double c = 0.0;
    for (std::size_t i = s.start; i < s.end; ++i) c += tr.u(i, static_cast<std::size_t>(s.granularity));
    s.confidence = c / static_cast<double>(s.length());
  }

  auto all = generate_candidates(r, q, d0, tr.spans, ctx.tables, ctx.generator);
  for (auto& c : all)
    if (!c.no_op) tr.candidates.push_back(std::move(c));

  const auto qm = r.mean_embedding(q.tokens);
  auto score_of = [&](std::span<const TokenId> doc) { return r.score_means(qm, r.mean_embedding(doc)); };
  tr.initial_score = score_of(d0.tokens);
  tr.final_score = tr.initial_score;
  tr.final_tokens = d0.tokens;
  if (tr.candidates.empty()) return tr;

  AttackState state(d0.tokens, tr.candidates);
  const auto level_order = levels_by_confidence(tr.candidates);
  double f_prev = tr.initial_score;
  const std::size_t m = r.dim();
  while (!state.remaining().empty()) {
    StepRecord step;
    step.remaining = state.remaining();
    const Matrix h = r.hidden_states(state.tokens());
    step.hidden_part = Matrix(step.remaining.size(), m);
    for (std::size_t k = 0; k < step.remaining.size(); ++k) {
      const std::size_t j = step.remaining[k];
      const auto& c = tr.candidates[j];
      const std::size_t at = state.current_start(j);
      const double inv = 1.0 / static_cast<double>(c.replacement.size());
      for (std::size_t o = 0; o < c.span.length(); ++o)
        for (std::size_t x = 0; x < m; ++x) step.hidden_part(k, x) += h(at + o, x) * inv;
    }

    const std::size_t n = step.remaining.size();
    if (opts.forced_choices) {
      if (tr.steps.size() >= opts.forced_choices->size()) throw Error("run_episode: forced choices exhausted");
      step.choice = (*opts.forced_choices)[tr.steps.size()];
      if (step.choice >= n) throw Error("run_episode: forced choice out of range");
      const auto p = selection_probabilities(agents.aggregator, step_representations(step, tr.u, tr.candidates));
      step.log_prob = std::log(p[step.choice]);
    } else if (opts.strategy == EpisodeStrategy::Greedy) {
      for (std::size_t k = 1; k < n; ++k)
        if (tr.candidates[step.remaining[k]].span.confidence > tr.candidates[step.remaining[step.choice]].span.confidence)
          step.choice = k;
    } else if (opts.strategy == EpisodeStrategy::Triple) {
      step.choice = triple_choice(tr.candidates, step.remaining, level_order, tr.steps.size());
    } else if (opts.strategy == EpisodeStrategy::Random) {
      step.choice = static_cast<std::size_t>(rng() % n);
      step.log_prob = -std::log(static_cast<double>(n));
    } else {
      const auto sel =
          select_perturbation(agents.aggregator, step_representations(step, tr.u, tr.candidates), opts.action, rng);
      step.choice = sel.index;
      step.log_prob = sel.log_prob;
    }
    step.candidate = step.remaining[step.choice];
    step.length = tr.candidates[step.candidate].replacement.size();
    step.score_before = f_prev;

    if (state.apply(step.candidate, ctx.reward.budget) == AttackState::ApplyResult::Rejected) {
      step.rejected = true;
      step.score_after = f_prev;
      tr.steps.push_back(std::move(step));
      break;
    }
    const auto nat = ctx.oracle->evaluate(d0.tokens, state.tokens());
    if (ctx.reward.similarity_floor && nat.similarity < *ctx.reward.similarity_floor) {
      state.revert(step.candidate);
      step.rejected = true;
      step.score_after = f_prev;
      tr.steps.push_back(std::move(step));
      break;
    }
    const double f_cur = score_of(state.tokens());
    step.score_after = f_cur;
    step.similarity = nat.similarity;
    step.fluency = nat.fluency;
    step.failed = f_cur < f_prev;
    step.reward = step_reward(ctx.reward, f_prev, f_cur, step.length, nat.similarity, nat.fluency);
    f_prev = f_cur;
    tr.steps.push_back(std::move(step));
  }
  tr.final_tokens = state.tokens();
  tr.final_score = f_prev;
  tr.budget_used = state.budget_used();
  return tr;
}

std::vector<Trajectory> run_episodes_serial(const EpisodeContext& ctx, const Agents& agents,
                                            std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                            std::uint64_t seed) {
  std::vector<Trajectory> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    out.push_back(run_episode(ctx, agents, inputs[i], opts, rng));
  }
  return out;
}

std::vector<Trajectory> run_episodes_parallel(const EpisodeContext& ctx, const Agents& agents,
                                              std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                              std::uint64_t seed) {
  std::vector<Trajectory> out(inputs.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      out[static_cast<std::size_t>(i)] = run_episode(ctx, agents, inputs[static_cast<std::size_t>(i)], opts, rng);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<Trajectory> run_episodes(const EpisodeContext& ctx, const Agents& agents,
                                     std::span<const EpisodeInput> inputs, const EpisodeOptions& opts,
                                     std::uint64_t seed) {
  if (inputs.size() > 1 && kernels::max_threads() > 1) return run_episodes_parallel(ctx, agents, inputs, opts, seed);
  return run_episodes_serial(ctx, agents, inputs, opts, seed);
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

double episode_return(const Trajectory& traj, double gamma) {
  const auto r = traj.rewards();
  return r.empty() ? 0.0 : discounted_returns(r, gamma)[0];
}

double trajectory_log_prob(const Agents& agents, const Trajectory& traj) {
  const Matrix u = predict_distribution(agents.indicator, traj.features);
  double lp = 0.0;
  for (std::size_t i = 0; i < u.rows; ++i) lp += std::log(u(i, static_cast<std::size_t>(traj.labeling.labels[i])));
  for (const auto& step : traj.steps) {
    const auto p = selection_probabilities(agents.aggregator, step_representations(step, u, traj.candidates));
    lp += std::log(p[step.choice]);
  }
  return lp;
}

void accumulate_log_prob_gradient(const Agents& agents, const Trajectory& traj, std::span<const double> step_weights,
                                  double label_weight, std::span<double> grad) {
  if (step_weights.size() != traj.steps.size()) throw Error("accumulate_log_prob_gradient: weight count mismatch");
  if (grad.size() != agents.param_count()) throw Error("accumulate_log_prob_gradient: gradient size mismatch");
  const auto& ind = agents.indicator.net;
  const auto& agg = agents.aggregator.net;
  const std::size_t l = traj.features.rows;
  const Matrix u = predict_distribution(agents.indicator, traj.features);
  const auto ind_grad = grad.subspan(0, ind.param_count());
  const auto agg_grad = grad.subspan(ind.param_count());

  // d objective / d u from the selection terms
  Matrix du(l, kNumLabels);
  const std::size_t width = agg.in();
  std::vector<double> dx(width);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const double w = step_weights[t];
    if (w == 0.0) continue;
    const auto& step = traj.steps[t];
    const Matrix reps = step_representations(step, u, traj.candidates);
    const auto p = selection_probabilities(agents.aggregator, reps);
    for (std::size_t k = 0; k < reps.rows; ++k) {
      const double dlogit = w * ((k == step.choice ? 1.0 : 0.0) - p[k]);
      if (dlogit == 0.0) continue;
      std::fill(dx.begin(), dx.end(), 0.0);
      agg.backward(reps.row(k), std::span<const double>(&dlogit, 1), agg_grad, dx);
      const auto& c = traj.candidates[step.remaining[k]];
      const double inv = 1.0 / static_cast<double>(c.replacement.size());
      const std::size_t m = width - kNumLabels;
      for (std::size_t o = c.span.start; o < c.span.end; ++o)
        for (std::size_t y = 0; y < kNumLabels; ++y) du(o, y) += dx[m + y] * inv;
    }
  }

  // back through the softmax and the indicator network
  std::array<double, kNumLabels> dlogits{};
  for (std::size_t i = 0; i < l; ++i) {
    const auto ui = u.row(i);
    double inner = 0.0;
    for (std::size_t y = 0; y < kNumLabels; ++y) inner += du(i, y) * ui[y];
    const auto c = static_cast<std::size_t>(traj.labeling.labels[i]);
    bool any = false;
    for (std::size_t y = 0; y < kNumLabels; ++y) {
      dlogits[y] = ui[y] * (du(i, y) - inner) + label_weight * ((y == c ? 1.0 : 0.0) - ui[y]);
      any |= dlogits[y] != 0.0;
    }
    if (any) ind.backward(traj.features.row(i), dlogits, ind_grad, {});
  }
}

std::vector<double> policy_gradient(const Agents& agents, std::span<const Trajectory> batch, double gamma,
                                    double baseline) {
  if (batch.empty()) throw Error("policy_gradient: empty batch");
  std::vector<double> grad(agents.param_count(), 0.0);
  const double inv_u = 1.0 / static_cast<double>(batch.size());
  for (const auto& traj : batch) {
    const auto rewards = traj.rewards();
    const auto ret = discounted_returns(rewards, gamma);
    std::vector<double> w(ret.size());
    double disc = 1.0;
    for (std::size_t t = 0; t < ret.size(); ++t) {
      w[t] = inv_u * disc * (ret[t] - baseline);
      disc *= gamma;
    }
    const double label_w = inv_u * ((ret.empty() ? 0.0 : ret[0]) - baseline);
    accumulate_log_prob_gradient(agents, traj, w, label_w, grad);
  }
  return grad;
}

AdamOptimizer::AdamOptimizer(std::size_t n, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::ascend(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw Error("AdamOptimizer: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] += lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::string to_json_line(const TrainLogRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["mean_return"] = rec.mean_return;
  j["mean_steps"] = rec.mean_steps;
  j["mean_budget"] = rec.mean_budget;
  j["mean_score_gain"] = rec.mean_score_gain;
  j["baseline"] = rec.baseline;
  j["oracle_mode"] = rec.oracle_mode;
  return j.dump();
}

TrainResult train_agents(Agents agents, const EpisodeContext& ctx, std::span<const EpisodeInput> targets,
                         const TrainConfig& cfg, const std::function<void(const TrainLogRecord&)>& on_epoch) {
  ctx.reward.validate();
  if (targets.empty()) throw Error("train_agents: no training targets");
  if (cfg.batch_size == 0) throw Error("train_agents: batch size must be positive");
  TrainResult result;
  Rng shuffle_rng(derive_seed(cfg.seed, 0));
  AdamOptimizer adam(agents.param_count(), cfg.learning_rate);
  std::vector<double> params = agents.flat();
  double baseline = 0.0;
  bool have_baseline = false;
  std::uint64_t batch_counter = 0;
  EpisodeOptions opts;
  opts.action = ActionMode::Sample;

  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.oracle_mode = ctx.oracle->mode_name();
    std::size_t episodes = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<EpisodeInput> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(targets[order[k]]);
      const auto trajs = run_episodes(ctx, agents, batch, opts, derive_seed(cfg.seed, 1 + batch_counter++));
      double mean_ret = 0.0;
      for (const auto& t : trajs) {
        const double ret = episode_return(t, ctx.reward.gamma);
        mean_ret += ret;
        rec.mean_return += ret;
        rec.mean_steps += static_cast<double>(t.applied_steps());
        rec.mean_budget += static_cast<double>(t.budget_used);
        rec.mean_score_gain += t.final_score - t.initial_score;
      }
      mean_ret /= static_cast<double>(trajs.size());
      episodes += trajs.size();
      const double b_used = cfg.use_baseline && have_baseline ? baseline : 0.0;
      const auto grad = policy_gradient(agents, trajs, ctx.reward.gamma, b_used);
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam.ascend(params, grad);
      } else {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] += cfg.learning_rate * grad[i];
      }
      agents.set_flat(params);
      if (cfg.use_baseline) {
        baseline = have_baseline ? cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_ret : mean_ret;
        have_baseline = true;
      }
    }
    const double inv = 1.0 / static_cast<double>(episodes);
    rec.mean_return *= inv;
    rec.mean_steps *= inv;
    rec.mean_budget *= inv;
    rec.mean_score_gain *= inv;
    rec.baseline = baseline;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.agents = std::move(agents);
  return result;
}

}  // namespace mara

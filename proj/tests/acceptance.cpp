// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "fixtures.hpp"
#include "mara/pipeline.hpp"

#ifndef MARA_CLI_PATH
#error "MARA_CLI_PATH must name the CLI binary"
#endif

using namespace mara;
using mara::test::World;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// |a - b| relative to the larger magnitude, floored at 1e-3: below that the
// cancellation error of the central difference dominates.
double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

// ---------------------------------------------------------------- 1

Result reward_exactness() {
  Rng rng(101);
  const RewardConfig defaults;
  bool ok = defaults.xi == 1.0 && defaults.beta == 0.2;
  std::size_t decreases = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    RewardConfig cfg;
    cfg.xi = 0.1 + 3.0 * uniform01(rng);
    cfg.beta = 2.0 * uniform01(rng);
    const double f_prev = 10.0 * (uniform01(rng) - 0.5);
    double f_cur = f_prev + 4.0 * (uniform01(rng) - 0.5);
    if (i % 10 == 0) f_cur = f_prev;
    const std::size_t len = 1 + rng() % 10;
    const double r_sim = uniform01(rng), r_flu = uniform01(rng);
    const double got = step_reward(cfg, f_prev, f_cur, len, r_sim, r_flu);
    if (f_cur < f_prev) {
      ++decreases;
      ok &= got == -cfg.xi;
    } else {
      const double want = (f_cur - f_prev) / static_cast<double>(len) + cfg.beta * (r_sim + r_flu);
      worst = std::max(worst, std::abs(got - want));
    }
  }
  ok &= worst <= 1e-12;
  return {ok, "max abs error " + fmt("%.1e", worst) + ", " + std::to_string(decreases) + " decreases all -xi"};
}

// ---------------------------------------------------------------- 2

Result budget_termination() {
  World w(60, 13);
  w.ctx.reward.budget = 25;
  std::vector<Agents> agents;
  for (std::uint64_t s = 0; s < 4; ++s) agents.push_back(Agents::create(w.ranker.dim(), 8, 500 + s));
  std::size_t traces = 0, violations = 0, rejected = 0;
  const std::size_t per_batch = 250;
  for (std::size_t batch = 0; traces < 10000; ++batch) {
    std::vector<EpisodeInput> inputs;
    for (std::size_t i = 0; i < per_batch; ++i)
      inputs.push_back(w.input((batch + i) % w.queries.size(), (batch * per_batch + i) % w.corpus->size()));
    EpisodeOptions opts;
    opts.strategy = batch % 2 ? EpisodeStrategy::Random : EpisodeStrategy::Policy;
    const auto trajs = run_episodes(w.ctx, agents[batch % agents.size()], inputs, opts, 7000 + batch);
    for (const auto& tr : trajs) {
      std::size_t used = 0;
      for (const auto& s : tr.steps)
        if (!s.rejected) used += s.length;
      if (used > 25 || used != tr.budget_used) ++violations;
      if (tr.rejected()) {
        ++rejected;
        if (used + tr.steps.back().length <= 25) ++violations;
      }
      ++traces;
    }
  }
  return {violations == 0, std::to_string(traces) + " traces, " + std::to_string(rejected) + " ended by rejection, " +
                               std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------- 3

std::vector<double*> ranker_refs(RankerParams& p) {
  std::vector<double*> out;
  for (auto* m : {&p.embeddings, &p.encoder_w, &p.w1})
    for (auto& v : m->data) out.push_back(&v);
  for (auto* v : {&p.encoder_b, &p.b1, &p.w2})
    for (auto& x : *v) out.push_back(&x);
  out.push_back(&p.b2);
  return out;
}

double central(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2 * h);
}

Result gradient_fidelity(const World& w) {
  Rng rng(303);
  double worst_score = 0.0, worst_pair = 0.0, worst_policy = 0.0;
  const std::size_t emb_size = w.ranker.params().embeddings.data.size();
  for (int draw = 0; draw < 100; ++draw) {
    // surrogate score w.r.t. parameters
    SurrogateRanker r(w.ranker.shape(), 1000 + draw, 0.5);
    const Query& q = w.queries[rng() % w.queries.size()];
    const Document& d = w.doc(rng() % w.corpus->size());
    RankerParams grad = RankerParams::zeros(r.shape());
    r.accumulate_param_gradient(q.tokens, d.tokens, 1.0, grad);
    auto refs = ranker_refs(r.mutable_params());
    auto grefs = ranker_refs(grad);
    for (int c = 0; c < 5; ++c) {
      std::size_t i;
      if (c < 2) i = d.tokens[rng() % d.tokens.size()] * r.dim() + rng() % r.dim();
      else i = emb_size + rng() % (refs.size() - emb_size);
      worst_score = std::max(worst_score, rel(central([&] { return r.score(q, d); }, *refs[i]), *grefs[i]));
    }

    // pairwise loss w.r.t. document token inputs
    const auto in = w.input(rng() % w.queries.size(), rng() % w.corpus->size(), 1 + rng() % 5);
    Matrix qx = r.embed(in.query->tokens), dx = r.embed(in.document->tokens);
    std::vector<double> other_scores;
    for (const Document* o : in.others) other_scores.push_back(r.score(*in.query, *o));
    const Matrix g = doc_token_gradients(r, *in.query, *in.document, in.others);
    auto loss = [&] {
      const double s = r.score_inputs(qx, dx);
      double l = 0.0;
      for (double so : other_scores) l += std::max(0.0, kHingeMargin - s + so);
      return l / static_cast<double>(other_scores.size());
    };
    for (int c = 0; c < 5; ++c) {
      const std::size_t i = rng() % dx.rows, k = rng() % dx.cols;
      worst_pair = std::max(worst_pair, rel(central(loss, dx(i, k)), g(i, k)));
    }

    // trajectory log-probability w.r.t. agent parameters
    Agents a = Agents::create(w.ranker.dim(), 6, 2000 + draw);
    EpisodeContext ctx = w.ctx;
    ctx.surrogate = &r;
    Trajectory tr;
    for (int tries = 0; tries < 20 && tr.steps.empty(); ++tries)
      tr = run_episode(ctx, a, w.input(draw % 4, rng() % w.corpus->size()), {}, rng);
    std::vector<double> weights(tr.steps.size());
    for (auto& v : weights) v = 2.0 * uniform01(rng) - 1.0;
    const double label_weight = 2.0 * uniform01(rng) - 1.0;
    std::vector<double> pg(a.param_count(), 0.0);
    accumulate_log_prob_gradient(a, tr, weights, label_weight, pg);
    auto objective = [&](const Agents& b) {
      // label term plus per-step increments of the log-probability
      Trajectory labels_only = tr;
      labels_only.steps.clear();
      const double lab = trajectory_log_prob(b, labels_only);
      double steps = 0.0;
      for (std::size_t k = 0; k < tr.steps.size(); ++k) {
        Trajectory upto = tr;
        upto.steps.resize(k + 1);
        Trajectory before = tr;
        before.steps.resize(k);
        steps += weights[k] * (trajectory_log_prob(b, upto) - trajectory_log_prob(b, before));
      }
      return label_weight * lab + steps;
    };
    auto flat = a.flat();
    for (int c = 0; c < 5; ++c) {
      const std::size_t i = rng() % flat.size();
      Agents b = a;
      auto f = [&] {
        b.set_flat(flat);
        return objective(b);
      };
      worst_policy = std::max(worst_policy, rel(central(f, flat[i]), pg[i]));
    }
  }
  const bool ok = worst_score < 1e-4 && worst_pair < 1e-4 && worst_policy < 1e-4;
  return {ok, "max relative error score " + fmt("%.1e", worst_score) + ", pairwise " + fmt("%.1e", worst_pair) +
                  ", policy " + fmt("%.1e", worst_policy)};
}

// ---------------------------------------------------------------- 4

// A three-token document, so at most three candidates, and budget 2; every
// trajectory can be enumerated through the replay hooks.
struct TinyMdp {
  std::shared_ptr<const Corpus> corpus;
  Query query;
  SynonymTable synonyms;
  PhraseTable phrases;
  std::unique_ptr<BigramLM> lm;
  SurrogateRanker ranker;
  std::unique_ptr<NaturalnessOracle> oracle;
  EpisodeContext ctx;
  EpisodeInput input;

  TinyMdp() {
    corpus = std::make_shared<const Corpus>(
        build_corpus({{"d0", "b c d."}, {"d1", "a e f b."}, {"d2", "f a c d e."}}));
    const auto& v = corpus->vocab();
    query = make_query({"q", "a f"}, v);
    const TokenId a = v.id("a"), b = v.id("b"), c = v.id("c"), d = v.id("d"), e = v.id("e"), f = v.id("f");
    synonyms.add(b, std::vector<TokenId>{e, a});
    synonyms.add(c, std::vector<TokenId>{f, a});
    synonyms.add(d, std::vector<TokenId>{a});
    phrases = PhraseTable({{{a, e}, 3}, {{e, f}, 2}, {{f, a}, 1}}, 1);
    lm = std::make_unique<BigramLM>(BigramLM::train(*corpus, 0.1));
    RankerShape shape;
    shape.vocab_size = v.size();
    shape.dim = 2;
    shape.hidden = 3;
    ranker = SurrogateRanker(shape, 41, 1.0);
    oracle = std::make_unique<NaturalnessOracle>(ranker, *lm, &v);
    ctx.surrogate = &ranker;
    ctx.tables = AttackTables{&synonyms, &phrases, lm.get()};
    ctx.oracle = oracle.get();
    ctx.reward.budget = 2;
    input.query = &query;
    input.document = &corpus->documents()[0];
    input.others = {&corpus->documents()[1], &corpus->documents()[2]};
  }
};

// Every complete trajectory under the given labels, found by extending
// forced choice prefixes until the episode ends.
void enumerate_choices(const TinyMdp& m, const Agents& a, const std::vector<Granularity>& labels,
                       std::vector<std::size_t>& prefix, std::vector<Trajectory>& out) {
  EpisodeOptions opts;
  opts.forced_labels = &labels;
  opts.forced_choices = &prefix;
  Rng rng(0);
  try {
    out.push_back(run_episode(m.ctx, a, m.input, opts, rng));
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.find("exhausted") == std::string::npos) throw;
    for (std::size_t c = 0;; ++c) {
      prefix.push_back(c);
      try {
        enumerate_choices(m, a, labels, prefix, out);
      } catch (const Error& inner) {
        prefix.pop_back();
        if (std::string(inner.what()).find("out of range") == std::string::npos) throw;
        break;
      }
      prefix.pop_back();
    }
  }
}

Result reinforce_unbiasedness() {
  TinyMdp m;
  const double gamma = m.ctx.reward.gamma;
  Agents a = Agents::create(2, 2, 17);
  {
    // move away from the near-uniform initialisation
    Rng rng(18);
    auto flat = a.flat();
    for (auto& v : flat) v += 0.5 * (2.0 * uniform01(rng) - 1.0);
    a.set_flat(flat);
  }

  std::vector<Trajectory> all;
  const std::size_t l = m.input.document->tokens.size();
  std::size_t labelings = 1;
  for (std::size_t i = 0; i < l; ++i) labelings *= kNumLabels;
  std::size_t max_candidates = 0;
  for (std::size_t code = 0; code < labelings; ++code) {
    std::vector<Granularity> labels(l);
    for (std::size_t i = 0, c = code; i < l; ++i, c /= kNumLabels) labels[i] = static_cast<Granularity>(c % kNumLabels);
    std::vector<std::size_t> prefix;
    const std::size_t before = all.size();
    enumerate_choices(m, a, labels, prefix, all);
    for (std::size_t k = before; k < all.size(); ++k) max_candidates = std::max(max_candidates, all[k].candidates.size());
  }

  const std::size_t n = a.param_count();
  std::vector<double> exact(n, 0.0);
  double mass = 0.0;
  for (const auto& tr : all) {
    const double p = std::exp(trajectory_log_prob(a, tr));
    const double ret = episode_return(tr, gamma);
    mass += p;
    std::vector<double> g(n, 0.0);
    const std::vector<double> w(tr.steps.size(), ret);
    accumulate_log_prob_gradient(a, tr, w, ret, g);
    for (std::size_t i = 0; i < n; ++i) exact[i] += p * g[i];
  }

  // finite differences of the enumerated objective
  auto objective = [&](const Agents& b) {
    double j = 0.0;
    for (const auto& tr : all) j += std::exp(trajectory_log_prob(b, tr)) * episode_return(tr, gamma);
    return j;
  };
  auto flat = a.flat();
  double worst_fd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Agents b = a;
    auto f = [&] {
      b.set_flat(flat);
      return objective(b);
    };
    worst_fd = std::max(worst_fd, std::abs(central(f, flat[i]) - exact[i]));
  }

  // Monte Carlo estimate from sampled episodes, baseline off; chunk means
  // also give a standard error per coordinate
  const std::size_t samples = 100000, chunk = 2000, chunks = samples / chunk;
  std::vector<double> mc(n, 0.0), sq(n, 0.0);
  std::vector<EpisodeInput> inputs(chunk, m.input);
  for (std::size_t done = 0; done < samples; done += chunk) {
    const auto batch = run_episodes(m.ctx, a, inputs, {}, 9000 + done);
    const auto g = policy_gradient(a, batch, gamma, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      mc[i] += g[i] / static_cast<double>(chunks);
      sq[i] += g[i] * g[i] / static_cast<double>(chunks);
    }
  }
  double scale = 0.0;
  for (double v : exact) scale = std::max(scale, std::abs(v));
  double worst_mc = 0.0, worst_z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // coordinates far below the gradient's scale are compared against 10% of it
    worst_mc = std::max(worst_mc, std::abs(mc[i] - exact[i]) / std::max(std::abs(exact[i]), 0.1 * scale));
    const double se = std::sqrt(std::max(0.0, sq[i] - mc[i] * mc[i]) / static_cast<double>(chunks - 1));
    if (std::abs(exact[i]) > 1e-9 * scale && se > 0.0) worst_z = std::max(worst_z, std::abs(mc[i] - exact[i]) / se);
  }

  const bool ok = std::abs(mass - 1.0) < 1e-9 && max_candidates <= 3 && worst_mc < 0.02 && worst_fd < 1e-5;
  return {ok, std::to_string(all.size()) + " trajectories, probability mass " + fmt("%.12f", mass) +
                  ", max MC relative error " + fmt("%.4f", worst_mc) + " (max |z| " + fmt("%.2f", worst_z) +
                  "), max |FD - exact| " + fmt("%.1e", worst_fd)};
}

// ---------------------------------------------------------------- 5

Result span_properties() {
  Rng rng(505);
  std::size_t bad = 0, spans_seen = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t l = 1 + rng() % 80;
    std::vector<Granularity> labels(l);
    for (auto& g : labels) g = static_cast<Granularity>(rng() % kNumLabels);
    std::vector<SentenceBound> bounds;
    for (std::size_t s = 0; s < l;) {
      const std::size_t e = std::min(l, s + 1 + rng() % 16);
      bounds.push_back({s, e});
      s = e;
    }
    const auto spans = decode_spans(labels, bounds);
    spans_seen += spans.size();
    bool ok = true;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      ok &= spans[i].granularity != Granularity::None;
      ok &= length_window(spans[i].granularity).contains(spans[i].length());
      ok &= spans[i].start < spans[i].end && spans[i].end <= l;
      if (i > 0) ok &= spans[i - 1].end <= spans[i].start;
    }
    ok &= decode_spans(labels_from_spans(spans, l), bounds) == spans;
    if (!ok) ++bad;
  }
  return {bad == 0, "10000 sequences, " + std::to_string(spans_seen) + " spans, " + std::to_string(bad) + " violations"};
}

// ---------------------------------------------------------------- 6

Result metrics_oracle() {
  Rng rng(606);
  const std::vector<std::size_t> ks = {1, 5, 10, 20, 100};
  std::size_t mismatches = 0;
  for (int set = 0; set < 1000; ++set) {
    std::vector<AttackOutcome> o(1 + rng() % 60);
    for (auto& x : o) {
      x.rank_before = 1 + rng() % 101;
      x.rank_after = 1 + rng() % 101;
      x.budget = rng() % 26;
      for (auto& c : x.counts) c = rng() % 6;
    }
    const auto m = compute_metrics(o, ks);
    const double n = static_cast<double>(o.size());
    std::size_t success = 0, budget = 0;
    long long boost = 0;
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (const auto& x : o) {
      if (x.rank_after < x.rank_before) ++success;
      boost += static_cast<long long>(x.rank_before) - static_cast<long long>(x.rank_after);
      budget += x.budget;
      for (std::size_t g = 0; g < 3; ++g) counts[g] += x.counts[g];
    }
    bool ok = m.count == o.size() && m.asr == 100.0 * success / n && m.boost == boost / n && m.mean_budget == budget / n;
    for (std::size_t g = 0; g < 3; ++g) ok &= m.mean_counts[g] == counts[g] / n;
    for (std::size_t k : ks) {
      std::size_t hits = 0;
      for (const auto& x : o) hits += x.rank_after <= k;
      ok &= m.topk.at(k) == 100.0 * hits / n;
    }
    if (!ok) ++mismatches;
  }
  return {mismatches == 0, "1000 outcome sets, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 7, 8, 9

struct Desk {
  Settings s;
  Benchmark b;
  std::unique_ptr<TargetRanker> target;
  DistillResult distill;
  double setup_seconds = 0.0;
  TargetSet train_targets;
};

Settings desk_settings(const std::filesystem::path& dir) {
  Config c;
  c.set("workdir", dir.string());
  c.set("quiet", "true");
  return Settings::from_config(c);
}

Result distillation(Desk& desk) {
  const double tau_iid =
      ranking_agreement(desk.distill.surrogate, *desk.target, desk.b.queries, 0, desk.s.distill.holdout_stride);
  Settings ood = desk.s;
  ood.distill_ood = true;
  const auto od = build_surrogate(*desk.target, desk.b, ood);
  const double tau_ood = ranking_agreement(od.surrogate, *desk.target, desk.b.queries, 0, desk.s.distill.holdout_stride);
  return {tau_iid > 0.5 && tau_ood < tau_iid, "held-out tau IID " + fmt("%.4f", tau_iid) + ", OOD " + fmt("%.4f", tau_ood)};
}

FullReport attack_report(const Desk& desk, const Settings& s, const Agents& agents, const TargetSet& targets,
                         const std::string& mode) {
  const auto o = run_attack(desk.b, *desk.target, desk.distill.surrogate, agents, targets, s, AttackMode::parse(mode));
  return evaluate_outcomes(o, desk.b, s);
}

Result efficacy(const Desk& desk, const Agents& trained) {
  const double rl = attack_report(desk, desk.s, trained, desk.train_targets, "rl").metrics.boost;
  std::string detail = "Boost rl " + fmt("%.2f", rl);
  bool ok = true;
  for (const char* mode : {"random", "single-granular=W", "single-granular=P", "single-granular=S", "greedy"}) {
    const double v = attack_report(desk, desk.s, trained, desk.train_targets, mode).metrics.boost;
    ok &= rl > v;
    detail += std::string(", ") + mode + " " + fmt("%.2f", v);
  }
  const auto easy = select_benchmark_targets(*desk.target, desk.b, Difficulty::Easy, desk.s.eval_targets,
                                             desk.s.num_others, desk.s.target_selection_seed);
  const double asr = attack_report(desk, desk.s, trained, easy, "rl").metrics.asr;
  ok &= asr >= 90.0;
  return {ok, detail + "; Easy ASR " + fmt("%.1f", asr)};
}

Result naturalness(const Desk& desk, const Agents& trained_default) {
  std::vector<FullReport> reports;
  std::string detail;
  for (double beta : {0.0, 0.2, 1.0}) {
    Settings s = desk.s;
    s.reward.beta = beta;
    const Agents agents = beta == desk.s.reward.beta
                              ? trained_default
                              : train_attacker(desk.b, desk.distill.surrogate, desk.train_targets, s).agents;
    reports.push_back(attack_report(desk, s, agents, desk.train_targets, "rl"));
    const auto& r = reports.back();
    detail += (detail.empty() ? "" : "; ") + std::string("beta ") + fmt("%.1f", beta) + ": Boost " +
              fmt("%.2f", r.metrics.boost) + " spamicity " + fmt("%.4f", r.screening.mean_spamicity_attacked) +
              " PPL ratio " + fmt("%.4f", r.screening.mean_perplexity_ratio);
  }
  bool ok = true;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    ok &= reports[i].metrics.boost <= reports[i - 1].metrics.boost;
    ok &= reports[i].screening.mean_spamicity_attacked <= reports[i - 1].screening.mean_spamicity_attacked;
    ok &= reports[i].screening.mean_perplexity_ratio <= reports[i - 1].screening.mean_perplexity_ratio;
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 10

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool run_cli_pipeline(const std::filesystem::path& dir) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (const char* cmd : {"gen-corpus", "train-target", "distill-surrogate", "train-attacker", "attack", "evaluate",
                          "report"}) {
    const std::string line = std::string("\"") + MARA_CLI_PATH + "\" " + cmd + " --workdir \"" + dir.string() +
                             "\" --quiet true > /dev/null 2>&1";
    if (std::system(line.c_str()) != 0) return false;
  }
  return true;
}

Result determinism(const std::filesystem::path& root) {
  const auto a = root / "run_a", b = root / "run_b";
  if (!run_cli_pipeline(a) || !run_cli_pipeline(b)) return {false, "CLI pipeline failed"};
  std::size_t files = 0, differing = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto other = b / entry.path().filename();
    if (!std::filesystem::exists(other) || read_bytes(entry.path()) != read_bytes(other)) ++differing;
  }
  bool have_outputs = true;
  for (const char* f : {"outcomes.jsonl", "report.json", "report.txt", "train_log.jsonl"})
    have_outputs &= std::filesystem::exists(a / f);
  return {have_outputs && differing == 0,
          std::to_string(files) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  const auto root = std::filesystem::temp_directory_path() / ("mara_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(root);
  int failures = 0;
  auto report = [&](int id, const char* name, double limit_seconds, const std::function<Result()>& body,
                    double extra_seconds = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
      r = body();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0) + extra_seconds;
    const bool in_time = limit_seconds <= 0.0 || secs < limit_seconds;
    const bool pass = r.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] %2d %s: %s%s (%.2f s)\n", pass ? "PASS" : "FAIL", id, name, r.detail.c_str(),
                in_time ? "" : " [over time limit]", secs);
    std::fflush(stdout);
  };

  const World world;
  report(1, "reward exactness", 1.0, [] { return reward_exactness(); });
  report(2, "budget and termination", 10.0, [] { return budget_termination(); });
  report(3, "gradient fidelity", 30.0, [&] { return gradient_fidelity(world); });
  report(4, "REINFORCE unbiasedness", 120.0, [] { return reinforce_unbiasedness(); });
  report(5, "span constraints", 10.0, [] { return span_properties(); });
  report(6, "metrics oracle", 5.0, [] { return metrics_oracle(); });

  // shared desk-scale setup: benchmark, black-box target, distilled surrogate
  Desk desk;
  const auto t_setup = std::chrono::steady_clock::now();
  desk.s = desk_settings(root / "desk");
  desk.b = make_benchmark(desk.s);
  desk.target = std::make_unique<TargetRanker>(build_target(desk.b, desk.s));
  desk.distill = build_surrogate(*desk.target, desk.b, desk.s);
  desk.setup_seconds = seconds_since(t_setup);
  report(7, "surrogate distillation", 300.0, [&] { return distillation(desk); }, desk.setup_seconds);

  const auto t_train = std::chrono::steady_clock::now();
  desk.train_targets = select_benchmark_targets(*desk.target, desk.b, desk.s.train_difficulty, desk.s.train_targets,
                                                desk.s.num_others, desk.s.target_selection_seed);
  const Agents trained = train_attacker(desk.b, desk.distill.surrogate, desk.train_targets, desk.s).agents;
  const double train_seconds = seconds_since(t_train);
  report(8, "attack efficacy", 600.0, [&] { return efficacy(desk, trained); }, desk.setup_seconds + train_seconds);
  report(9, "naturalness trade-off", 900.0, [&] { return naturalness(desk, trained); },
         desk.setup_seconds + train_seconds);
  report(10, "CLI determinism", 0.0, [&] { return determinism(root); });

  std::filesystem::remove_all(root);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

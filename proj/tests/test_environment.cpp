#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "mara/environment.hpp"

using namespace mara;
using mara::test::World;

namespace {

PerturbationCandidate cand(std::size_t start, std::size_t end, std::vector<TokenId> rep) {
  PerturbationCandidate c;
  c.span.granularity = end - start == 1 ? Granularity::Word : Granularity::Phrase;
  c.span.start = start;
  c.span.end = end;
  c.replacement = std::move(rep);
  return c;
}

// Ranker over a 4-token vocabulary with hand-set 2-d embeddings.
SurrogateRanker axis_ranker() {
  RankerShape shape;
  shape.vocab_size = 4;
  shape.dim = 2;
  shape.hidden = 2;
  RankerParams p = RankerParams::zeros(shape);
  const double e[4][2] = {{0, 0}, {1, 0}, {0, 1}, {-1, 0}};
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < 2; ++k) p.embeddings(t, k) = e[t][k];
  return SurrogateRanker(shape, std::move(p));
}

}  // namespace

TEST_CASE("step reward hand examples") {
  RewardConfig cfg;
  CHECK(cfg.xi == 1.0);
  CHECK(cfg.beta == 0.2);
  CHECK(cfg.gamma == 0.9);
  CHECK(cfg.budget == 25);
  CHECK_FALSE(cfg.similarity_floor.has_value());
  CHECK(step_reward(cfg, 0.2, 0.5, 3, 1.0, 1.0) == doctest::Approx(0.5));
  CHECK(step_reward(cfg, 0.7, 0.7, 1, 0.0, 0.0) == 0.0);
  CHECK(step_reward(cfg, 0.7, 0.6999, 4, 1.0, 1.0) == -1.0);
  CHECK(step_reward(cfg, 0.0, 1.0, 2, 0.5, 0.5) >= cfg.beta * 1.0);
  CHECK_THROWS_AS(step_reward(cfg, 0.0, 1.0, 0, 1.0, 1.0), Error);
  RewardConfig bad;
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = RewardConfig{};
  bad.similarity_floor = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("local oracle similarity and fluency maps") {
  const SurrogateRanker r = axis_ranker();
  const Corpus c = build_corpus({{"d", "a b c a b c"}});
  BigramLM lm(4, 0.5);
  lm.add_sequence(std::vector<TokenId>{1, 2, 3, 1, 2});
  const NaturalnessOracle o(r, lm);
  const std::vector<TokenId> a = {1}, b = {2}, neg = {3};
  CHECK(o.similarity(a, a) == 1.0);
  CHECK(o.similarity(a, b) == doctest::Approx(0.5));
  CHECK(o.similarity(a, neg) == doctest::Approx(0.0));
  CHECK(o.fluency(a, a) == 1.0);
  const std::vector<TokenId> x = {1, 2, 3}, y = {3, 3, 2};
  const double ratio = lm.perplexity(y) / lm.perplexity(x);
  CHECK(o.fluency(x, y) == doctest::Approx(std::exp(-std::max(0.0, ratio - 1.0))));
  CHECK(o.fluency(y, x) == 1.0);  // lower perplexity clamps
  CHECK(o.mode_name() == "local");
  CHECK_THROWS_AS(o.similarity(std::vector<TokenId>{}, a), Error);
}

TEST_CASE("external oracle rescales provider scores and falls back when unreachable") {
  World w;
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/naturalness", [&](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    ++calls;
    const bool ok = j.contains("original") && j.contains("perturbed") &&
                    j["requests"] == nlohmann::json::array({"similarity", "fluency"});
    res.set_content(nlohmann::json{{"similarity", ok ? 8.0 : 0.0}, {"fluency", 12.0}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  NaturalnessOracle o(w.ranker, *w.lm, &w.corpus->vocab());
  ExternalOracleConfig cfg;
  cfg.port = port;
  cfg.score_min = 0.0;
  cfg.score_max = 10.0;
  cfg.timeout_seconds = 2.0;
  o.use_external(cfg);
  CHECK(o.mode_name() == "external");
  const auto& d = w.doc(0).tokens;
  const auto s = o.evaluate(d, d);
  CHECK(s.similarity == doctest::Approx(0.8));
  CHECK(s.fluency == 1.0);  // clamped
  CHECK(calls.load() == 1);
  server.stop();
  th.join();

  // nothing listens now: local scores after the retries
  cfg.retries = 1;
  cfg.timeout_seconds = 0.2;
  o.use_external(cfg);
  std::vector<TokenId> e = d;
  e[0] = e[1];
  const auto fb = o.evaluate(d, e);
  NaturalnessOracle local(w.ranker, *w.lm);
  CHECK(fb.similarity == local.similarity(d, e));
  CHECK(fb.fluency == local.fluency(d, e));

  NaturalnessOracle no_vocab(w.ranker, *w.lm);
  CHECK_THROWS_AS(no_vocab.use_external(cfg), Error);
}

TEST_CASE("attack state tracks positions, budget and rejection") {
  const std::vector<TokenId> doc = {1, 2, 3, 4, 5, 6, 7, 8};
  AttackState st(doc, {cand(0, 2, {9}), cand(3, 4, {10, 11, 12}), cand(6, 8, {13, 14})});
  CHECK(st.remaining().size() == 3);
  CHECK(st.apply(0, 5) == AttackState::ApplyResult::Applied);
  CHECK(st.tokens() == std::vector<TokenId>{9, 3, 4, 5, 6, 7, 8});
  CHECK(st.current_start(1) == 2);
  CHECK(st.apply(1, 5) == AttackState::ApplyResult::Applied);
  CHECK(st.budget_used() == 4);
  CHECK(st.current_start(2) == 7);
  CHECK(st.tokens() == std::vector<TokenId>{9, 3, 10, 11, 12, 5, 6, 7, 8});
  CHECK(st.apply(2, 5) == AttackState::ApplyResult::Rejected);
  CHECK(st.budget_used() == 4);
  st.revert(0);
  CHECK(st.tokens() == std::vector<TokenId>{1, 2, 3, 10, 11, 12, 5, 6, 7, 8});
  CHECK(st.budget_used() == 3);
  CHECK(st.remaining().size() == 2);
  CHECK_THROWS_AS(AttackState(doc, {cand(0, 3, {1}), cand(2, 4, {1})}), Error);
  CHECK_THROWS_AS(AttackState(doc, {cand(0, 9, {1})}), Error);
}

TEST_CASE("discounted returns") {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  const auto g = discounted_returns(r, 0.5);
  CHECK(g[2] == 3.0);
  CHECK(g[1] == doctest::Approx(2.0 + 1.5));
  CHECK(g[0] == doctest::Approx(1.0 + 0.5 * 3.5));
  CHECK(discounted_returns(r, 0.0) == r);
}

TEST_CASE("episodes honour budget, reward sign and telescoping invariants") {
  World w;
  Agents a = Agents::create(w.ranker.dim(), 8, 3);
  w.ctx.reward.beta = 0.0;
  w.ctx.reward.budget = 12;
  Rng rng(8);
  std::size_t with_steps = 0, rejections = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto in = w.input(i % w.queries.size(), i);
    EpisodeOptions opts;
    opts.strategy = i % 2 ? EpisodeStrategy::Policy : EpisodeStrategy::Random;
    const Trajectory tr = run_episode(w.ctx, a, in, opts, rng);
    std::size_t used = 0;
    double gain = 0.0;
    for (const auto& s : tr.steps) {
      if (s.rejected) {
        CHECK(used + s.length > w.ctx.reward.budget);
        CHECK(s.reward == 0.0);
        ++rejections;
        continue;
      }
      used += s.length;
      CHECK((s.reward == -w.ctx.reward.xi) == (s.score_after < s.score_before));
      if (!s.failed) gain += s.reward * static_cast<double>(s.length);
      else gain += s.score_after - s.score_before;
    }
    CHECK(used == tr.budget_used);
    CHECK(used <= w.ctx.reward.budget);
    CHECK(gain == doctest::Approx(tr.final_score - tr.initial_score).epsilon(1e-9));
    CHECK(tr.final_score == doctest::Approx(w.ranker.score(in.query->tokens, tr.final_tokens)).epsilon(1e-12));
    if (opts.strategy == EpisodeStrategy::Policy)
      CHECK(trajectory_log_prob(a, tr) == doctest::Approx(tr.log_prob()).epsilon(1e-12));
    if (!tr.steps.empty()) ++with_steps;
  }
  CHECK(with_steps > 10);
  CHECK(rejections > 0);
}

TEST_CASE("serial and parallel rollouts are identical") {
  World w;
  const Agents a = Agents::create(w.ranker.dim(), 8, 4);
  std::vector<EpisodeInput> inputs;
  for (std::size_t i = 0; i < 12; ++i) inputs.push_back(w.input(i % w.queries.size(), 2 * i));
  const EpisodeOptions opts;
  const auto s = run_episodes_serial(w.ctx, a, inputs, opts, 99);
  const auto p = run_episodes_parallel(w.ctx, a, inputs, opts, 99);
  REQUIRE(s.size() == p.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s[i].final_tokens == p[i].final_tokens);
    CHECK(s[i].rewards() == p[i].rewards());
    CHECK(s[i].log_prob() == p[i].log_prob());
    CHECK(s[i].labeling.labels == p[i].labeling.labels);
  }
}

TEST_CASE("single-granular episodes only apply that granularity") {
  World w;
  const Agents a = Agents::create(w.ranker.dim(), 8, 4);
  Rng rng(3);
  for (auto g : {Granularity::Word, Granularity::Phrase, Granularity::Sentence}) {
    EpisodeOptions opts;
    opts.strategy = EpisodeStrategy::SingleGranular;
    opts.single = g;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto tr = run_episode(w.ctx, a, w.input(0, i), opts, rng);
      for (const auto& s : tr.spans) CHECK(s.granularity == g);
    }
  }
}

TEST_CASE("triple episodes visit every available level before repeating one") {
  World w;
  w.ctx.reward.budget = 200;
  const Agents a = Agents::create(w.ranker.dim(), 8, 4);
  Rng rng(6);
  EpisodeOptions opts;
  opts.strategy = EpisodeStrategy::Triple;
  std::size_t mixed = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto tr = run_episode(w.ctx, a, w.input(i % 4, i), opts, rng);
    std::set<Granularity> levels;
    for (const auto& c : tr.candidates) levels.insert(c.span.granularity);
    std::set<Granularity> first;
    for (std::size_t t = 0; t < std::min(levels.size(), tr.steps.size()); ++t)
      first.insert(tr.candidates[tr.steps[t].candidate].span.granularity);
    CHECK(first.size() == std::min(levels.size(), tr.steps.size()));
    if (levels.size() > 1) ++mixed;
  }
  CHECK(mixed > 0);
}

TEST_CASE("policy gradient is zero for zero rewards and matches log-prob differences") {
  World w;
  Agents a = Agents::create(w.ranker.dim(), 6, 12);
  Rng rng(4);
  std::vector<Trajectory> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(run_episode(w.ctx, a, w.input(i % 4, i), {}, rng));
  auto zeroed = batch;
  for (auto& t : zeroed)
    for (auto& s : t.steps) s.reward = 0.0;
  for (double v : policy_gradient(a, zeroed, 0.9, 0.0)) CHECK(v == 0.0);
  CHECK_THROWS_AS(policy_gradient(a, std::span<const Trajectory>{}, 0.9, 0.0), Error);

  const Trajectory& tr = batch[0];
  std::vector<double> ones(tr.steps.size(), 1.0);
  std::vector<double> grad(a.param_count(), 0.0);
  accumulate_log_prob_gradient(a, tr, ones, 1.0, grad);
  auto flat = a.flat();
  const double h = 1e-5;
  for (std::size_t i = 0; i < flat.size(); i += 7) {
    Agents b = a;
    auto up = flat, down = flat;
    up[i] += h;
    down[i] -= h;
    b.set_flat(up);
    const double lu = trajectory_log_prob(b, tr);
    b.set_flat(down);
    const double ld = trajectory_log_prob(b, tr);
    const double fd = (lu - ld) / (2 * h);
    CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("training with zero epochs keeps the initial policies and logs are reproducible") {
  World w;
  const Agents init = Agents::create(w.ranker.dim(), 6, 21);
  std::vector<EpisodeInput> targets;
  for (std::size_t i = 0; i < 6; ++i) targets.push_back(w.input(i % 4, 3 * i));
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(train_agents(init, w.ctx, targets, cfg).agents.flat() == init.flat());

  cfg.epochs = 2;
  cfg.batch_size = 3;
  std::string log_a, log_b;
  const auto ra = train_agents(init, w.ctx, targets, cfg, [&](const TrainLogRecord& r) { log_a += to_json_line(r); });
  const auto rb = train_agents(init, w.ctx, targets, cfg, [&](const TrainLogRecord& r) { log_b += to_json_line(r); });
  CHECK(log_a == log_b);
  CHECK(ra.agents.flat() == rb.agents.flat());
  CHECK(ra.agents.flat() != init.flat());
  REQUIRE(ra.log.size() == 2);
  CHECK(ra.log[0].oracle_mode == "local");
  const auto j = nlohmann::json::parse(to_json_line(ra.log[1]));
  for (const char* k : {"epoch", "mean_return", "mean_steps", "mean_budget", "oracle_mode"}) CHECK(j.contains(k));
  CHECK_THROWS_AS(train_agents(init, w.ctx, std::span<const EpisodeInput>{}, cfg), Error);
}

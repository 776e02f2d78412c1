#include "mara/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace mara {

AttackMode AttackMode::parse(const std::string& s) {
  AttackMode m;
  if (s == "rl") return m;
  if (s == "greedy") {
    m.strategy = EpisodeStrategy::Greedy;
    return m;
  }
  if (s == "triple") {
    m.strategy = EpisodeStrategy::Triple;
    return m;
  }
  if (s == "random") {
    m.strategy = EpisodeStrategy::Random;
    return m;
  }
  const std::string prefix = "single-granular=";
  if (s.rfind(prefix, 0) == 0 && s.size() == prefix.size() + 1) {
    m.strategy = EpisodeStrategy::SingleGranular;
    m.single = granularity_from_code(s.back());
    if (m.single == Granularity::None) throw Error("single-granular mode needs W, P or S");
    return m;
  }
  throw Error("unknown attack mode '" + s + "' (expected rl, single-granular=W|P|S, triple, greedy or random)");
}

std::string AttackMode::name() const {
  switch (strategy) {
    case EpisodeStrategy::Policy: return "rl";
    case EpisodeStrategy::Greedy: return "greedy";
    case EpisodeStrategy::Triple: return "triple";
    case EpisodeStrategy::Random: return "random";
    case EpisodeStrategy::SingleGranular: return std::string("single-granular=") + granularity_code(single);
  }
  return "?";
}

const std::vector<std::string>& Settings::known_keys() {
  static const std::vector<std::string> keys = {
      "workdir", "seed", "n_docs", "min_sentences", "max_sentences", "n_queries", "n_ood_queries", "n_topics",
      "vocab_size", "max_doc_len", "lm_add_k",
      "phrase_min_freq", "synonyms", "phrases", "dim", "hidden", "target_seed", "target_epochs", "target_pairs",
      "target_lr", "target_embedding_scale", "distill_seed", "distill_epochs", "distill_depth", "distill_gap",
      "distill_lr", "distill_weight_decay", "distill_holdout_stride", "distill_embedding_scale", "distill_queries",
      "white_box", "xi", "beta", "gamma", "budget", "similarity_floor", "top_n", "shortlist", "fluency_weight",
      "policy_hidden", "agent_seed", "train_epochs", "batch_size", "learning_rate", "optimizer", "baseline",
      "baseline_decay", "train_seed", "train_difficulty", "train_targets", "eval_difficulty", "eval_targets",
      "target_selection_seed", "num_others", "mode", "attack_seed", "oracle", "oracle_host", "oracle_port",
      "oracle_path", "oracle_timeout", "oracle_retries", "oracle_score_min", "oracle_score_max", "topk",
      "spam_thresholds", "spam_window", "outcomes", "report", "threads", "quiet"};
  return keys;
}

Settings Settings::from_config(const Config& c) {
  c.check_known(known_keys());
  Settings s;
  s.workdir = c.require("workdir");

  auto& sp = s.synthetic;
  sp.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(sp.seed)));
  sp.n_docs = c.get_count("n_docs", sp.n_docs);
  sp.n_queries = c.get_count("n_queries", sp.n_queries);
  sp.n_ood_queries = c.get_count("n_ood_queries", sp.n_ood_queries);
  sp.n_topics = c.get_count("n_topics", sp.n_topics);
  sp.vocab_size = c.get_count("vocab_size", sp.vocab_size);
  sp.min_sentences = c.get_count("min_sentences", sp.min_sentences);
  sp.max_sentences = c.get_count("max_sentences", sp.max_sentences);
  s.max_doc_len = c.get_count("max_doc_len", s.max_doc_len);
  s.lm_add_k = c.get_double("lm_add_k", s.lm_add_k);
  if (!(s.lm_add_k > 0.0)) throw Error("config key lm_add_k: must be positive");
  s.phrase_min_freq = c.get_count("phrase_min_freq", s.phrase_min_freq);
  s.synonyms_file = c.get("synonyms", "");
  s.phrases_file = c.get("phrases", "");

  s.shape.dim = c.get_count("dim", s.shape.dim);
  s.shape.hidden = c.get_count("hidden", s.shape.hidden);
  s.target.seed = static_cast<std::uint64_t>(c.get_int("target_seed", static_cast<std::int64_t>(s.target.seed)));
  s.target.epochs = c.get_count("target_epochs", s.target.epochs);
  s.target.pairs_per_query = c.get_count("target_pairs", s.target.pairs_per_query);
  s.target.learning_rate = c.get_double("target_lr", s.target.learning_rate);
  s.target.embedding_scale = c.get_double("target_embedding_scale", s.target.embedding_scale);

  auto& d = s.distill;
  d.seed = static_cast<std::uint64_t>(c.get_int("distill_seed", static_cast<std::int64_t>(d.seed)));
  d.epochs = c.get_count("distill_epochs", d.epochs);
  d.depth = c.get_count("distill_depth", d.depth);
  d.gap = c.get_count("distill_gap", d.gap);
  d.learning_rate = c.get_double("distill_lr", d.learning_rate);
  d.weight_decay = c.get_double("distill_weight_decay", d.weight_decay);
  d.holdout_stride = c.get_count("distill_holdout_stride", d.holdout_stride);
  d.embedding_scale = c.get_double("distill_embedding_scale", d.embedding_scale);
  const std::string dq = c.get("distill_queries", "iid");
  if (dq != "iid" && dq != "ood") throw Error("config key distill_queries: expected iid or ood");
  s.distill_ood = dq == "ood";
  s.white_box = c.get_bool("white_box", false);

  auto& r = s.reward;
  r.xi = c.get_double("xi", r.xi);
  r.beta = c.get_double("beta", r.beta);
  r.gamma = c.get_double("gamma", r.gamma);
  r.budget = c.get_count("budget", r.budget);
  if (c.has("similarity_floor") && c.get("similarity_floor", "") != "none")
    r.similarity_floor = c.get_double("similarity_floor", 0.0);
  r.validate();

  s.generator.top_n = c.get_count("top_n", s.generator.top_n);
  s.generator.shortlist = c.get_count("shortlist", s.generator.shortlist);
  const std::string fw = c.get("fluency_weight", "");
  if (fw == "inf") s.generator.fluency_weight = std::numeric_limits<double>::infinity();
  else s.generator.fluency_weight = c.get_double("fluency_weight", s.generator.fluency_weight);

  s.policy_hidden = c.get_count("policy_hidden", s.policy_hidden);
  s.agent_seed = static_cast<std::uint64_t>(c.get_int("agent_seed", static_cast<std::int64_t>(s.agent_seed)));
  auto& t = s.train;
  t.epochs = c.get_count("train_epochs", t.epochs);
  t.batch_size = c.get_count("batch_size", t.batch_size);
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  const std::string opt = c.get("optimizer", "adam");
  if (opt == "adam") t.optimizer = OptimizerKind::Adam;
  else if (opt == "sgd") t.optimizer = OptimizerKind::Sgd;
  else throw Error("config key optimizer: expected adam or sgd");
  t.use_baseline = c.get_bool("baseline", t.use_baseline);
  t.baseline_decay = c.get_double("baseline_decay", t.baseline_decay);
  t.seed = static_cast<std::uint64_t>(c.get_int("train_seed", static_cast<std::int64_t>(t.seed)));
  s.train_difficulty = difficulty_from_string(c.get("train_difficulty", to_string(s.train_difficulty)));
  s.train_targets = c.get_count("train_targets", s.train_targets);
  s.eval_difficulty = difficulty_from_string(c.get("eval_difficulty", to_string(s.eval_difficulty)));
  s.eval_targets = c.get_count("eval_targets", s.eval_targets);
  s.target_selection_seed = static_cast<std::uint64_t>(
      c.get_int("target_selection_seed", static_cast<std::int64_t>(s.target_selection_seed)));
  s.num_others = c.get_count("num_others", s.num_others);
  if (s.num_others == 0) throw Error("config key num_others: must be positive");
  s.mode = AttackMode::parse(c.get("mode", "rl"));
  s.attack_seed = static_cast<std::uint64_t>(c.get_int("attack_seed", static_cast<std::int64_t>(s.attack_seed)));

  const std::string oracle = c.get("oracle", "local");
  if (oracle == "external") {
    ExternalOracleConfig e;
    e.host = c.get("oracle_host", e.host);
    e.port = static_cast<int>(c.get_int("oracle_port", e.port));
    e.path = c.get("oracle_path", e.path);
    e.timeout_seconds = c.get_double("oracle_timeout", e.timeout_seconds);
    e.retries = static_cast<int>(c.get_int("oracle_retries", e.retries));
    e.score_min = c.get_double("oracle_score_min", e.score_min);
    e.score_max = c.get_double("oracle_score_max", e.score_max);
    s.external_oracle = e;
  } else if (oracle != "local") {
    throw Error("config key oracle: expected local or external");
  }

  if (c.has("topk")) {
    s.topk.clear();
    for (double k : c.get_doubles("topk", {})) {
      if (k < 1 || k != std::floor(k)) throw Error("config key topk: expected positive integers");
      s.topk.push_back(static_cast<std::size_t>(k));
    }
  }
  s.spam_thresholds = c.get_doubles("spam_thresholds", s.spam_thresholds);
  std::sort(s.spam_thresholds.begin(), s.spam_thresholds.end());
  s.spam_window = c.get_count("spam_window", s.spam_window);
  s.outcomes_file = c.get("outcomes", s.outcomes_file);
  s.report_file = c.get("report", s.report_file);
  return s;
}

const Query& Benchmark::query(const std::string& id) const {
  for (const auto& q : queries)
    if (q.id == id) return q;
  for (const auto& q : ood_queries)
    if (q.id == id) return q;
  throw Error("unknown query id: " + id);
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::uint64_t benchmark_fingerprint(const Corpus& corpus, const std::vector<Query>& queries,
                                    const std::vector<Query>& ood, const Qrels& qrels) {
  std::string s;
  for (const auto& d : corpus.documents()) s += d.id + '\t' + d.text + '\n';
  for (const auto& q : queries) s += q.id + '\t' + q.text + '\n';
  for (const auto& q : ood) s += q.id + '\t' + q.text + '\n';
  for (const auto& [qid, docs] : qrels)
    for (const auto& [did, g] : docs) s += qid + ' ' + did + ' ' + std::to_string(g) + '\n';
  return fnv1a(s);
}

std::filesystem::path synonyms_path(const Settings& s) {
  return s.synonyms_file.empty() ? s.path("synonyms.tsv") : s.synonyms_file;
}
std::filesystem::path phrases_path(const Settings& s) {
  return s.phrases_file.empty() ? s.path("phrases.tsv") : s.phrases_file;
}

}  // namespace

std::uint64_t target_hash(const Settings& s, const Benchmark& b) {
  const auto& t = s.target;
  return fnv1a("target|" + hex(b.fingerprint) + "|" + std::to_string(s.shape.dim) + "," +
               std::to_string(s.shape.hidden) + "|" + std::to_string(t.seed) + "," + std::to_string(t.epochs) + "," +
               std::to_string(t.pairs_per_query) + "," + num(t.learning_rate) + "," + num(t.embedding_scale));
}

std::uint64_t surrogate_hash(const Settings& s, const Benchmark& b) {
  const auto& d = s.distill;
  return fnv1a("surrogate|" + hex(target_hash(s, b)) + "|" + std::to_string(d.seed) + "," +
               std::to_string(d.epochs) + "," + std::to_string(d.depth) + "," + std::to_string(d.gap) + "," +
               num(d.learning_rate) + "," + num(d.weight_decay) + "," + std::to_string(d.holdout_stride) + "," +
               num(d.embedding_scale) + "," + (s.distill_ood ? "ood" : "iid"));
}

std::uint64_t agents_hash(const Settings& s, const Benchmark& b) {
  const auto& r = s.reward;
  const auto& t = s.train;
  std::string key = "agents|" + (s.white_box ? std::string("white-box|") + hex(target_hash(s, b))
                                             : hex(surrogate_hash(s, b)));
  key += "|" + num(r.xi) + "," + num(r.beta) + "," + num(r.gamma) + "," + std::to_string(r.budget) + "," +
         (r.similarity_floor ? num(*r.similarity_floor) : std::string("none"));
  key += "|" + std::to_string(s.generator.top_n) + "," + std::to_string(s.generator.shortlist) + "," +
         num(s.generator.fluency_weight);
  key += "|" + std::to_string(s.policy_hidden) + "," + std::to_string(s.agent_seed) + "," + std::to_string(t.epochs) +
         "," + std::to_string(t.batch_size) + "," + num(t.learning_rate) + "," +
         (t.optimizer == OptimizerKind::Adam ? "adam" : "sgd") + "," + (t.use_baseline ? "b" : "nb") + "," +
         num(t.baseline_decay) + "," + std::to_string(t.seed);
  key += "|" + to_string(s.train_difficulty) + "," + std::to_string(s.train_targets) + "," +
         std::to_string(s.target_selection_seed) + "," + std::to_string(s.num_others);
  return fnv1a(key);
}

Benchmark make_benchmark(const Settings& s) {
  const auto gen = generate_synthetic_corpus(s.synthetic);
  Benchmark b;
  auto corpus = std::make_shared<Corpus>(build_corpus(gen.documents, s.max_doc_len));
  for (const auto& r : gen.queries) b.queries.push_back(make_query(r, corpus->vocab()));
  for (const auto& r : gen.ood_queries) b.ood_queries.push_back(make_query(r, corpus->vocab()));
  b.qrels = gen.qrels;
  b.synonyms = SynonymTable::from_words(gen.synonyms, corpus->vocab());
  b.phrases = PhraseTable::mine(*corpus, s.phrase_min_freq);
  b.lm = std::make_shared<BigramLM>(BigramLM::train(*corpus, s.lm_add_k));
  b.fingerprint = benchmark_fingerprint(*corpus, b.queries, b.ood_queries, b.qrels);
  b.corpus = std::move(corpus);
  return b;
}

void write_benchmark_files(const Settings& s) {
  std::filesystem::create_directories(s.workdir);
  const auto gen = generate_synthetic_corpus(s.synthetic);
  write_jsonl_records(s.path("corpus.jsonl"), gen.documents);
  write_jsonl_records(s.path("queries.jsonl"), gen.queries);
  write_jsonl_records(s.path("ood_queries.jsonl"), gen.ood_queries);
  write_qrels(s.path("qrels.txt"), gen.qrels);
  write_query_topics(s.path("query_topics.txt"), gen);
  const Corpus corpus = build_corpus(gen.documents, s.max_doc_len);
  SynonymTable::from_words(gen.synonyms, corpus.vocab()).save(s.path("synonyms.tsv"), corpus.vocab());
  PhraseTable::mine(corpus, s.phrase_min_freq).save(s.path("phrases.tsv"), corpus.vocab());
}

Benchmark load_benchmark(const Settings& s) {
  Benchmark b;
  auto corpus = std::make_shared<Corpus>(ingest_corpus(s.path("corpus.jsonl"), s.max_doc_len));
  b.queries = ingest_queries(s.path("queries.jsonl"), corpus->vocab());
  if (std::filesystem::exists(s.path("ood_queries.jsonl")))
    b.ood_queries = ingest_queries(s.path("ood_queries.jsonl"), corpus->vocab());
  b.qrels = read_qrels(s.path("qrels.txt"));
  b.synonyms = SynonymTable::load(synonyms_path(s), corpus->vocab());
  b.phrases = PhraseTable::load(phrases_path(s), corpus->vocab(), s.phrase_min_freq);
  b.lm = std::make_shared<BigramLM>(BigramLM::train(*corpus, s.lm_add_k));
  b.fingerprint = benchmark_fingerprint(*corpus, b.queries, b.ood_queries, b.qrels);
  b.corpus = std::move(corpus);
  return b;
}

TargetRanker build_target(const Benchmark& b, const Settings& s) {
  TargetTrainConfig cfg = s.target;
  cfg.shape = s.shape;
  return train_target(b.corpus, b.queries, b.qrels, cfg);
}

DistillResult build_surrogate(const TargetRanker& target, const Benchmark& b, const Settings& s) {
  DistillConfig cfg = s.distill;
  cfg.shape = s.shape;
  const auto& qs = s.distill_ood ? b.ood_queries : b.queries;
  if (qs.empty()) throw Error("build_surrogate: no distillation queries");
  return distill_surrogate(target, qs, cfg);
}

TargetSet select_benchmark_targets(const TargetRanker& target, const Benchmark& b, Difficulty difficulty,
                                   std::size_t total, std::size_t num_others, std::uint64_t seed) {
  if (total == 0) throw Error("select_benchmark_targets: no targets requested");
  if (b.queries.empty()) throw Error("select_benchmark_targets: no queries");
  const std::size_t per_query = (total + b.queries.size() - 1) / b.queries.size();
  Rng rng(seed);
  struct Pick {
    std::size_t query;
    TargetPick pick;
  };
  std::vector<Pick> picks;
  std::vector<RankedList> lists;
  for (std::size_t qi = 0; qi < b.queries.size(); ++qi) {
    lists.push_back(target.retrieve(b.queries[qi], kTargetListDepth));
    for (auto& p : select_targets(lists.back(), difficulty, per_query, rng)) picks.push_back({qi, std::move(p)});
  }
  // keep a uniformly chosen subset of `total`, then restore query/rank order
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (picks.size() - i));
    std::swap(picks[i], picks[j]);
  }
  if (picks.size() > total) picks.resize(total);
  std::sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& c) {
    return a.query != c.query ? a.query < c.query : a.pick.rank < c.pick.rank;
  });

  TargetSet set;
  for (const auto& p : picks) {
    const auto& list = lists[p.query];
    EpisodeInput in;
    in.query = &b.queries[p.query];
    in.document = &b.corpus->document(p.pick.doc_id);
    for (std::size_t r = 1; r <= list.size() && in.others.size() < num_others; ++r)
      if (list.at_rank(r) != p.pick.doc_id) in.others.push_back(&b.corpus->document(list.at_rank(r)));
    set.inputs.push_back(std::move(in));
    set.rank_before.push_back(p.pick.rank);
    set.lists.push_back(list);
  }
  return set;
}

AttackSession::AttackSession(const Benchmark& b, const SurrogateRanker& surrogate, const Settings& s)
    : oracle_(surrogate, *b.lm, &b.corpus->vocab()) {
  if (s.external_oracle) oracle_.use_external(*s.external_oracle);
  ctx_.surrogate = &surrogate;
  ctx_.tables = AttackTables{&b.synonyms, &b.phrases, b.lm.get()};
  ctx_.generator = s.generator;
  ctx_.oracle = &oracle_;
  ctx_.reward = s.reward;
}

TrainResult train_attacker(const Benchmark& b, const SurrogateRanker& surrogate, const TargetSet& targets,
                           const Settings& s, const std::function<void(const TrainLogRecord&)>& on_epoch) {
  const AttackSession session(b, surrogate, s);
  Agents init = Agents::create(surrogate.dim(), s.policy_hidden, s.agent_seed);
  return train_agents(std::move(init), session.context(), targets.inputs, s.train, on_epoch);
}

std::vector<AttackOutcome> run_attack(const Benchmark& b, const TargetRanker& target, const SurrogateRanker& surrogate,
                                      const Agents& agents, const TargetSet& targets, const Settings& s,
                                      const AttackMode& mode) {
  const AttackSession session(b, surrogate, s);
  EpisodeOptions opts;
  opts.strategy = mode.strategy;
  opts.single = mode.single;
  opts.action = ActionMode::Argmax;
  const auto trajs = run_episodes(session.context(), agents, targets.inputs, opts, s.attack_seed);
  std::vector<AttackOutcome> out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    const auto& list = targets.lists[i];
    AttackOutcome o;
    o.query_id = tr.query_id;
    o.doc_id = tr.doc_id;
    o.rank_before = targets.rank_before[i];
    o.rank_after = target.rank_with_replacement(*targets.inputs[i].query, list.ids(), list.size(), tr.doc_id,
                                                tr.final_tokens)
                       .position(tr.doc_id);
    o.budget = tr.budget_used;
    o.counts = tr.granularity_counts();
    o.perturbed_text = detokenize(tr.final_tokens, b.corpus->vocab());
    out.push_back(std::move(o));
  }
  return out;
}

FullReport evaluate_outcomes(const std::vector<AttackOutcome>& outcomes, const Benchmark& b, const Settings& s) {
  FullReport r;
  r.mode = s.mode.name();
  r.metrics = compute_metrics(outcomes, s.topk);
  std::vector<Query> all = b.queries;
  all.insert(all.end(), b.ood_queries.begin(), b.ood_queries.end());
  r.screening = screen_outcomes(outcomes, *b.corpus, all, *b.lm, s.spam_thresholds, s.spam_window);
  return r;
}

std::string report_json(const FullReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["count"] = r.metrics.count;
  j["asr"] = round2(r.metrics.asr);
  j["boost"] = round2(r.metrics.boost);
  nlohmann::ordered_json tk = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metrics.topk) tk["T" + std::to_string(k) + "R"] = round2(v);
  j["topk"] = tk;
  j["mean_budget"] = round2(r.metrics.mean_budget);
  j["mean_counts"] = {{"word", round2(r.metrics.mean_counts[0])},
                      {"phrase", round2(r.metrics.mean_counts[1])},
                      {"sentence", round2(r.metrics.mean_counts[2])}};
  nlohmann::ordered_json sc;
  sc["thresholds"] = r.screening.thresholds;
  std::vector<double> rates;
  for (double x : r.screening.detection_rate) rates.push_back(round2(x));
  sc["detection_rate"] = rates;
  sc["mean_spamicity_original"] = std::round(r.screening.mean_spamicity_original * 1e4) / 1e4;
  sc["mean_spamicity_attacked"] = std::round(r.screening.mean_spamicity_attacked * 1e4) / 1e4;
  sc["mean_perplexity_original"] = round2(r.screening.mean_perplexity_original);
  sc["mean_perplexity_attacked"] = round2(r.screening.mean_perplexity_attacked);
  sc["mean_perplexity_ratio"] = round2(r.screening.mean_perplexity_ratio);
  j["screening"] = sc;
  return j.dump(2) + "\n";
}

FullReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error("malformed report file");
  FullReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.metrics.count = j.at("count").get<std::size_t>();
    r.metrics.asr = j.at("asr").get<double>();
    r.metrics.boost = j.at("boost").get<double>();
    for (const auto& [k, v] : j.at("topk").items()) {
      const std::string digits = k.substr(1, k.size() - 2);
      r.metrics.topk[std::stoul(digits)] = v.get<double>();
    }
    r.metrics.mean_budget = j.at("mean_budget").get<double>();
    const auto& mc = j.at("mean_counts");
    r.metrics.mean_counts = {mc.at("word").get<double>(), mc.at("phrase").get<double>(), mc.at("sentence").get<double>()};
    const auto& sc = j.at("screening");
    r.screening.thresholds = sc.at("thresholds").get<std::vector<double>>();
    r.screening.detection_rate = sc.at("detection_rate").get<std::vector<double>>();
    r.screening.mean_spamicity_original = sc.at("mean_spamicity_original").get<double>();
    r.screening.mean_spamicity_attacked = sc.at("mean_spamicity_attacked").get<double>();
    r.screening.mean_perplexity_original = sc.at("mean_perplexity_original").get<double>();
    r.screening.mean_perplexity_attacked = sc.at("mean_perplexity_attacked").get<double>();
    r.screening.mean_perplexity_ratio = sc.at("mean_perplexity_ratio").get<double>();
  } catch (const std::exception& e) {
    throw Error(std::string("malformed report file: ") + e.what());
  }
  return r;
}

std::string report_table(const FullReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "mode: " << r.mode << "  targets: " << r.metrics.count << "\n\n";
  out << std::left << std::setw(12) << "metric" << std::right << std::setw(10) << "value" << "\n";
  out << std::left << std::setw(12) << "ASR (%)" << std::right << std::setw(10) << r.metrics.asr << "\n";
  out << std::left << std::setw(12) << "Boost" << std::right << std::setw(10) << r.metrics.boost << "\n";
  for (const auto& [k, v] : r.metrics.topk)
    out << std::left << std::setw(12) << ("T" + std::to_string(k) + "R (%)") << std::right << std::setw(10) << v << "\n";
  out << std::left << std::setw(12) << "budget" << std::right << std::setw(10) << r.metrics.mean_budget << "\n";
  out << std::left << std::setw(12) << "W / P / S" << std::right << std::setw(10) << r.metrics.mean_counts[0] << " / "
      << r.metrics.mean_counts[1] << " / " << r.metrics.mean_counts[2] << "\n\n";
  out << std::left << std::setw(12) << "threshold" << std::right << std::setw(12) << "flagged (%)" << "\n";
  for (std::size_t i = 0; i < r.screening.thresholds.size(); ++i)
    out << std::left << std::setw(12) << r.screening.thresholds[i] << std::right << std::setw(12)
        << r.screening.detection_rate[i] << "\n";
  out << "\nspamicity original / attacked: " << r.screening.mean_spamicity_original << " / "
      << r.screening.mean_spamicity_attacked << "\n";
  out << "perplexity original / attacked: " << r.screening.mean_perplexity_original << " / "
      << r.screening.mean_perplexity_attacked << "  (mean ratio " << r.screening.mean_perplexity_ratio << ")\n";
  return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TargetRanker load_target(const Settings& s, const Benchmark& b) {
  return target_from_checkpoint(load_checkpoint(s.path("target.ckpt"), "target", target_hash(s, b)), b.corpus);
}

SurrogateRanker load_surrogate(const Settings& s, const Benchmark& b, const TargetRanker& target) {
  if (s.white_box) return white_box_scorer(target);
  return SurrogateRanker::from_checkpoint(load_checkpoint(s.path("surrogate.ckpt"), "surrogate", surrogate_hash(s, b)));
}

}  // namespace

void command_gen_corpus(const Settings& s) {
  write_benchmark_files(s);
  const Benchmark b = load_benchmark(s);
  log_info("wrote " + std::to_string(b.corpus->size()) + " documents, " + std::to_string(b.queries.size()) +
           " queries, " + std::to_string(b.phrases.size()) + " phrases to " + s.workdir.string());
}

void command_train_target(const Settings& s) {
  const Benchmark b = load_benchmark(s);
  const TargetRanker t = build_target(b, s);
  save_checkpoint(s.path("target.ckpt"), target_checkpoint(t, target_hash(s, b)));
  log_info("wrote " + s.path("target.ckpt").string());
}

void command_distill_surrogate(const Settings& s) {
  const Benchmark b = load_benchmark(s);
  const TargetRanker t = load_target(s, b);
  const DistillResult r = build_surrogate(t, b, s);
  save_checkpoint(s.path("surrogate.ckpt"), r.surrogate.to_checkpoint("surrogate", surrogate_hash(s, b)));
  const double tau = ranking_agreement(r.surrogate, t, b.queries, 0, s.distill.holdout_stride);
  std::ostringstream msg;
  msg << std::fixed << std::setprecision(4) << "distilled on " << r.pair_count << " pairs; held-out Kendall tau "
      << tau << "; final loss " << r.epoch_loss.back();
  log_info(msg.str());
}

void command_train_attacker(const Settings& s) {
  const Benchmark b = load_benchmark(s);
  const TargetRanker t = load_target(s, b);
  const SurrogateRanker sur = load_surrogate(s, b, t);
  const TargetSet targets =
      select_benchmark_targets(t, b, s.train_difficulty, s.train_targets, s.num_others, s.target_selection_seed);
  std::ofstream log(s.path("train_log.jsonl"), std::ios::binary);
  if (!log) throw Error("cannot write " + s.path("train_log.jsonl").string());
  const auto result = train_attacker(b, sur, targets, s, [&](const TrainLogRecord& r) { log << to_json_line(r) << '\n'; });
  save_checkpoint(s.path("agents.ckpt"), result.agents.to_checkpoint(agents_hash(s, b)));
  log_info("wrote " + s.path("agents.ckpt").string());
}

void command_attack(const Settings& s) {
  const Benchmark b = load_benchmark(s);
  const TargetRanker t = load_target(s, b);
  const SurrogateRanker sur = load_surrogate(s, b, t);
  const Agents agents = Agents::from_checkpoint(load_checkpoint(s.path("agents.ckpt"), "agents", agents_hash(s, b)));
  const TargetSet targets =
      select_benchmark_targets(t, b, s.eval_difficulty, s.eval_targets, s.num_others, s.target_selection_seed);
  const auto outcomes = run_attack(b, t, sur, agents, targets, s, s.mode);
  write_outcomes(s.path(s.outcomes_file), outcomes);
  log_info("wrote " + std::to_string(outcomes.size()) + " outcomes to " + s.path(s.outcomes_file).string());
}

void command_evaluate(const Settings& s) {
  const auto outcomes = read_outcomes(s.path(s.outcomes_file));
  const Benchmark b = load_benchmark(s);
  const FullReport r = evaluate_outcomes(outcomes, b, s);
  write_text(s.path(s.report_file + ".json"), report_json(r));
  log_info("wrote " + s.path(s.report_file + ".json").string());
}

void command_report(const Settings& s) {
  const FullReport r = report_from_json(read_text(s.path(s.report_file + ".json")));
  const std::string table = report_table(r);
  write_text(s.path(s.report_file + ".txt"), table);
  std::fwrite(table.data(), 1, table.size(), stdout);
}

}  // namespace mara

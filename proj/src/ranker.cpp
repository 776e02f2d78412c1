#include "mara/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "mara/kernels.hpp"

namespace mara {

std::uint64_t RankerShape::hash() const {
  return fnv1a("ranker:v=" + std::to_string(vocab_size) + ",m=" + std::to_string(dim) +
               ",h=" + std::to_string(hidden));
}

RankerParams RankerParams::zeros(const RankerShape& s) {
  RankerParams p;
  p.embeddings = Matrix(s.vocab_size, s.dim);
  p.encoder_w = Matrix(s.dim, s.dim);
  p.encoder_b.assign(s.dim, 0.0);
  p.w1 = Matrix(s.hidden, 3 * s.dim);
  p.b1.assign(s.hidden, 0.0);
  p.w2.assign(s.hidden, 0.0);
  p.b2 = 0.0;
  return p;
}

void RankerParams::axpy(double scale, const RankerParams& o) {
  auto ax = [scale](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  };
  ax(embeddings.data, o.embeddings.data);
  ax(encoder_w.data, o.encoder_w.data);
  ax(encoder_b, o.encoder_b);
  ax(w1.data, o.w1.data);
  ax(b1, o.b1);
  ax(w2, o.w2);
  b2 += scale * o.b2;
}

bool RankerParams::all_finite() const {
  auto fin = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return fin(embeddings.data) && fin(encoder_w.data) && fin(encoder_b) && fin(w1.data) && fin(b1) && fin(w2) &&
         std::isfinite(b2);
}

SurrogateRanker::SurrogateRanker(const RankerShape& shape, std::uint64_t seed, double embedding_scale)
    : shape_(shape), params_(RankerParams::zeros(shape)) {
  if (shape.vocab_size == 0 || shape.dim == 0 || shape.hidden == 0) throw Error("SurrogateRanker: empty shape");
  Rng rng(seed);
  const double m = static_cast<double>(shape.dim);
  fill_normal(params_.embeddings, embedding_scale, rng);
  fill_normal(params_.encoder_w, 1.0 / std::sqrt(m), rng);
  fill_normal(params_.w1, 1.0 / std::sqrt(3.0 * m), rng);
  fill_normal(params_.w2, 1.0 / std::sqrt(static_cast<double>(shape.hidden)), rng);
  // start every hidden unit slightly active so relu gradients flow
  std::fill(params_.b1.begin(), params_.b1.end(), 0.1);
}

SurrogateRanker::SurrogateRanker(const RankerShape& shape, RankerParams params)
    : shape_(shape), params_(std::move(params)) {
  if (params_.embeddings.rows != shape.vocab_size || params_.embeddings.cols != shape.dim ||
      params_.w1.rows != shape.hidden || params_.w1.cols != 3 * shape.dim)
    throw Error("SurrogateRanker: parameter shapes do not match");
}

std::span<const double> SurrogateRanker::embedding(TokenId t) const {
  if (t >= shape_.vocab_size) throw Error("token id outside ranker vocabulary");
  return params_.embeddings.row(t);
}

void SurrogateRanker::embedding_sum(std::span<const TokenId> tokens, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (TokenId t : tokens) {
    const auto e = embedding(t);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += e[k];
  }
}

std::vector<double> SurrogateRanker::mean_embedding(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("mean embedding of an empty token sequence");
  std::vector<double> m(shape_.dim);
  embedding_sum(tokens, m);
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (auto& x : m) x *= inv;
  return m;
}

Matrix SurrogateRanker::embed(std::span<const TokenId> tokens) const {
  Matrix x(tokens.size(), shape_.dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto e = embedding(tokens[i]);
    std::copy(e.begin(), e.end(), x.row(i).begin());
  }
  return x;
}

SurrogateRanker::Forward SurrogateRanker::forward(std::span<const double> qm, std::span<const double> dm) const {
  const std::size_t m = shape_.dim;
  Forward f;
  f.z.resize(3 * m);
  for (std::size_t k = 0; k < m; ++k) {
    f.z[k] = qm[k];
    f.z[m + k] = dm[k];
    f.z[2 * m + k] = qm[k] * dm[k];
  }
  f.pre.resize(shape_.hidden);
  double s = params_.b2;
  for (std::size_t j = 0; j < shape_.hidden; ++j) {
    const double a = params_.b1[j] + dot(params_.w1.row(j), f.z);
    f.pre[j] = a;
    if (a > 0.0) s += params_.w2[j] * a;
  }
  f.score = s;
  return f;
}

double SurrogateRanker::score_means(std::span<const double> qm, std::span<const double> dm) const {
  const std::size_t m = shape_.dim;
  double z[3 * 256];
  std::vector<double> heap;
  double* zp = z;
  if (m > 256) {
    heap.resize(3 * m);
    zp = heap.data();
  }
  for (std::size_t k = 0; k < m; ++k) {
    zp[k] = qm[k];
    zp[m + k] = dm[k];
    zp[2 * m + k] = qm[k] * dm[k];
  }
  const std::span<const double> zs(zp, 3 * m);
  double s = params_.b2;
  for (std::size_t j = 0; j < shape_.hidden; ++j) {
    const double a = params_.b1[j] + dot(params_.w1.row(j), zs);
    if (a > 0.0) s += params_.w2[j] * a;
  }
  return s;
}

double SurrogateRanker::score(std::span<const TokenId> query, std::span<const TokenId> doc) const {
  if (query.empty() || doc.empty()) throw Error("score: empty token sequence");
  const auto qm = mean_embedding(query);
  const auto dm = mean_embedding(doc);
  return score_means(qm, dm);
}

double SurrogateRanker::score_inputs(const Matrix& qx, const Matrix& dx) const {
  if (qx.rows == 0 || dx.rows == 0) throw Error("score: empty token sequence");
  std::vector<double> qm(shape_.dim, 0.0), dm(shape_.dim, 0.0);
  for (std::size_t i = 0; i < qx.rows; ++i)
    for (std::size_t k = 0; k < shape_.dim; ++k) qm[k] += qx(i, k);
  for (std::size_t i = 0; i < dx.rows; ++i)
    for (std::size_t k = 0; k < shape_.dim; ++k) dm[k] += dx(i, k);
  for (auto& v : qm) v /= static_cast<double>(qx.rows);
  for (auto& v : dm) v /= static_cast<double>(dx.rows);
  return score_means(qm, dm);
}

MeanGradient SurrogateRanker::mean_gradient(std::span<const double> qm, std::span<const double> dm) const {
  const std::size_t m = shape_.dim;
  const Forward f = forward(qm, dm);
  std::vector<double> dz(3 * m, 0.0);
  for (std::size_t j = 0; j < shape_.hidden; ++j) {
    if (f.pre[j] <= 0.0) continue;
    const auto row = params_.w1.row(j);
    for (std::size_t k = 0; k < 3 * m; ++k) dz[k] += params_.w2[j] * row[k];
  }
  MeanGradient g;
  g.query.resize(m);
  g.doc.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    g.query[k] = dz[k] + dz[2 * m + k] * dm[k];
    g.doc[k] = dz[m + k] + dz[2 * m + k] * qm[k];
  }
  return g;
}

Matrix SurrogateRanker::doc_input_gradient(std::span<const TokenId> query, std::span<const TokenId> doc) const {
  if (query.empty() || doc.empty()) throw Error("gradient: empty token sequence");
  const auto g = mean_gradient(mean_embedding(query), mean_embedding(doc));
  Matrix out(doc.size(), shape_.dim);
  const double inv = 1.0 / static_cast<double>(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i)
    for (std::size_t k = 0; k < shape_.dim; ++k) out(i, k) = g.doc[k] * inv;
  return out;
}

void SurrogateRanker::accumulate_param_gradient(std::span<const TokenId> query, std::span<const TokenId> doc,
                                                double weight, RankerParams& grad) const {
  if (weight == 0.0) return;
  const std::size_t m = shape_.dim;
  const auto qm = mean_embedding(query);
  const auto dm = mean_embedding(doc);
  const Forward f = forward(qm, dm);
  std::vector<double> dz(3 * m, 0.0);
  grad.b2 += weight;
  for (std::size_t j = 0; j < shape_.hidden; ++j) {
    if (f.pre[j] <= 0.0) continue;
    grad.w2[j] += weight * f.pre[j];
    const double da = weight * params_.w2[j];
    grad.b1[j] += da;
    auto grow = grad.w1.row(j);
    const auto prow = params_.w1.row(j);
    for (std::size_t k = 0; k < 3 * m; ++k) {
      grow[k] += da * f.z[k];
      dz[k] += da * prow[k];
    }
  }
  const double inv_q = 1.0 / static_cast<double>(query.size());
  const double inv_d = 1.0 / static_cast<double>(doc.size());
  std::vector<double> gq(m), gd(m);
  for (std::size_t k = 0; k < m; ++k) {
    gq[k] = (dz[k] + dz[2 * m + k] * dm[k]) * inv_q;
    gd[k] = (dz[m + k] + dz[2 * m + k] * qm[k]) * inv_d;
  }
  for (TokenId t : query) {
    auto row = grad.embeddings.row(t);
    for (std::size_t k = 0; k < m; ++k) row[k] += gq[k];
  }
  for (TokenId t : doc) {
    auto row = grad.embeddings.row(t);
    for (std::size_t k = 0; k < m; ++k) row[k] += gd[k];
  }
}

Matrix SurrogateRanker::hidden_states(std::span<const TokenId> doc) const {
  if (doc.empty()) throw Error("hidden_states: empty document");
  const std::size_t m = shape_.dim;
  Matrix h(doc.size(), m);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto x = embedding(doc[i]);
    for (std::size_t r = 0; r < m; ++r) h(i, r) = std::tanh(params_.encoder_b[r] + dot(params_.encoder_w.row(r), x));
  }
  return h;
}

Checkpoint SurrogateRanker::to_checkpoint(const std::string& kind, std::uint64_t config_hash) const {
  Checkpoint c;
  c.kind = kind;
  c.config_hash = config_hash;
  c.add("shape", {3}, {double(shape_.vocab_size), double(shape_.dim), double(shape_.hidden)});
  c.add("embeddings", {params_.embeddings.rows, params_.embeddings.cols}, params_.embeddings.data);
  c.add("encoder_w", {params_.encoder_w.rows, params_.encoder_w.cols}, params_.encoder_w.data);
  c.add("encoder_b", {params_.encoder_b.size()}, params_.encoder_b);
  c.add("w1", {params_.w1.rows, params_.w1.cols}, params_.w1.data);
  c.add("b1", {params_.b1.size()}, params_.b1);
  c.add("w2", {params_.w2.size()}, params_.w2);
  c.add("b2", {1}, {params_.b2});
  return c;
}

SurrogateRanker SurrogateRanker::from_checkpoint(const Checkpoint& c) {
  const auto& s = c.get("shape").values;
  if (s.size() != 3) throw Error("ranker checkpoint: bad shape record");
  RankerShape shape{static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[2])};
  RankerParams p = RankerParams::zeros(shape);
  auto take = [&](const char* name, std::vector<double>& dst) {
    const auto& a = c.get(name);
    if (a.values.size() != dst.size()) throw Error(std::string("ranker checkpoint: wrong size for ") + name);
    dst = a.values;
  };
  take("embeddings", p.embeddings.data);
  take("encoder_w", p.encoder_w.data);
  take("encoder_b", p.encoder_b);
  take("w1", p.w1.data);
  take("b1", p.b1);
  take("w2", p.w2);
  p.b2 = c.get("b2").values.at(0);
  return SurrogateRanker(shape, std::move(p));
}

RankedList::RankedList(std::string query_id, std::vector<std::string> ordered)
    : query_id_(std::move(query_id)), ordered_(std::move(ordered)) {
  for (std::size_t i = 0; i < ordered_.size(); ++i)
    if (!pos_.emplace(ordered_[i], i + 1).second) throw Error("RankedList: duplicate id " + ordered_[i]);
}

std::size_t RankedList::position(const std::string& doc_id) const {
  auto it = pos_.find(doc_id);
  if (it == pos_.end()) throw Error("document " + doc_id + " not in ranked list for " + query_id_);
  return it->second;
}

TargetRanker::TargetRanker(SurrogateRanker scorer, std::shared_ptr<const Corpus> corpus)
    : scorer_(std::move(scorer)), corpus_(std::move(corpus)) {
  if (!corpus_) throw Error("TargetRanker: null corpus");
  if (scorer_.shape().vocab_size != corpus_->vocab().size())
    throw Error("TargetRanker: scorer vocabulary does not match corpus");
  doc_means_ = Matrix(corpus_->size(), scorer_.dim());
  for (std::size_t i = 0; i < corpus_->size(); ++i) {
    const auto m = scorer_.mean_embedding(corpus_->documents()[i].tokens);
    std::copy(m.begin(), m.end(), doc_means_.row(i).begin());
  }
}

namespace {

std::size_t lexical_overlap(const std::unordered_set<TokenId>& qset, std::span<const TokenId> doc) {
  std::size_t n = 0;
  for (TokenId t : doc)
    if (qset.count(t)) ++n;
  return n;
}

}  // namespace

RankedList TargetRanker::rank_impl(const Query& q, std::span<const std::string> candidates, std::size_t k,
                                   const std::string* replaced_id, std::span<const TokenId> replacement) const {
  if (q.tokens.empty()) throw Error("rank: empty query");
  if (k > candidates.size()) throw Error("rank: k exceeds candidate count");
  const std::unordered_set<TokenId> qset(q.tokens.begin(), q.tokens.end());
  Matrix means(candidates.size(), scorer_.dim());
  std::vector<std::size_t> overlap(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t idx = corpus_->index_of(candidates[i]);
    if (replaced_id && candidates[i] == *replaced_id) {
      const auto m = scorer_.mean_embedding(replacement);
      std::copy(m.begin(), m.end(), means.row(i).begin());
      overlap[i] = lexical_overlap(qset, replacement);
    } else {
      std::copy(doc_means_.row(idx).begin(), doc_means_.row(idx).end(), means.row(i).begin());
      overlap[i] = lexical_overlap(qset, corpus_->documents()[idx].tokens);
    }
  }
  const auto qm = scorer_.mean_embedding(q.tokens);
  std::vector<double> scores(candidates.size());
  kernels::score_means(scorer_, qm, means, scores);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (overlap[a] != overlap[b]) return overlap[a] > overlap[b];
    return candidates[a] < candidates[b];
  });
  std::vector<std::string> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(candidates[order[i]]);
  return RankedList(q.id, std::move(ids));
}

RankedList TargetRanker::rank(const Query& q, std::span<const std::string> candidates, std::size_t k) const {
  return rank_impl(q, candidates, k, nullptr, {});
}

RankedList TargetRanker::rank_with_replacement(const Query& q, std::span<const std::string> candidates, std::size_t k,
                                               const std::string& doc_id,
                                               std::span<const TokenId> replacement) const {
  if (replacement.empty()) throw Error("rank: empty replacement document");
  return rank_impl(q, candidates, k, &doc_id, replacement);
}

RankedList TargetRanker::retrieve(const Query& q, std::size_t k) const {
  std::vector<std::string> all;
  all.reserve(corpus_->size());
  for (const auto& d : corpus_->documents()) all.push_back(d.id);
  return rank(q, all, std::min(k, all.size()));
}

SurrogateRanker white_box_scorer(const TargetRanker& target) { return target.scorer_; }

Checkpoint target_checkpoint(const TargetRanker& target, std::uint64_t config_hash) {
  return target.scorer_.to_checkpoint("target", config_hash);
}

TargetRanker target_from_checkpoint(const Checkpoint& ckpt, std::shared_ptr<const Corpus> corpus) {
  return TargetRanker(SurrogateRanker::from_checkpoint(ckpt), std::move(corpus));
}

double pairwise_loss(const SurrogateRanker& r, const Query& q, const Document& d,
                     std::span<const Document* const> others) {
  if (others.empty()) throw Error("pairwise_loss: no other documents");
  const auto qm = r.mean_embedding(q.tokens);
  const double s = r.score_means(qm, r.mean_embedding(d.tokens));
  double loss = 0.0;
  for (const Document* o : others) loss += std::max(0.0, kHingeMargin - s + r.score_means(qm, r.mean_embedding(o->tokens)));
  return loss;
}

Matrix doc_token_gradients(const SurrogateRanker& r, const Query& q, const Document& d,
                           std::span<const Document* const> others) {
  if (others.empty()) throw Error("doc_token_gradients: no other documents");
  const auto qm = r.mean_embedding(q.tokens);
  const auto dm = r.mean_embedding(d.tokens);
  const double s = r.score_means(qm, dm);
  std::size_t active = 0;
  for (const Document* o : others)
    if (kHingeMargin - s + r.score_means(qm, r.mean_embedding(o->tokens)) > 0.0) ++active;
  Matrix g(d.tokens.size(), r.dim());
  if (active == 0) return g;
  // every active hinge term contributes -d f(q,d) / d x_i
  const auto mg = r.mean_gradient(qm, dm);
  const double scale = -static_cast<double>(active) / static_cast<double>(others.size()) /
                       static_cast<double>(d.tokens.size());
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t k = 0; k < g.cols; ++k) g(i, k) = scale * mg.doc[k];
  return g;
}

TargetRanker train_target(std::shared_ptr<const Corpus> corpus, const std::vector<Query>& queries, const Qrels& qrels,
                          const TargetTrainConfig& cfg) {
  if (queries.empty()) throw Error("train_target: no queries");
  RankerShape shape = cfg.shape;
  shape.vocab_size = corpus->vocab().size();
  SurrogateRanker model(shape, cfg.seed, cfg.embedding_scale);
  Rng rng(derive_seed(cfg.seed, 1));
  const auto& docs = corpus->documents();

  // per query: documents bucketed by grade
  std::vector<std::vector<std::vector<std::size_t>>> by_grade(queries.size(), std::vector<std::vector<std::size_t>>(4));
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    for (std::size_t di = 0; di < docs.size(); ++di)
      by_grade[qi][std::clamp(grade_of(qrels, queries[qi].id, docs[di].id), 0, 3)].push_back(di);

  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t qi : order) {
      const auto& buckets = by_grade[qi];
      std::vector<int> grades_present;
      for (int g = 0; g < 4; ++g)
        if (!buckets[g].empty()) grades_present.push_back(g);
      if (grades_present.size() < 2) continue;
      const auto qm = model.mean_embedding(queries[qi].tokens);
      std::vector<double> coef(docs.size(), 0.0);
      std::vector<double> score_cache(docs.size(), std::nan(""));
      auto score_of = [&](std::size_t di) {
        if (std::isnan(score_cache[di])) score_cache[di] = model.score_means(qm, model.mean_embedding(docs[di].tokens));
        return score_cache[di];
      };
      for (std::size_t n = 0; n < cfg.pairs_per_query; ++n) {
        const std::size_t a = rng() % grades_present.size();
        std::size_t b = rng() % (grades_present.size() - 1);
        if (b >= a) ++b;
        const int ghi = std::max(grades_present[a], grades_present[b]);
        const int glo = std::min(grades_present[a], grades_present[b]);
        const std::size_t hi = buckets[ghi][rng() % buckets[ghi].size()];
        const std::size_t lo = buckets[glo][rng() % buckets[glo].size()];
        if (kHingeMargin - score_of(hi) + score_of(lo) > 0.0) {
          coef[hi] -= 1.0;
          coef[lo] += 1.0;
        }
      }
      RankerParams grad = RankerParams::zeros(shape);
      for (std::size_t di = 0; di < docs.size(); ++di)
        if (coef[di] != 0.0) model.accumulate_param_gradient(queries[qi].tokens, docs[di].tokens, coef[di], grad);
      model.mutable_params().axpy(-cfg.learning_rate / static_cast<double>(cfg.pairs_per_query), grad);
    }
  }
  if (!model.params().all_finite()) throw Error("train_target: parameters diverged");
  return TargetRanker(std::move(model), std::move(corpus));
}

DistillResult distill_surrogate(const TargetRanker& target, const std::vector<Query>& queries,
                                const DistillConfig& cfg) {
  if (queries.empty()) throw Error("distill_surrogate: no queries");
  const Corpus& corpus = target.corpus();
  RankerShape shape = cfg.shape;
  shape.vocab_size = corpus.vocab().size();
  DistillResult result{SurrogateRanker(shape, cfg.seed, cfg.embedding_scale), {}, 0};

  struct QueryPairs {
    std::vector<std::size_t> docs;                              // list, by target rank
    std::vector<std::pair<std::size_t, std::size_t>> pairs;    // (higher, lower) list offsets
  };
  std::vector<QueryPairs> lists;
  for (const auto& q : queries) {
    const RankedList rl = target.retrieve(q, cfg.depth);
    if (rl.size() == 0) throw Error("distill_surrogate: target returned an empty list for " + q.id);
    QueryPairs qp;
    for (const auto& id : rl.ids()) qp.docs.push_back(corpus.index_of(id));
    for (std::size_t i = 0; i < qp.docs.size(); ++i) {
      if (is_heldout_document(qp.docs[i], cfg.holdout_stride)) continue;
      for (std::size_t j = i + cfg.gap; j < qp.docs.size(); ++j)
        if (!is_heldout_document(qp.docs[j], cfg.holdout_stride)) qp.pairs.emplace_back(i, j);
    }
    result.pair_count += qp.pairs.size();
    lists.push_back(std::move(qp));
  }
  if (result.pair_count == 0) throw Error("distill_surrogate: no training pairs (list too short for the rank gap)");

  const auto& docs = corpus.documents();
  const double inv_pairs = 1.0 / static_cast<double>(result.pair_count);
  auto& model = result.surrogate;

  // returns mean hinge loss; fills grad when non-null
  auto evaluate = [&](RankerParams* grad) {
    double loss = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto& qp = lists[qi];
      const auto qm = model.mean_embedding(queries[qi].tokens);
      std::vector<double> s(qp.docs.size());
      for (std::size_t i = 0; i < qp.docs.size(); ++i)
        s[i] = model.score_means(qm, model.mean_embedding(docs[qp.docs[i]].tokens));
      std::vector<double> coef(qp.docs.size(), 0.0);
      for (const auto& [hi, lo] : qp.pairs) {
        const double h = kHingeMargin - s[hi] + s[lo];
        if (h > 0.0) {
          loss += h;
          coef[hi] -= 1.0;
          coef[lo] += 1.0;
        }
      }
      if (grad)
        for (std::size_t i = 0; i < qp.docs.size(); ++i)
          model.accumulate_param_gradient(queries[qi].tokens, docs[qp.docs[i]].tokens, coef[i] * inv_pairs, *grad);
    }
    double penalty = 0.0;
    if (cfg.weight_decay > 0.0) {
      auto& p = model.mutable_params();
      auto decay = [&](std::vector<double>& w, std::vector<double>* g) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          penalty += w[i] * w[i];
          if (g) (*g)[i] += cfg.weight_decay * w[i];
        }
      };
      decay(p.embeddings.data, grad ? &grad->embeddings.data : nullptr);
      decay(p.w1.data, grad ? &grad->w1.data : nullptr);
      decay(p.w2, grad ? &grad->w2 : nullptr);
    }
    return loss * inv_pairs + 0.5 * cfg.weight_decay * penalty;
  };

  // gradient descent; the step halves whenever it would raise the objective
  constexpr int kMaxHalvings = 30;
  double step = cfg.learning_rate;
  RankerParams grad = RankerParams::zeros(shape);
  double loss = evaluate(&grad);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    result.epoch_loss.push_back(loss);
    const RankerParams keep = model.params();
    for (int halvings = 0;; ++halvings) {
      model.mutable_params().axpy(-step, grad);
      RankerParams next = RankerParams::zeros(shape);
      const double trial = evaluate(&next);
      if (trial <= loss) {
        loss = trial;
        grad = std::move(next);
        break;
      }
      model.mutable_params() = keep;
      if (halvings == kMaxHalvings) break;
      step *= 0.5;
    }
  }
  result.epoch_loss.push_back(loss);
  if (!model.params().all_finite()) throw Error("distill_surrogate: parameters diverged");
  return result;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da * db > 0) s += 1.0;
      else if (da * db < 0) s -= 1.0;
    }
  return s / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

bool is_heldout_document(std::size_t corpus_index, std::size_t holdout_stride) {
  return holdout_stride != 0 && corpus_index % holdout_stride == holdout_stride - 1;
}

double ranking_agreement(const SurrogateRanker& surrogate, const TargetRanker& target,
                         const std::vector<Query>& queries, std::size_t depth, std::size_t holdout_stride) {
  if (queries.empty()) throw Error("ranking_agreement: no queries");
  const Corpus& corpus = target.corpus();
  double total = 0.0;
  for (const auto& q : queries) {
    const RankedList rl = target.retrieve(q, depth == 0 ? corpus.size() : depth);
    std::vector<double> target_order, surrogate_scores;
    const auto qm = surrogate.mean_embedding(q.tokens);
    for (std::size_t i = 0; i < rl.size(); ++i) {
      const std::size_t idx = corpus.index_of(rl.ids()[i]);
      if (holdout_stride != 0 && !is_heldout_document(idx, holdout_stride)) continue;
      target_order.push_back(-static_cast<double>(i));
      surrogate_scores.push_back(surrogate.score_means(qm, surrogate.mean_embedding(corpus.documents()[idx].tokens)));
    }
    total += kendall_tau(target_order, surrogate_scores);
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace mara

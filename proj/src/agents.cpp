#include "mara/agents.hpp"

#include <cmath>
#include <limits>

namespace mara {

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out)
    : in_(in), hidden_(hidden), out_(out), params_(hidden * in + hidden + out * hidden + out, 0.0) {
  if (in == 0 || hidden == 0 || out == 0) throw Error("Mlp: zero-sized layer");
}

void Mlp::init(Rng& rng, double out_scale) {
  std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(in_)));
  std::normal_distribution<double> n2(0.0, out_scale / std::sqrt(static_cast<double>(hidden_)));
  std::fill(params_.begin(), params_.end(), 0.0);
  double* w1 = params_.data();
  double* w2 = w1 + hidden_ * in_ + hidden_;
  for (std::size_t i = 0; i < hidden_ * in_; ++i) w1[i] = n1(rng);
  for (std::size_t i = 0; i < out_ * hidden_; ++i) w2[i] = n2(rng);
}

void Mlp::forward(std::span<const double> x, std::span<double> out) const {
  if (x.size() != in_ || out.size() != out_) throw Error("Mlp::forward: size mismatch");
  const double* w1 = params_.data();
  const double* b1 = w1 + hidden_ * in_;
  const double* w2 = b1 + hidden_;
  const double* b2 = w2 + out_ * hidden_;
  std::vector<double> z(hidden_);
  for (std::size_t h = 0; h < hidden_; ++h) {
    double a = b1[h];
    const double* row = w1 + h * in_;
    for (std::size_t k = 0; k < in_; ++k) a += row[k] * x[k];
    z[h] = std::tanh(a);
  }
  for (std::size_t o = 0; o < out_; ++o) {
    double y = b2[o];
    const double* row = w2 + o * hidden_;
    for (std::size_t h = 0; h < hidden_; ++h) y += row[h] * z[h];
    out[o] = y;
  }
}

void Mlp::backward(std::span<const double> x, std::span<const double> dout, std::span<double> grad,
                   std::span<double> dx) const {
  if (x.size() != in_ || dout.size() != out_ || grad.size() != params_.size()) throw Error("Mlp::backward: size mismatch");
  const double* w1 = params_.data();
  const double* b1 = w1 + hidden_ * in_;
  const double* w2 = b1 + hidden_;
  double* gw1 = grad.data();
  double* gb1 = gw1 + hidden_ * in_;
  double* gw2 = gb1 + hidden_;
  double* gb2 = gw2 + out_ * hidden_;
  std::vector<double> z(hidden_), dz(hidden_, 0.0);
  for (std::size_t h = 0; h < hidden_; ++h) {
    double a = b1[h];
    const double* row = w1 + h * in_;
    for (std::size_t k = 0; k < in_; ++k) a += row[k] * x[k];
    z[h] = std::tanh(a);
  }
  for (std::size_t o = 0; o < out_; ++o) {
    if (dout[o] == 0.0) continue;
    gb2[o] += dout[o];
    for (std::size_t h = 0; h < hidden_; ++h) {
      gw2[o * hidden_ + h] += dout[o] * z[h];
      dz[h] += dout[o] * w2[o * hidden_ + h];
    }
  }
  for (std::size_t h = 0; h < hidden_; ++h) {
    const double da = dz[h] * (1.0 - z[h] * z[h]);
    if (da == 0.0) continue;
    gb1[h] += da;
    double* grow = gw1 + h * in_;
    for (std::size_t k = 0; k < in_; ++k) grow[k] += da * x[k];
    if (!dx.empty())
      for (std::size_t k = 0; k < in_; ++k) dx[k] += da * w1[h * in_ + k];
  }
}

IndicatorPolicy::IndicatorPolicy(std::size_t dim, std::size_t hidden) : net(3 * dim, hidden, kNumLabels) {}

AggregatorPolicy::AggregatorPolicy(std::size_t dim, std::size_t hidden) : net(dim + kNumLabels, hidden, 1) {}

Agents Agents::create(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  Agents a{IndicatorPolicy(dim, hidden), AggregatorPolicy(dim, hidden)};
  Rng r1(derive_seed(seed, 11)), r2(derive_seed(seed, 12));
  a.indicator.net.init(r1, 0.1);
  a.aggregator.net.init(r2, 0.1);
  return a;
}

std::vector<double> Agents::flat() const {
  std::vector<double> v(indicator.net.params());
  v.insert(v.end(), aggregator.net.params().begin(), aggregator.net.params().end());
  return v;
}

void Agents::set_flat(std::span<const double> v) {
  const std::size_t n = indicator.net.param_count();
  if (v.size() != param_count()) throw Error("Agents::set_flat: size mismatch");
  std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), indicator.net.params().begin());
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), aggregator.net.params().begin());
}

Checkpoint Agents::to_checkpoint(std::uint64_t config_hash) const {
  Checkpoint c;
  c.kind = "agents";
  c.config_hash = config_hash;
  const auto& i = indicator.net;
  const auto& g = aggregator.net;
  c.add("indicator_shape", {3}, {double(i.in()), double(i.hidden()), double(i.out())});
  c.add("indicator", {i.param_count()}, i.params());
  c.add("aggregator_shape", {3}, {double(g.in()), double(g.hidden()), double(g.out())});
  c.add("aggregator", {g.param_count()}, g.params());
  return c;
}

Agents Agents::from_checkpoint(const Checkpoint& c) {
  auto load = [&](const char* shape_name, const char* name) {
    const auto& s = c.get(shape_name).values;
    if (s.size() != 3) throw Error(std::string("agents checkpoint: bad ") + shape_name);
    Mlp net(static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[2]));
    const auto& p = c.get(name).values;
    if (p.size() != net.param_count()) throw Error(std::string("agents checkpoint: wrong size for ") + name);
    net.params() = p;
    return net;
  };
  Agents a;
  a.indicator.net = load("indicator_shape", "indicator");
  a.aggregator.net = load("aggregator_shape", "aggregator");
  if (a.indicator.net.in() % 3 != 0 || a.indicator.net.out() != kNumLabels || a.aggregator.net.out() != 1 ||
      a.aggregator.net.in() != a.indicator.net.in() / 3 + kNumLabels)
    throw Error("agents checkpoint: inconsistent policy shapes");
  return a;
}

Matrix indicator_features(const Matrix& g, const Matrix& x) {
  if (g.rows != x.rows || g.cols != x.cols) throw Error("indicator_features: gradient/embedding length mismatch");
  const std::size_t m = g.cols;
  const double scale = static_cast<double>(g.rows);
  Matrix f(g.rows, 3 * m);
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      const double gi = g(i, k) * scale;
      f(i, k) = gi;
      f(i, m + k) = x(i, k);
      f(i, 2 * m + k) = gi * x(i, k);
    }
  return f;
}

Matrix predict_distribution(const IndicatorPolicy& pol, const Matrix& features) {
  if (features.cols != pol.net.in()) throw Error("predict_distribution: feature width mismatch");
  Matrix u(features.rows, kNumLabels);
  for (std::size_t i = 0; i < features.rows; ++i) {
    pol.net.forward(features.row(i), u.row(i));
    softmax_inplace(u.row(i));
  }
  return u;
}

Matrix predict_distribution(const IndicatorPolicy& pol, const Matrix& gradients, const Matrix& embeddings) {
  return predict_distribution(pol, indicator_features(gradients, embeddings));
}

Labeling label_positions(const Matrix& u, ActionMode mode, Rng& rng) {
  if (u.cols != kNumLabels) throw Error("label_positions: confidences must have 4 columns");
  Labeling out;
  out.labels.resize(u.rows);
  for (std::size_t i = 0; i < u.rows; ++i) {
    const auto row = u.row(i);
    std::size_t c = 0;
    if (mode == ActionMode::Sample) {
      c = sample_categorical(row, rng);
    } else {
      // start from N so that any tie with N resolves to N; other ties keep
      // the lower index
      c = static_cast<std::size_t>(Granularity::None);
      for (std::size_t k = 0; k < kNumLabels; ++k)
        if (row[k] > row[c]) c = k;
    }
    out.labels[i] = static_cast<Granularity>(c);
    out.log_prob += std::log(row[c]);
  }
  return out;
}

namespace {

void chunk(std::vector<PerturbationSpan>& out, std::size_t a, std::size_t b, Granularity g) {
  const std::size_t len = b - a;
  if (g == Granularity::Phrase) {
    if (len < 2) return;
    std::size_t i = a;
    while (b - i >= 2) {
      const std::size_t n = std::min<std::size_t>(5, b - i);
      out.push_back({Granularity::Phrase, i, i + n, 0.0});
      i += n;
    }
    return;
  }
  // sentence
  if (len < 6) {
    chunk(out, a, b, Granularity::Phrase);
    return;
  }
  std::size_t i = a;
  while (b - i >= 6) {
    const std::size_t n = std::min<std::size_t>(10, b - i);
    out.push_back({Granularity::Sentence, i, i + n, 0.0});
    i += n;
  }
  if (i < b) chunk(out, i, b, Granularity::Phrase);
}

std::vector<PerturbationSpan> decode_once(std::span<const Granularity> labels,
                                          std::span<const SentenceBound> bounds) {
  std::vector<PerturbationSpan> out;
  const std::size_t l = labels.size();
  std::size_t i = 0;
  while (i < l) {
    const Granularity c = labels[i];
    std::size_t j = i + 1;
    while (j < l && labels[j] == c) ++j;
    switch (c) {
      case Granularity::None:
        break;
      case Granularity::Word:
        for (std::size_t p = i; p < j; ++p) out.push_back({Granularity::Word, p, p + 1, 0.0});
        break;
      case Granularity::Phrase:
        chunk(out, i, j, Granularity::Phrase);
        break;
      case Granularity::Sentence: {
        // split at sentence boundaries first, then enforce the window
        std::size_t a = i;
        for (const auto& sb : bounds) {
          if (sb.end <= a || sb.start >= j) continue;
          const std::size_t b = std::min(j, sb.end);
          if (b > a) chunk(out, a, b, Granularity::Sentence);
          a = b;
        }
        if (a < j) chunk(out, a, j, Granularity::Sentence);
        break;
      }
    }
    i = j;
  }
  if (!out.empty() && out.size() >= l) out.pop_back();
  return out;
}

}  // namespace

std::vector<Granularity> labels_from_spans(std::span<const PerturbationSpan> spans, std::size_t length) {
  std::vector<Granularity> labels(length, Granularity::None);
  for (const auto& s : spans) {
    if (s.end > length) throw Error("labels_from_spans: span out of range");
    for (std::size_t i = s.start; i < s.end; ++i) labels[i] = s.granularity;
  }
  return labels;
}

std::vector<PerturbationSpan> decode_spans(std::span<const Granularity> labels,
                                           std::span<const SentenceBound> sentence_bounds) {
  std::vector<Granularity> current(labels.begin(), labels.end());
  // repairs only ever demote labels, so this reaches a fixed point
  while (true) {
    auto spans = decode_once(current, sentence_bounds);
    auto induced = labels_from_spans(spans, current.size());
    if (induced == current) return spans;
    current = std::move(induced);
  }
}

std::vector<double> span_representation(const Matrix& h, std::size_t h_start, const Matrix& u, std::size_t u_start,
                                        std::size_t span_length, std::size_t replacement_length) {
  if (replacement_length == 0) throw Error("span_representation: |p_j| must be positive");
  if (h_start + span_length > h.rows || u_start + span_length > u.rows || span_length == 0)
    throw Error("span_representation: span out of bounds");
  const std::size_t m = h.cols;
  std::vector<double> e(m + kNumLabels, 0.0);
  for (std::size_t o = 0; o < span_length; ++o) {
    for (std::size_t k = 0; k < m; ++k) e[k] += h(h_start + o, k);
    for (std::size_t k = 0; k < kNumLabels; ++k) e[m + k] += u(u_start + o, k);
  }
  const double inv = 1.0 / static_cast<double>(replacement_length);
  for (auto& x : e) x *= inv;
  return e;
}

std::vector<double> span_representation(const Matrix& h, const Matrix& u, const PerturbationSpan& span,
                                        std::size_t replacement_length) {
  if (span.end <= span.start) throw Error("span_representation: empty span");
  return span_representation(h, span.start, u, span.start, span.length(), replacement_length);
}

std::vector<double> selection_probabilities(const AggregatorPolicy& pol, const Matrix& reps) {
  if (reps.rows == 0) throw Error("select_perturbation: no candidates");
  if (reps.cols != pol.net.in()) throw Error("select_perturbation: representation width mismatch");
  std::vector<double> p(reps.rows);
  for (std::size_t j = 0; j < reps.rows; ++j) pol.net.forward(reps.row(j), std::span<double>(&p[j], 1));
  softmax_inplace(p);
  return p;
}

Selection select_perturbation(const AggregatorPolicy& pol, const Matrix& reps, ActionMode mode, Rng& rng) {
  const auto p = selection_probabilities(pol, reps);
  Selection s;
  if (mode == ActionMode::Sample) {
    s.index = sample_categorical(p, rng);
  } else {
    for (std::size_t j = 1; j < p.size(); ++j)
      if (p[j] > p[s.index]) s.index = j;
  }
  s.log_prob = std::log(p[s.index]);
  return s;
}

}  // namespace mara

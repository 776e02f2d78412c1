#include "mara/common.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>

namespace mara {

namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;
}  // namespace

void fill_normal(Matrix& m, double stddev, Rng& rng) { fill_normal(m.data, stddev, rng); }

void fill_normal(std::vector<double>& v, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = dist(rng);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error("sample_categorical: weights sum to zero");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // u landed in the rounding slack past the last bucket
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (auto& x : v) x /= s;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser over the combined key
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void log_warning(const std::string& msg) {
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[warn] " << msg << '\n';
}

void log_info(const std::string& msg) {
  if (g_quiet.load()) return;
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[info] " << msg << '\n';
}

void set_quiet(bool quiet) { g_quiet.store(quiet); }

}  // namespace mara

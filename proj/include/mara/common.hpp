#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mara {

/// Every recoverable failure in the library surfaces as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool empty() const { return data.empty(); }
};

/// Fills `m` with N(0, stddev^2) draws in storage order.
void fill_normal(Matrix& m, double stddev, Rng& rng);
void fill_normal(std::vector<double>& v, double stddev, Rng& rng);

double dot(std::span<const double> a, std::span<const double> b);

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Draws an index from an (unnormalised, non-negative) weight vector.
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

/// Numerically stable in-place softmax.
void softmax_inplace(std::span<double> v);

/// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// FNV-1a over the bytes of `s`.
std::uint64_t fnv1a(std::string_view s);

void log_warning(const std::string& msg);
void log_info(const std::string& msg);
/// Suppresses info-level logging (warnings are always shown).
void set_quiet(bool quiet);

}  // namespace mara

#include "mara/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mara/ranker.hpp"

namespace mara::kernels {

namespace {
constexpr std::size_t kParallelThreshold = 64;

void check(const SurrogateRanker& r, std::span<const double> qm, const Matrix& dm, std::span<double> out) {
  if (qm.size() != r.dim() || dm.cols != r.dim() || out.size() != dm.rows)
    throw Error("score_means: shape mismatch");
}
}  // namespace

void score_means_serial(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                        std::span<double> out) {
  check(r, query_mean, doc_means, out);
  for (std::size_t i = 0; i < doc_means.rows; ++i) out[i] = r.score_means(query_mean, doc_means.row(i));
}

void score_means_parallel(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                          std::span<double> out) {
  check(r, query_mean, doc_means, out);
  const auto n = static_cast<std::ptrdiff_t>(doc_means.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = r.score_means(query_mean, doc_means.row(static_cast<std::size_t>(i)));
}

void score_means(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                 std::span<double> out) {
  if (doc_means.rows >= kParallelThreshold && max_threads() > 1)
    score_means_parallel(r, query_mean, doc_means, out);
  else
    score_means_serial(r, query_mean, doc_means, out);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mara::kernels

#pragma once

#include <span>

#include "mara/common.hpp"

namespace mara {
class SurrogateRanker;
}

namespace mara::kernels {

// Batch scorers over rows of mean-embedding matrices. Both variants produce
// bit-identical output; the serial one is the reference the tests hold the
// OpenMP one to.

void score_means_serial(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                        std::span<double> out);
void score_means_parallel(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                          std::span<double> out);

/// Dispatches to the parallel kernel for batches large enough to pay off.
void score_means(const SurrogateRanker& r, std::span<const double> query_mean, const Matrix& doc_means,
                 std::span<double> out);

/// Number of OpenMP threads in use (1 without OpenMP).
int max_threads();

}  // namespace mara::kernels

#pragma once

#include <cstddef>
#include <cstdint>

namespace ptree::kernels {

// Hot inner loops used by tree growth and moment updates. Each operation has
// a scalar reference implementation and, when the build and CPU allow it, an
// AVX2 variant. The active table is chosen once at startup; all variants are
// equivalence-tested against the scalar reference.
struct Ops {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i a[i]
  double (*sum)(const double* a, std::size_t n);
  // Two-pass mean and population variance (divisor n) of a series.
  void (*mean_var)(const double* a, std::size_t n, double* mean, double* var_pop);
  // Split scan accumulator. For each record j (an index into the per-period
  // arrays), find its bucket b = number of edges strictly below z[idx[j]]
  // and add weight / weight*return / 1 into slot b. edges must be strictly
  // increasing; there are n_edges + 1 buckets.
  void (*bucket_accumulate)(const double* z, const double* r, const double* w,
                            const std::int32_t* idx, std::size_t n,
                            const double* edges, std::size_t n_edges,
                            double* wsum, double* wrsum, std::int64_t* count);
};

const Ops& scalar_ops();
const Ops& avx2_ops();  // falls back to scalar when AVX2 is unavailable

bool avx2_available();

// Table selected at startup: AVX2 when the CPU and build support it, unless
// the environment variable PTREE_KERNELS=scalar forces the reference path.
const Ops& ops();
const char* active_name();

}  // namespace ptree::kernels

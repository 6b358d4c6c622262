#include "ptree/kernels.hpp"

// Built with -mavx2 -mfma when the compiler supports it (see CMakeLists).
// Callers must check avx2_available() before routing work here.
#if defined(PTREE_HAVE_AVX2_TU) && defined(__AVX2__)

#include <immintrin.h>

namespace ptree::kernels {
namespace {

inline double hsum256(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum256(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum256(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

void mean_var_avx2(const double* a, std::size_t n, double* mean, double* var_pop) {
  if (n == 0) {
    *mean = 0.0;
    *var_pop = 0.0;
    return;
  }
  const double m = sum_avx2(a, n) / static_cast<double>(n);
  const __m256d vm = _mm256_set1_pd(m);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), vm);
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum256(acc);
  for (; i < n; ++i) {
    const double d = a[i] - m;
    s += d * d;
  }
  *mean = m;
  *var_pop = s / static_cast<double>(n);
}

// Bucket indices for four records at a time: b = #(edges < z), computed with
// vector compares; the scatter into bucket slots stays scalar (records are
// added in index order, so results are bit-identical to the reference).
void bucket_accumulate_avx2(const double* z, const double* r, const double* w,
                            const std::int32_t* idx, std::size_t n,
                            const double* edges, std::size_t n_edges,
                            double* wsum, double* wrsum, std::int64_t* count) {
  std::size_t j = 0;
  alignas(32) std::int64_t bs[4];
  for (; j + 4 <= n; j += 4) {
    const __m128i vidx = _mm_loadu_si128(reinterpret_cast<const __m128i*>(idx + j));
    const __m256d vz = _mm256_i32gather_pd(z, vidx, 8);
    __m256i vb = _mm256_setzero_si256();
    for (std::size_t e = 0; e < n_edges; ++e) {
      const __m256d ve = _mm256_set1_pd(edges[e]);
      const __m256d gt = _mm256_cmp_pd(vz, ve, _CMP_GT_OQ);
      vb = _mm256_sub_epi64(vb, _mm256_castpd_si256(gt));
    }
    _mm256_store_si256(reinterpret_cast<__m256i*>(bs), vb);
    for (int lane = 0; lane < 4; ++lane) {
      const std::int32_t i = idx[j + lane];
      const auto b = static_cast<std::size_t>(bs[lane]);
      wsum[b] += w[i];
      wrsum[b] += w[i] * r[i];
      count[b] += 1;
    }
  }
  for (; j < n; ++j) {
    const std::int32_t i = idx[j];
    const double zi = z[i];
    std::size_t b = 0;
    while (b < n_edges && zi > edges[b]) ++b;
    wsum[b] += w[i];
    wrsum[b] += w[i] * r[i];
    count[b] += 1;
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table{dot_avx2, sum_avx2, mean_var_avx2, bucket_accumulate_avx2};
  return table;
}

}  // namespace ptree::kernels

#else

namespace ptree::kernels {

const Ops& avx2_ops() { return scalar_ops(); }

}  // namespace ptree::kernels

#endif

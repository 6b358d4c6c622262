#include "ptree/kernels.hpp"

namespace ptree::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void mean_var_scalar(const double* a, std::size_t n, double* mean, double* var_pop) {
  if (n == 0) {
    *mean = 0.0;
    *var_pop = 0.0;
    return;
  }
  const double m = sum_scalar(a, n) / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - m;
    acc += d * d;
  }
  *mean = m;
  *var_pop = acc / static_cast<double>(n);
}

void bucket_accumulate_scalar(const double* z, const double* r, const double* w,
                              const std::int32_t* idx, std::size_t n,
                              const double* edges, std::size_t n_edges,
                              double* wsum, double* wrsum, std::int64_t* count) {
  for (std::size_t j = 0; j < n; ++j) {
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

const Ops& scalar_ops() {
  static const Ops table{dot_scalar, sum_scalar, mean_var_scalar, bucket_accumulate_scalar};
  return table;
}

}  // namespace ptree::kernels

#include "mmfusion/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef MMFUSION_HAVE_OPENMP
#include <omp.h>
#endif

namespace mmf::kernels {
namespace {

template <class T>
inline void gemm_row(std::size_t i, Trans ta, Trans tb, std::size_t m, std::size_t n,
                     std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  T* crow = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    T acc = 0;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
      const T bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
      acc += av * bv;
    }
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

template <class T>
inline void softmax_row(std::size_t cols, const T* x, T* y) {
  T mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  T sum = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

}  // namespace

template <class T>
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, ta, tb, m, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const T* a, const T* b, T* c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(static_cast<std::size_t>(i), ta, tb, m, n, k, a, b, c, accumulate);
}

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m > 1 && m * n * k >= kParallelThreshold && max_threads() > 1)
    gemm_parallel(ta, tb, m, n, k, a, b, c, accumulate);
  else
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
}

template <class T>
void softmax_rows_serial(std::size_t rows, std::size_t cols, const T* x, T* y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x + r * cols, y + r * cols);
}

template <class T>
void softmax_rows_parallel(std::size_t rows, std::size_t cols, const T* x, T* y) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_row(cols, x + off, y + off);
  }
}

template <class T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y) {
  if (rows > 1 && rows * cols >= kParallelThreshold && max_threads() > 1)
    softmax_rows_parallel(rows, cols, x, y);
  else
    softmax_rows_serial(rows, cols, x, y);
}

int max_threads() {
#ifdef MMFUSION_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define MMF_INSTANTIATE(T)                                                                  \
  template void gemm_serial<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,       \
                               const T*, const T*, T*, bool);                              \
  template void gemm_parallel<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,     \
                                 const T*, const T*, T*, bool);                            \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,    \
                        const T*, T*, bool);                                               \
  template void softmax_rows_serial<T>(std::size_t, std::size_t, const T*, T*);           \
  template void softmax_rows_parallel<T>(std::size_t, std::size_t, const T*, T*);         \
  template void softmax_rows<T>(std::size_t, std::size_t, const T*, T*);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

}  // namespace mmf::kernels

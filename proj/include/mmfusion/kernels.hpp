#pragma once

// Dense compute kernels behind the tensor ops.
//
// Every kernel exists twice: a serial reference and an OpenMP version that
// splits the outermost (row) loop across threads. Both call the same per-row
// body, so each output element sees the identical floating point reduction
// order and the two variants agree bitwise regardless of thread count.

#include <cstddef>

namespace mmf::kernels {

enum class Trans { No, Yes };

/// Row-major GEMM: C(m x n) (+)= op(A)(m x k) * op(B)(k x n).
/// With Trans::Yes, A is stored k x m (resp. B is stored n x k).
template <class T>
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const T* a, const T* b, T* c, bool accumulate);

template <class T>
void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const T* a, const T* b, T* c, bool accumulate);

/// Picks the parallel variant once the product is large enough to amortize
/// thread startup.
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

/// Numerically stable softmax over each contiguous row of length `cols`.
template <class T>
void softmax_rows_serial(std::size_t rows, std::size_t cols, const T* x, T* y);

template <class T>
void softmax_rows_parallel(std::size_t rows, std::size_t cols, const T* x, T* y);

template <class T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y);

// Below this many multiply-adds the serial path wins.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

int max_threads();

}  // namespace mmf::kernels

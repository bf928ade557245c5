#pragma once

#include <cstddef>

// Row-major dense kernels shared by the autodiff ops and the compact
// inference path. All of them accumulate into C.
namespace taprune::ad::kernels {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n);

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n);

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n);

// "openblas" or "builtin".
const char* backend();

}  // namespace taprune::ad::kernels

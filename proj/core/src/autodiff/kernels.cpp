#include "autodiff/kernels.hpp"

#ifdef TAPRUNE_WITH_OPENBLAS
#include <mutex>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);
#else
#include <vector>
#endif

namespace taprune::ad::kernels {

#ifdef TAPRUNE_WITH_OPENBLAS

namespace {

// Callers parallelize across runs, so every gemm stays on its own thread.
void single_threaded()
{
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

int i(std::size_t v) { return static_cast<int>(v); }

}  // namespace

void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    if (m == 0 || n == 0 || k == 0) return;
    single_threaded();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, i(m), i(n), i(k), 1.0, A, i(k), B, i(n), 1.0, C,
                i(n));
}

void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    if (m == 0 || n == 0 || k == 0) return;
    single_threaded();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, i(m), i(k), i(n), 1.0, G, i(n), B, i(n), 1.0, C,
                i(k));
}

void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    if (m == 0 || n == 0 || k == 0) return;
    single_threaded();
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, i(k), i(n), i(m), 1.0, A, i(k), G, i(n), 1.0, C,
                i(n));
}

const char* backend() { return "openblas"; }

#else

void gemm_nn(const double* __restrict A, const double* __restrict B, double* __restrict C, std::size_t m,
             std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict c = C + i * n;
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = arow[p];
            const double* __restrict b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

// Transposing B first turns the inner dot products into axpys.
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
    }
    gemm_nn(G, bt.data(), C, m, n, k);
}

void gemm_tn(const double* __restrict A, const double* __restrict G, double* __restrict C, std::size_t m,
             std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* __restrict g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = arow[p];
            double* __restrict c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * g[j];
        }
    }
}

const char* backend() { return "builtin"; }

#endif

}  // namespace taprune::ad::kernels

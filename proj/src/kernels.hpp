#pragma once

#include <cstddef>

namespace epmvg::numcore::detail {

// c (+)= a[m x k] * b[k x n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate);

// c (+)= a[m x k] * b[n x k]^T
void mm_nt(const double* a, const double* b, double* c, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate);

// c (+)= a[k x m]^T * b[k x n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate);

}  // namespace epmvg::numcore::detail

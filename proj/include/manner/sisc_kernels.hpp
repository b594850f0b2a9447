#pragma once

#include <span>
#include <vector>

#include "manner/matrix.hpp"

// Convolution kernels behind the solver. `serial` is the plain reference
// kept for tests and benchmarks; `omp` is what the solver calls. Each output
// element of an `omp` kernel is produced by exactly one thread with a fixed
// summation order, so results do not depend on the thread count.
//
// Shapes: patterns D x (M x C), acts D x N, signal/residual N x C. Outputs
// must be presized; grad_psi takes M from the shape of grad[d].

namespace manner::sisc::kernels {

namespace serial {

void reconstruct(std::span<const Matrix> patterns, const Matrix& acts, Matrix& out);
/// grad[d](m, c) = -sum_k acts(d, k) * residual(k + m, c)
void grad_psi(const Matrix& residual, const Matrix& acts, std::vector<Matrix>& grad);
/// grad(d, k) = -sum_m sum_c residual(k + m, c) * patterns[d](m, c)
void grad_alpha(const Matrix& residual, std::span<const Matrix> patterns, Matrix& grad);

}  // namespace serial

namespace omp {

void reconstruct(std::span<const Matrix> patterns, const Matrix& acts, Matrix& out);
void grad_psi(const Matrix& residual, const Matrix& acts, std::vector<Matrix>& grad);
void grad_alpha(const Matrix& residual, std::span<const Matrix> patterns, Matrix& grad);

}  // namespace omp

}  // namespace manner::sisc::kernels

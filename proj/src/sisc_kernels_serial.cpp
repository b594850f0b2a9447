#include "manner/sisc_kernels.hpp"

#include <algorithm>

namespace manner::sisc::kernels::serial {

void reconstruct(std::span<const Matrix> patterns, const Matrix& acts, Matrix& out) {
  const std::size_t n_len = out.rows();
  const std::size_t chans = out.cols();
  std::fill(out.values().begin(), out.values().end(), 0.0);
  for (std::size_t d = 0; d < patterns.size(); ++d) {
    const Matrix& psi = patterns[d];
    for (std::size_t k = 0; k < n_len; ++k) {
      const double a = acts(d, k);
      for (std::size_t m = 0; m < psi.rows() && k + m < n_len; ++m)
        for (std::size_t c = 0; c < chans; ++c) out(k + m, c) += a * psi(m, c);
    }
  }
}

void grad_psi(const Matrix& residual, const Matrix& acts, std::vector<Matrix>& grad) {
  const std::size_t n_len = residual.rows();
  for (std::size_t d = 0; d < grad.size(); ++d) {
    Matrix& g = grad[d];
    for (std::size_t m = 0; m < g.rows(); ++m)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k + m < n_len; ++k) s += acts(d, k) * residual(k + m, c);
        g(m, c) = -s;
      }
  }
}

void grad_alpha(const Matrix& residual, std::span<const Matrix> patterns, Matrix& grad) {
  const std::size_t n_len = residual.rows();
  for (std::size_t d = 0; d < patterns.size(); ++d) {
    const Matrix& psi = patterns[d];
    for (std::size_t k = 0; k < n_len; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < psi.rows() && k + m < n_len; ++m)
        for (std::size_t c = 0; c < psi.cols(); ++c) s += residual(k + m, c) * psi(m, c);
      grad(d, k) = -s;
    }
  }
}

}  // namespace manner::sisc::kernels::serial

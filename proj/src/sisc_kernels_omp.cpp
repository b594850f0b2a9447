#include "manner/sisc_kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace manner::sisc::kernels::omp {

void reconstruct(std::span<const Matrix> patterns, const Matrix& acts, Matrix& out) {
  const std::ptrdiff_t n_len = static_cast<std::ptrdiff_t>(out.rows());
  const std::size_t chans = out.cols();
  const std::size_t num = patterns.size();

  // Gather form: each output row is owned by one thread.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t n = 0; n < n_len; ++n) {
    double* dst = out.data() + static_cast<std::size_t>(n) * chans;
    std::fill(dst, dst + chans, 0.0);
    for (std::size_t d = 0; d < num; ++d) {
      const Matrix& psi = patterns[d];
      const double* train = acts.data() + d * acts.cols();
      const std::size_t m_end = std::min<std::size_t>(psi.rows(), static_cast<std::size_t>(n) + 1);
      for (std::size_t m = 0; m < m_end; ++m) {
        const double a = train[static_cast<std::size_t>(n) - m];
        if (a == 0.0) continue;
        const double* p = psi.data() + m * chans;
        for (std::size_t c = 0; c < chans; ++c) dst[c] += a * p[c];
      }
    }
  }
}

void grad_psi(const Matrix& residual, const Matrix& acts, std::vector<Matrix>& grad) {
  const std::size_t n_len = residual.rows();
  const std::size_t chans = residual.cols();
  const std::size_t num = grad.size();
  const std::size_t len = num ? grad.front().rows() : 0;
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(num * len);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t d = static_cast<std::size_t>(task) / len;
    const std::size_t m = static_cast<std::size_t>(task) % len;
    double* g = grad[d].data() + m * chans;
    std::fill(g, g + chans, 0.0);
    const double* train = acts.data() + d * acts.cols();
    for (std::size_t k = 0; k + m < n_len; ++k) {
      const double a = train[k];
      if (a == 0.0) continue;
      const double* r = residual.data() + (k + m) * chans;
      for (std::size_t c = 0; c < chans; ++c) g[c] += a * r[c];
    }
    for (std::size_t c = 0; c < chans; ++c) g[c] = -g[c];
  }
}

void grad_alpha(const Matrix& residual, std::span<const Matrix> patterns, Matrix& grad) {
  const std::size_t n_len = residual.rows();
  const std::size_t chans = residual.cols();
  const std::size_t num = patterns.size();
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(num * n_len);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t d = static_cast<std::size_t>(task) / n_len;
    const std::size_t k = static_cast<std::size_t>(task) % n_len;
    const Matrix& psi = patterns[d];
    // Rows k..k+M-1 of the residual and the whole pattern are both
    // contiguous, so this is one flat dot product.
    const std::size_t span = std::min(psi.rows(), n_len - k) * chans;
    const double* r = residual.data() + k * chans;
    const double* p = psi.data();
    double s = 0.0;
    for (std::size_t i = 0; i < span; ++i) s += r[i] * p[i];
    grad(d, k) = -s;
  }
}

}  // namespace manner::sisc::kernels::omp

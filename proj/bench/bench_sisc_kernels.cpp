// Serial reference kernels against the OpenMP ones on a solver-sized problem
// (N samples of a 60-channel skeleton, 5 patterns of 2 s at 30 Hz).

#include <benchmark/benchmark.h>

#include "manner/rng.hpp"
#include "manner/sisc_kernels.hpp"

using namespace manner;
using namespace manner::sisc;

namespace {

struct Problem {
  std::vector<Matrix> patterns;
  Matrix acts;
  Matrix residual;

  explicit Problem(std::size_t n) : acts(5, n), residual(n, 60) {
    Rng rng(1);
    for (int d = 0; d < 5; ++d) {
      Matrix p(60, 60);
      for (double& v : p.values()) v = rng.uniform(-0.5, 0.5);
      patterns.push_back(std::move(p));
    }
    for (double& v : acts.values()) v = rng.uniform() < 0.05 ? rng.uniform() : 0.0;
    for (double& v : residual.values()) v = rng.normal();
  }
};

template <void (*Kernel)(std::span<const Matrix>, const Matrix&, Matrix&)>
void bm_reconstruct(benchmark::State& state) {
  const Problem p(static_cast<std::size_t>(state.range(0)));
  Matrix out(p.residual.rows(), 60);
  for (auto _ : state) {
    Kernel(p.patterns, p.acts, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <void (*Kernel)(const Matrix&, const Matrix&, std::vector<Matrix>&)>
void bm_grad_psi(benchmark::State& state) {
  const Problem p(static_cast<std::size_t>(state.range(0)));
  std::vector<Matrix> grad(5, Matrix(60, 60));
  for (auto _ : state) {
    Kernel(p.residual, p.acts, grad);
    benchmark::DoNotOptimize(grad.front().data());
  }
}

template <void (*Kernel)(const Matrix&, std::span<const Matrix>, Matrix&)>
void bm_grad_alpha(benchmark::State& state) {
  const Problem p(static_cast<std::size_t>(state.range(0)));
  Matrix grad(5, p.residual.rows());
  for (auto _ : state) {
    Kernel(p.residual, p.patterns, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}

}  // namespace

BENCHMARK(bm_reconstruct<kernels::serial::reconstruct>)->Name("reconstruct/serial")->Arg(1800)->Arg(9000);
BENCHMARK(bm_reconstruct<kernels::omp::reconstruct>)->Name("reconstruct/omp")->Arg(1800)->Arg(9000)->UseRealTime();
BENCHMARK(bm_grad_psi<kernels::serial::grad_psi>)->Name("grad_psi/serial")->Arg(1800)->Arg(9000);
BENCHMARK(bm_grad_psi<kernels::omp::grad_psi>)->Name("grad_psi/omp")->Arg(1800)->Arg(9000)->UseRealTime();
BENCHMARK(bm_grad_alpha<kernels::serial::grad_alpha>)->Name("grad_alpha/serial")->Arg(1800)->Arg(9000);
BENCHMARK(bm_grad_alpha<kernels::omp::grad_alpha>)->Name("grad_alpha/omp")->Arg(1800)->Arg(9000)->UseRealTime();

BENCHMARK_MAIN();

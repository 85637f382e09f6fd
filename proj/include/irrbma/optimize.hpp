#ifndef IRRBMA_OPTIMIZE_HPP
#define IRRBMA_OPTIMIZE_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

namespace irrbma {

struct NelderMeadOptions {
  double size_tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  double stall_size = 1e-5; // simplex size below which a stalled objective counts as converged
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

struct GslVectorDeleter {
  void operator()(gsl_vector* v) const noexcept { gsl_vector_free(v); }
};
struct GslMinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const noexcept { gsl_multimin_fminimizer_free(m); }
};

template <class F>
double gsl_trampoline(gsl_vector const* v, void* params) {
  auto& f = *static_cast<F*>(params);
  double const y = f(std::span<double const>(v->data, v->size));
  return std::isfinite(y) ? y : std::numeric_limits<double>::max();
}

} // namespace detail

/// Minimizes `f` with GSL's nmsimplex2 until the simplex size falls below
/// the tolerance. `f` receives a span over the current point; non-finite
/// values are treated as +max.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::span<double const> start, std::span<double const> step,
                             NelderMeadOptions const& opts = {}) {
  using Fn = std::remove_reference_t<F>;
  std::size_t const n = start.size();
  if (n == 0 || step.size() != n) throw std::invalid_argument("nelder_mead: bad dimensions");

  static thread_local bool handler_off = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)handler_off;

  std::unique_ptr<gsl_vector, detail::GslVectorDeleter> x(gsl_vector_alloc(n));
  std::unique_ptr<gsl_vector, detail::GslVectorDeleter> ss(gsl_vector_alloc(n));
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x.get(), i, start[i]);
    gsl_vector_set(ss.get(), i, step[i]);
  }
  gsl_multimin_function fn;
  fn.n = n;
  fn.f = &detail::gsl_trampoline<Fn>;
  fn.params = const_cast<void*>(static_cast<void const*>(&f));

  std::unique_ptr<gsl_multimin_fminimizer, detail::GslMinimizerDeleter> s(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n));
  gsl_multimin_fminimizer_set(s.get(), &fn, x.get(), ss.get());

  NelderMeadResult res;
  double last = std::numeric_limits<double>::infinity();
  std::size_t stalled = 0;
  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    int const status = gsl_multimin_fminimizer_iterate(s.get());
    double const size = gsl_multimin_fminimizer_size(s.get());
    if (gsl_multimin_test_size(size, opts.size_tolerance) == GSL_SUCCESS) {
      res.converged = true;
      break;
    }
    // A small simplex whose best value no longer moves has hit the
    // floating-point resolution of the objective.
    double const f = gsl_multimin_fminimizer_minimum(s.get());
    stalled = last - f > 1e-13 * (1.0 + std::abs(f)) ? 0 : stalled + 1;
    last = std::min(last, f);
    if (size < opts.stall_size && stalled >= 50 * n) {
      res.converged = true;
      break;
    }
    if (status != GSL_SUCCESS) {
      res.converged = size < opts.stall_size;
      break;
    }
  }
  gsl_vector const* best = gsl_multimin_fminimizer_x(s.get());
  res.x.assign(best->data, best->data + n);
  res.value = gsl_multimin_fminimizer_minimum(s.get());
  return res;
}

} // namespace irrbma

#endif // IRRBMA_OPTIMIZE_HPP

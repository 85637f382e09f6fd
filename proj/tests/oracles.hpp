// Independent reference computations shared by the unit and acceptance
// suites: dense multivariate-normal likelihoods and adaptive quadrature.
#ifndef IRRBMA_TESTS_ORACLES_HPP
#define IRRBMA_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <gsl/gsl_integration.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <span>

#include "irrbma/irrbma.hpp"

namespace oracle {

inline double mvn_logpdf(Eigen::VectorXd const& y, Eigen::VectorXd const& mean, Eigen::MatrixXd const& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  Eigen::VectorXd z = llt.matrixL().solve(y - mean);
  double const logdet = 2 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(y.size()) * std::log(2 * std::numbers::pi) + logdet + z.squaredNorm());
}

/// Full covariance of all ratings: block compound symmetry per ratee.
inline Eigen::MatrixXd dense_covariance(irrbma::RatingsTable const& t, irrbma::ParameterVector const& p) {
  auto const n = static_cast<Eigen::Index>(t.n_ratings());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      auto const i = t.ratee_ids[static_cast<std::size_t>(a)];
      if (i != t.ratee_ids[static_cast<std::size_t>(b)]) continue;
      auto const& prof = t.profiles[i];
      double const sg = irrbma::linked_sd(p.alpha_gamma, p.beta_gamma, prof);
      double const se = irrbma::linked_sd(p.alpha_epsilon, p.beta_epsilon, prof);
      cov(a, b) = sg * sg + (a == b ? se * se : 0.0);
    }
  return cov;
}

inline Eigen::VectorXd dense_mean(irrbma::RatingsTable const& t, irrbma::ParameterVector const& p) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(t.n_ratings()));
  for (std::size_t r = 0; r < t.n_ratings(); ++r)
    m(static_cast<Eigen::Index>(r)) = irrbma::linked_mean(p.alpha_mu, p.beta_mu, t.profiles[t.ratee_ids[r]]);
  return m;
}

inline Eigen::VectorXd ratings_vector(irrbma::RatingsTable const& t) {
  return Eigen::Map<Eigen::VectorXd const>(t.ratings.data(), static_cast<Eigen::Index>(t.ratings.size()));
}

inline double dense_loglik(irrbma::RatingsTable const& t, irrbma::ParameterVector const& p) {
  return mvn_logpdf(ratings_vector(t), dense_mean(t, p), dense_covariance(t, p));
}

/// Random small unbalanced dataset with `k` covariates (both levels present).
inline irrbma::RatingsTable random_table(std::size_t n_ratees, std::size_t max_j, std::size_t k, irrbma::Stream& rng) {
  irrbma::RatingsTable t;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < k; ++c) names.push_back("c" + std::to_string(c));
  t.schema = irrbma::CovariateSchema(names);
  for (std::size_t c = 0; c < k; ++c) t.levels.push_back({"a", "b"});
  for (std::size_t i = 0; i < n_ratees; ++i) {
    std::vector<double> v(k);
    for (std::size_t c = 0; c < k; ++c) v[c] = ((i >> c) & 1U) ? 0.5 : -0.5; // first 2^k ratees cover all profiles
    if (i >= (std::size_t{1} << k))
      for (auto& x : v) x = rng.uniform() < 0.5 ? -0.5 : 0.5;
    t.profiles.emplace_back(v);
    t.ratee_labels.push_back(std::to_string(i));
    std::size_t const j = 1 + rng.index(max_j);
    for (std::size_t r = 0; r < j; ++r) {
      t.ratee_ids.push_back(i);
      t.ratings.push_back(rng.normal(0, 1.5));
    }
  }
  return t;
}

inline irrbma::ParameterVector random_parameters(irrbma::ModelSpec const& spec, irrbma::Stream& rng) {
  auto p = irrbma::ParameterVector::zeros(spec.arity);
  p.alpha_mu = rng.normal();
  p.alpha_gamma = std::exp(rng.normal(-0.3, 0.6));
  p.alpha_epsilon = std::exp(rng.normal(-0.3, 0.6));
  for (std::size_t c = 0; c < spec.arity; ++c) {
    if (spec.frees(irrbma::Component::mean, c)) p.beta_mu[c] = rng.normal(0, 0.7);
    if (spec.frees(irrbma::Component::structural, c)) p.beta_gamma[c] = rng.normal(0, 0.7);
    if (spec.frees(irrbma::Component::residual, c)) p.beta_epsilon[c] = rng.normal(0, 0.7);
  }
  return p;
}

/// Posterior of (ln a_gamma, ln a_eps) with the intercept fixed at zero and
/// no coefficients, including the log-transform Jacobian.
class TwoParameterPosterior {
public:
  TwoParameterPosterior(irrbma::RatingsTable const& t, irrbma::PriorConfig prior)
      : stats_(t), prior_(prior), spec_{t.schema.arity(), 0, 0, 0} {}

  [[nodiscard]] std::size_t dim() const noexcept { return 2; }

  [[nodiscard]] double log_density(std::span<double const> x) const {
    auto p = irrbma::ParameterVector::zeros(spec_.arity);
    p.alpha_gamma = std::exp(x[0]);
    p.alpha_epsilon = std::exp(x[1]);
    if (!(p.alpha_gamma > 0) || !(p.alpha_epsilon > 0) || !std::isfinite(p.alpha_gamma) || !std::isfinite(p.alpha_epsilon))
      return -std::numeric_limits<double>::infinity();
    double const ll = irrbma::detail::loglik_unchecked(stats_, p);
    double const lp = std::log(2.0) + irrbma::detail::normal_logpdf(p.alpha_gamma, 0, prior_.sd_alpha_gamma) +
                      std::log(2.0) + irrbma::detail::normal_logpdf(p.alpha_epsilon, 0, prior_.sd_alpha_epsilon);
    return ll + lp + x[0] + x[1];
  }

private:
  irrbma::SufficientStats stats_;
  irrbma::PriorConfig prior_;
  irrbma::ModelSpec spec_;
};

namespace detail {
struct Gsl1d {
  std::function<double(double)> f;
  static double call(double x, void* self) { return static_cast<Gsl1d*>(self)->f(x); }
};

inline double integrate(std::function<double(double)> f, double lo, double hi, gsl_integration_workspace* ws) {
  Gsl1d holder{std::move(f)};
  gsl_function g{&Gsl1d::call, &holder};
  double result = 0, err = 0;
  gsl_integration_qags(&g, lo, hi, 0.0, 1e-10, 1000, ws, &result, &err);
  return result;
}
} // namespace detail

/// log of the integral of exp(log_density) over a box, by nested adaptive
/// Gauss-Kronrod quadrature after shifting by `shift`.
template <class F>
double log_integral_2d(F const& log_density, double shift, double lo0, double hi0, double lo1, double hi1) {
  gsl_set_error_handler_off();
  gsl_integration_workspace* outer = gsl_integration_workspace_alloc(1000);
  gsl_integration_workspace* inner = gsl_integration_workspace_alloc(1000);
  double const total = detail::integrate(
      [&](double a) {
        return detail::integrate(
            [&](double b) {
              double const x[2] = {a, b};
              return std::exp(log_density(std::span<double const>(x, 2)) - shift);
            },
            lo1, hi1, inner);
      },
      lo0, hi0, outer);
  gsl_integration_workspace_free(inner);
  gsl_integration_workspace_free(outer);
  return shift + std::log(total);
}

/// Log marginal likelihood of a TwoParameterPosterior by quadrature around
/// its grid mode.
inline double quadrature_logml(TwoParameterPosterior const& post) {
  double best = -std::numeric_limits<double>::infinity(), ma = 0, mb = 0;
  for (double a = -8; a <= 3; a += 0.05)
    for (double b = -8; b <= 3; b += 0.05) {
      double const x[2] = {a, b};
      double const v = post.log_density(std::span<double const>(x, 2));
      if (v > best) best = v, ma = a, mb = b;
    }
  auto f = [&](std::span<double const> x) { return post.log_density(x); };
  return log_integral_2d(f, best, ma - 35, ma + 8, mb - 35, mb + 8);
}

} // namespace oracle

#endif

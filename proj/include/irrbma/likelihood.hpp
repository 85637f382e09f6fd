#ifndef IRRBMA_LIKELIHOOD_HPP
#define IRRBMA_LIKELIHOOD_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_cdf.h>

#include "irrbma/data.hpp"
#include "irrbma/model.hpp"
#include "irrbma/optimize.hpp"
#include "irrbma/rng.hpp"

namespace irrbma {

/// Per-ratee and per-cell summaries. Ratees sharing a profile and a rating
/// count contribute to the marginal likelihood only through (n, mean of
/// ratee means, spread of ratee means, pooled within-ratee sum of squares).
class SufficientStats {
public:
  struct Ratee {
    std::uint32_t code;
    std::size_t count;
    double mean;
    double ssw;
  };
  struct Cell {
    std::uint32_t code;
    std::size_t count; // ratings per ratee
    double ratees = 0;
    double mean = 0; // mean of ratee means
    double spread = 0; // sum of squared deviations of ratee means from `mean`
    double ssw = 0;
  };

  SufficientStats() = default;
  explicit SufficientStats(RatingsTable const& t) : arity_(t.schema.arity()), n_ratings_(t.n_ratings()) {
    std::size_t const n = t.n_ratees();
    std::vector<double> sum(n, 0.0);
    std::vector<std::size_t> cnt(n, 0);
    for (std::size_t r = 0; r < t.n_ratings(); ++r) {
      sum[t.ratee_ids[r]] += t.ratings[r];
      ++cnt[t.ratee_ids[r]];
    }
    ratees_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ratees_[i] = {t.profiles[i].code(), cnt[i], cnt[i] ? sum[i] / static_cast<double>(cnt[i]) : 0.0, 0.0};
    for (std::size_t r = 0; r < t.n_ratings(); ++r) {
      auto& q = ratees_[t.ratee_ids[r]];
      double const d = t.ratings[r] - q.mean;
      q.ssw += d * d;
    }
    std::map<std::pair<std::uint32_t, std::size_t>, Cell> cells;
    for (auto const& q : ratees_) {
      auto& c = cells[{q.code, q.count}];
      c.code = q.code;
      c.count = q.count;
      c.ratees += 1;
      c.mean += q.mean;
      c.ssw += q.ssw;
    }
    for (auto& [key, c] : cells) c.mean /= c.ratees;
    for (auto const& q : ratees_) {
      auto& c = cells[{q.code, q.count}];
      c.spread += (q.mean - c.mean) * (q.mean - c.mean);
    }
    for (auto& [key, c] : cells) cells_.push_back(c);
    for (auto const& c : cells_)
      if (std::find(codes_.begin(), codes_.end(), c.code) == codes_.end()) codes_.push_back(c.code);
    std::sort(codes_.begin(), codes_.end());
  }

  [[nodiscard]] std::size_t arity() const noexcept { return arity_; }
  [[nodiscard]] std::size_t n_ratings() const noexcept { return n_ratings_; }
  [[nodiscard]] std::size_t n_ratees() const noexcept { return ratees_.size(); }
  [[nodiscard]] std::vector<Ratee> const& ratees() const noexcept { return ratees_; }
  [[nodiscard]] std::vector<Cell> const& cells() const noexcept { return cells_; }
  /// Profile codes present in the data, ascending.
  [[nodiscard]] std::vector<std::uint32_t> const& codes() const noexcept { return codes_; }

private:
  std::size_t arity_ = 0;
  std::size_t n_ratings_ = 0;
  std::vector<Ratee> ratees_;
  std::vector<Cell> cells_;
  std::vector<std::uint32_t> codes_;
};

namespace detail {

inline constexpr double kLog2Pi = 1.83787706640934548356;

struct Moments {
  double mu;
  double var_gamma;
  double var_epsilon;
};

/// Mean and variances at the profile with the given code; false on
/// overflow or vanishing variance.
inline bool moments_at(ParameterVector const& p, std::uint32_t code, Moments& out) noexcept {
  double mu = p.alpha_mu, eg = 0.0, ee = 0.0;
  for (std::size_t k = 0; k < p.beta_mu.size(); ++k) {
    double const x = (code >> k) & 1U ? kHighCode : kLowCode;
    mu += p.beta_mu[k] * x;
    eg += p.beta_gamma[k] * x;
    ee += p.beta_epsilon[k] * x;
  }
  double const sg = p.alpha_gamma * std::exp(eg);
  double const se = p.alpha_epsilon * std::exp(ee);
  out = {mu, sg * sg, se * se};
  return std::isfinite(mu) && std::isfinite(out.var_gamma) && std::isfinite(out.var_epsilon) &&
         out.var_gamma > 0.0 && out.var_epsilon > 0.0;
}

inline double cell_loglik(SufficientStats::Cell const& c, Moments const& m) noexcept {
  double const j = static_cast<double>(c.count);
  double const tot = m.var_epsilon + j * m.var_gamma;
  double const dev = c.spread + c.ratees * (c.mean - m.mu) * (c.mean - m.mu);
  return -0.5 * (c.ratees * j * kLog2Pi + c.ratees * (j - 1.0) * std::log(m.var_epsilon) +
                 c.ratees * std::log(tot) + c.ssw / m.var_epsilon + j * dev / tot);
}

/// Marginal log-likelihood without validation; -inf when any variance is
/// out of range.
inline double loglik_unchecked(SufficientStats const& stats, ParameterVector const& p) noexcept {
  if (!(p.alpha_gamma > 0.0) || !(p.alpha_epsilon > 0.0)) return -std::numeric_limits<double>::infinity();
  Moments table[1U << 4];
  std::vector<Moments> heap;
  Moments* mom = table;
  std::size_t const n_codes = std::size_t{1} << stats.arity();
  if (n_codes > std::size(table)) {
    heap.resize(n_codes);
    mom = heap.data();
  }
  for (auto code : stats.codes())
    if (!moments_at(p, code, mom[code])) return -std::numeric_limits<double>::infinity();
  double ll = 0.0;
  for (auto const& c : stats.cells()) ll += cell_loglik(c, mom[c.code]);
  return std::isfinite(ll) ? ll : -std::numeric_limits<double>::infinity();
}

inline void require_valid(ParameterVector const& params, ModelSpec const& spec) {
  if (!(params.alpha_gamma > 0.0) || !(params.alpha_epsilon > 0.0))
    throw std::domain_error("variance intercepts must be positive");
  if (!params.respects(spec)) throw std::invalid_argument("parameters do not respect the model spec");
}

} // namespace detail

/// Exact log-density of all ratings with the ratee effects integrated out.
inline double marginal_loglik(SufficientStats const& stats, ModelSpec const& spec, ParameterVector const& params) {
  detail::require_valid(params, spec);
  for (auto code : stats.codes()) {
    detail::Moments m{};
    if (!detail::moments_at(params, code, m)) throw std::domain_error("marginal_loglik: variance out of range");
  }
  return detail::loglik_unchecked(stats, params);
}

inline double marginal_loglik(RatingsTable const& data, ModelSpec const& spec, ParameterVector const& params) {
  return marginal_loglik(SufficientStats(data), spec, params);
}

struct ConditionalEffects {
  std::vector<double> gamma;
};

/// Exact draws of each ratee effect given parameters and ratings.
inline ConditionalEffects draw_conditional_effects(SufficientStats const& stats, ModelSpec const& spec,
                                                   ParameterVector const& params, Stream& rng) {
  detail::require_valid(params, spec);
  ConditionalEffects out;
  out.gamma.reserve(stats.n_ratees());
  for (auto const& q : stats.ratees()) {
    detail::Moments m{};
    if (!detail::moments_at(params, q.code, m)) throw std::domain_error("draw_conditional_effects: variance out of range");
    double const j = static_cast<double>(q.count);
    double const precision = 1.0 / m.var_gamma + j / m.var_epsilon;
    double const mean = j * (q.mean - m.mu) / m.var_epsilon / precision;
    out.gamma.push_back(mean + rng.normal() / std::sqrt(precision));
  }
  return out;
}

inline ConditionalEffects draw_conditional_effects(RatingsTable const& data, ModelSpec const& spec,
                                                   ParameterVector const& params, Stream& rng) {
  return draw_conditional_effects(SufficientStats(data), spec, params, rng);
}

/// Per-rating normal log-density given the ratee effects.
inline std::vector<double> pointwise_loglik(RatingsTable const& data, ModelSpec const& spec,
                                            ParameterVector const& params, ConditionalEffects const& effects) {
  detail::require_valid(params, spec);
  if (effects.gamma.size() != data.n_ratees()) throw std::invalid_argument("effects do not match ratee count");
  std::vector<detail::Moments> mom(data.n_ratees());
  for (std::size_t i = 0; i < data.n_ratees(); ++i)
    if (!detail::moments_at(params, data.profiles[i].code(), mom[i]))
      throw std::domain_error("pointwise_loglik: variance out of range");
  std::vector<double> out(data.n_ratings());
  for (std::size_t r = 0; r < data.n_ratings(); ++r) {
    auto const i = data.ratee_ids[r];
    double const z = data.ratings[r] - mom[i].mu - effects.gamma[i];
    out[r] = -0.5 * (detail::kLog2Pi + std::log(mom[i].var_epsilon) + z * z / mom[i].var_epsilon);
  }
  return out;
}

/// One-way ANOVA method-of-moments components (unbalanced form with n0).
struct AnovaMoments {
  double grand_mean = 0;
  double msb = 0;
  double msw = 0;
  double n0 = 0;
  double var_gamma = 0; // max(MSB - MSW, 0) / n0
  double var_epsilon = 0;
};

inline AnovaMoments anova_moments(SufficientStats const& s) {
  AnovaMoments a;
  double const n = static_cast<double>(s.n_ratings());
  double const groups = static_cast<double>(s.n_ratees());
  double sum = 0, ssw = 0, sum_j2 = 0;
  for (auto const& q : s.ratees()) {
    sum += q.mean * static_cast<double>(q.count);
    ssw += q.ssw;
    sum_j2 += static_cast<double>(q.count * q.count);
  }
  a.grand_mean = n > 0 ? sum / n : 0.0;
  double ssb = 0;
  for (auto const& q : s.ratees()) ssb += static_cast<double>(q.count) * (q.mean - a.grand_mean) * (q.mean - a.grand_mean);
  a.msb = groups > 1 ? ssb / (groups - 1) : 0.0;
  a.msw = n > groups ? ssw / (n - groups) : 0.0;
  a.n0 = groups > 1 ? (n - sum_j2 / n) / (groups - 1) : 1.0;
  a.var_gamma = std::max(a.msb - a.msw, 0.0) / a.n0;
  a.var_epsilon = a.msw;
  return a;
}

enum class FitMethod { ml, reml };

struct FrequentistFit {
  ModelSpec spec;
  FitMethod method = FitMethod::ml;
  ParameterVector estimates;
  double log_likelihood = 0;                                              // ML log-likelihood at the estimates
  double restricted_log_likelihood = std::numeric_limits<double>::quiet_NaN(); // REML fits only
  std::size_t k = 0;
  std::size_t n = 0;
  double aic = 0;
  double bic = 0;
  bool converged = false;
  bool boundary = false;
};

namespace detail {

inline constexpr double kSigmaFloor = 1e-6;

/// Free variance coordinates: [ln a_gamma, b_gamma free.., ln a_eps, b_eps free..].
struct VarianceLayout {
  ModelSpec spec;
  [[nodiscard]] std::size_t dim() const noexcept {
    return 2 + static_cast<std::size_t>(std::popcount(spec.structural_mask) + std::popcount(spec.residual_mask));
  }
  void apply(std::span<double const> theta, ParameterVector& p, bool& clamped) const {
    std::size_t i = 0;
    double const floor = std::log(kSigmaFloor);
    auto lg = theta[i++];
    clamped = false;
    if (lg < floor) lg = floor, clamped = true;
    p.alpha_gamma = std::exp(lg);
    for (std::size_t k = 0; k < spec.arity; ++k) p.beta_gamma[k] = spec.frees(Component::structural, k) ? theta[i++] : 0.0;
    auto le = theta[i++];
    if (le < floor) le = floor, clamped = true;
    p.alpha_epsilon = std::exp(le);
    for (std::size_t k = 0; k < spec.arity; ++k) p.beta_epsilon[k] = spec.frees(Component::residual, k) ? theta[i++] : 0.0;
  }
};

struct GlsResult {
  bool ok = false;
  double log_det_information = 0; // ln det(X' V^-1 X)
  std::size_t p = 0;
};

/// Sets the mean parameters to their GLS values under the variances in `p`.
inline GlsResult profile_mean(SufficientStats const& s, ModelSpec const& spec, ParameterVector& p) {
  std::vector<std::size_t> free;
  for (std::size_t k = 0; k < spec.arity; ++k)
    if (spec.frees(Component::mean, k)) free.push_back(k);
  std::size_t const dim = 1 + free.size();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  GlsResult res;
  res.p = dim;
  std::fill(p.beta_mu.begin(), p.beta_mu.end(), 0.0);
  p.alpha_mu = 0.0;
  for (auto const& c : s.cells()) {
    Moments m{};
    if (!moments_at(p, c.code, m)) return res;
    double const j = static_cast<double>(c.count);
    double const w = c.ratees * j / (m.var_epsilon + j * m.var_gamma);
    x(0) = 1.0;
    for (std::size_t f = 0; f < free.size(); ++f)
      x(static_cast<Eigen::Index>(f + 1)) = (c.code >> free[f]) & 1U ? kHighCode : kLowCode;
    info.noalias() += w * x * x.transpose();
    rhs.noalias() += w * c.mean * x;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) return res;
  Eigen::VectorXd beta = ldlt.solve(rhs);
  p.alpha_mu = beta(0);
  for (std::size_t f = 0; f < free.size(); ++f) p.beta_mu[free[f]] = beta(static_cast<Eigen::Index>(f + 1));
  res.log_det_information = ldlt.vectorD().array().log().sum();
  res.ok = true;
  return res;
}

inline FrequentistFit fit_frequentist(SufficientStats const& s, ModelSpec const& spec, FitMethod method) {
  if (s.n_ratees() < 2) throw std::invalid_argument("frequentist fit requires at least two ratees");
  if (spec.arity != s.arity()) throw std::invalid_argument("spec arity does not match data");
  VarianceLayout const layout{spec};
  std::size_t const dim = layout.dim();

  auto objective = [&](std::span<double const> theta) {
    ParameterVector p = ParameterVector::zeros(spec.arity);
    bool clamped = false;
    layout.apply(theta, p, clamped);
    auto gls = profile_mean(s, spec, p);
    if (!gls.ok) return std::numeric_limits<double>::infinity();
    double ll = loglik_unchecked(s, p);
    if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();
    if (method == FitMethod::reml) ll += 0.5 * static_cast<double>(gls.p) * kLog2Pi - 0.5 * gls.log_det_information;
    return -ll;
  };

  auto const a = anova_moments(s);
  double const lg0 = 0.5 * std::log(std::max(a.var_gamma, 1e-4));
  double const le0 = 0.5 * std::log(std::max(a.var_epsilon, 1e-4));
  std::vector<double> start(dim, 0.0);
  {
    std::size_t i = 0;
    start[i] = lg0;
    i += 1 + static_cast<std::size_t>(std::popcount(spec.structural_mask));
    start[i] = le0;
  }
  std::vector<double> step(dim, 0.2);

  Stream jitter(0x1CEB00DAULL, model_index(spec));
  NelderMeadOptions opts;
  opts.size_tolerance = 1e-8;
  opts.max_iterations = 2000 * dim;
  NelderMeadResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 3; ++attempt) {
    std::vector<double> x0 = start;
    if (attempt > 0)
      for (auto& v : x0) v += jitter.uniform(-0.1, 0.1);
    auto res = nelder_mead(objective, x0, step, opts);
    // one restart from the optimum guards against premature collapse
    std::vector<double> small(dim, 0.05);
    auto again = nelder_mead(objective, res.x, small, opts);
    if (again.value <= res.value) res = std::move(again);
    if (res.value < best.value) best = std::move(res);
  }

  FrequentistFit fit;
  fit.spec = spec;
  fit.method = method;
  fit.estimates = ParameterVector::zeros(spec.arity);
  bool clamped = false;
  layout.apply(best.x, fit.estimates, clamped);
  profile_mean(s, spec, fit.estimates);
  fit.log_likelihood = loglik_unchecked(s, fit.estimates);
  if (method == FitMethod::reml) fit.restricted_log_likelihood = -best.value;
  fit.k = spec.parameter_count();
  fit.n = s.n_ratings();
  fit.aic = 2.0 * static_cast<double>(fit.k) - 2.0 * fit.log_likelihood;
  fit.bic = static_cast<double>(fit.k) * std::log(static_cast<double>(fit.n)) - 2.0 * fit.log_likelihood;
  fit.converged = best.converged && std::isfinite(best.value);
  double const floor = std::log(kSigmaFloor);
  fit.boundary = clamped || std::log(fit.estimates.alpha_gamma) < floor + 1e-3 ||
                 std::log(fit.estimates.alpha_epsilon) < floor + 1e-3;
  return fit;
}

} // namespace detail

inline FrequentistFit ml_fit(SufficientStats const& s, ModelSpec const& spec) {
  return detail::fit_frequentist(s, spec, FitMethod::ml);
}
inline FrequentistFit ml_fit(RatingsTable const& data, ModelSpec const& spec) {
  data.validate();
  return ml_fit(SufficientStats(data), spec);
}

/// Restricted likelihood: marginal log-likelihood at the GLS mean plus
/// (p/2) ln 2pi - (1/2) ln det(X' V^-1 X).
inline FrequentistFit reml_fit(SufficientStats const& s, ModelSpec const& spec) {
  return detail::fit_frequentist(s, spec, FitMethod::reml);
}
inline FrequentistFit reml_fit(RatingsTable const& data, ModelSpec const& spec) {
  data.validate();
  return reml_fit(SufficientStats(data), spec);
}

/// Upper-tail chi-square(df) probability of a likelihood-ratio statistic.
inline double lrt_pvalue(double loglik_big, double loglik_small, double df = 1.0) {
  double const stat = std::max(0.0, 2.0 * (loglik_big - loglik_small));
  return gsl_cdf_chisq_Q(stat, df);
}

} // namespace irrbma

#endif // IRRBMA_LIKELIHOOD_HPP

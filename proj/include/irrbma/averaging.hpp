#ifndef IRRBMA_AVERAGING_HPP
#define IRRBMA_AVERAGING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_cdf.h>

#include "irrbma/data.hpp"
#include "irrbma/evidence.hpp"
#include "irrbma/likelihood.hpp"
#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"
#include "irrbma/sampler.hpp"

namespace irrbma {

enum class WeightMethod { bma, aic, bic, waic, pseudo_bma, stacking };

inline char const* to_string(WeightMethod m) {
  switch (m) {
  case WeightMethod::bma: return "bma";
  case WeightMethod::aic: return "aic";
  case WeightMethod::bic: return "bic";
  case WeightMethod::waic: return "waic";
  case WeightMethod::pseudo_bma: return "pseudo_bma";
  case WeightMethod::stacking: return "stacking";
  }
  return "?";
}

struct WeightVector {
  WeightMethod method = WeightMethod::bma;
  std::vector<double> weights;
  bool flagged = false; // optimizer stopped at its iteration cap
  std::string note;

  [[nodiscard]] std::size_t size() const noexcept { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }

  void validate() const {
    if (weights.empty()) throw std::invalid_argument("empty weight vector");
    double s = 0;
    for (double w : weights) {
      if (!(w >= 0)) throw std::invalid_argument("weights must be nonnegative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-10) throw std::invalid_argument("weights must sum to one");
  }
};

namespace detail {

/// Normalizes exp(logits) after a max shift.
inline std::vector<double> softmax(std::span<double const> logits) {
  double const m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw std::invalid_argument("weights: no finite criterion value");
  std::vector<double> w(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp(logits[i] - m));
  for (auto& v : w) v /= s;
  return w;
}

} // namespace detail

/// Akaike-type weights exp(-delta/2) for AIC or BIC values.
inline WeightVector ic_weights(std::span<double const> values, WeightMethod method = WeightMethod::aic) {
  if (values.empty()) throw std::invalid_argument("ic_weights: empty input");
  std::vector<double> logits(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("ic_weights: non-finite criterion");
    logits[i] = -0.5 * values[i];
  }
  return {method, detail::softmax(logits), false, {}};
}

inline WeightVector pseudo_bma_weights(std::span<double const> elpd, WeightMethod method = WeightMethod::pseudo_bma) {
  if (elpd.empty()) throw std::invalid_argument("pseudo_bma_weights: empty input");
  for (double v : elpd)
    if (!std::isfinite(v)) throw std::invalid_argument("pseudo_bma_weights: non-finite elpd");
  return {method, detail::softmax(elpd), false, {}};
}

/// Posterior model probabilities as a weight vector.
inline WeightVector bma_weights(std::vector<ModelEvidence> const& ev) {
  WeightVector w{WeightMethod::bma, {}, false, {}};
  for (auto const& e : ev) w.weights.push_back(e.posterior_prob);
  return w;
}

/// Pointwise log-likelihood matrix: rows are draws, columns are data points.
using PointwiseMatrix = Eigen::MatrixXd;

inline std::vector<double> waic_pointwise(PointwiseMatrix const& ll) {
  if (ll.rows() < 2) throw std::invalid_argument("waic: at least two draws required");
  std::vector<double> out(static_cast<std::size_t>(ll.cols()));
  double const s = static_cast<double>(ll.rows());
  for (Eigen::Index j = 0; j < ll.cols(); ++j) {
    auto col = ll.col(j);
    double const m = col.maxCoeff();
    double const lppd = m + std::log((col.array() - m).exp().sum() / s);
    double const mean = col.mean();
    double const var = (col.array() - mean).square().sum() / (s - 1);
    out[static_cast<std::size_t>(j)] = lppd - var;
  }
  return out;
}

/// WAIC on the expected log predictive density scale.
inline double waic(PointwiseMatrix const& ll) {
  auto const p = waic_pointwise(ll);
  return std::accumulate(p.begin(), p.end(), 0.0);
}

struct LooResult {
  double elpd = 0;
  std::vector<double> pointwise;
  std::vector<bool> flagged;
  std::size_t flag_count = 0;
};

/// Importance-sampling leave-one-out with weights truncated at
/// S^(3/4) times their mean. Points whose raw weights put more than half
/// the mass on one draw fall back to the WAIC term and are flagged.
inline LooResult loo(PointwiseMatrix const& ll) {
  if (ll.rows() < 100) throw std::invalid_argument("loo: at least 100 draws required");
  auto const fallback = waic_pointwise(ll);
  Eigen::Index const s = ll.rows();
  double const ds = static_cast<double>(s);
  double const cap = std::pow(ds, 0.75);
  LooResult r;
  r.pointwise.resize(static_cast<std::size_t>(ll.cols()));
  r.flagged.assign(static_cast<std::size_t>(ll.cols()), false);
  std::vector<double> lw(static_cast<std::size_t>(s));
  for (Eigen::Index j = 0; j < ll.cols(); ++j) {
    auto const jj = static_cast<std::size_t>(j);
    for (Eigen::Index i = 0; i < s; ++i) lw[static_cast<std::size_t>(i)] = -ll(i, j);
    double const lse = log_sum_exp(lw);
    double const max_lw = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(lse) || std::exp(max_lw - lse) > 0.5) {
      r.flagged[jj] = true;
      ++r.flag_count;
      r.pointwise[jj] = fallback[jj];
      continue;
    }
    double const log_trunc = std::log(cap) + lse - std::log(ds);
    for (auto& v : lw) v = std::min(v, log_trunc);
    double const norm = log_sum_exp(lw);
    std::vector<double> num(lw.size());
    for (Eigen::Index i = 0; i < s; ++i) num[static_cast<std::size_t>(i)] = lw[static_cast<std::size_t>(i)] + ll(i, j);
    r.pointwise[jj] = log_sum_exp(num) - norm;
  }
  r.elpd = std::accumulate(r.pointwise.begin(), r.pointwise.end(), 0.0);
  return r;
}

struct StackingOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100000;
};

namespace detail {

inline double stacking_objective(std::vector<std::vector<double>> const& lpd, std::vector<double> const& w,
                                 std::vector<double>& gradient) {
  std::size_t const m = lpd.size(), n = lpd[0].size();
  std::fill(gradient.begin(), gradient.end(), 0.0);
  double obj = 0;
  std::vector<double> p(m);
  for (std::size_t i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) top = std::max(top, lpd[k][i]);
    double mix = 0;
    for (std::size_t k = 0; k < m; ++k) mix += w[k] * (p[k] = std::exp(lpd[k][i] - top));
    obj += top + std::log(mix);
    for (std::size_t k = 0; k < m; ++k) gradient[k] += p[k] / mix;
  }
  for (auto& g : gradient) g /= static_cast<double>(n);
  return obj;
}

} // namespace detail

/// Stacking of predictive distributions: maximizes
/// sum_i log sum_m w_m p_m(point i) over the simplex by exponentiated
/// gradient ascent from uniform weights. `lpd[m][i]` is model m's log
/// leave-one-out predictive density at point i. Stops once the duality
/// gap bound on the objective falls below the tolerance.
inline WeightVector stacking_weights(std::vector<std::vector<double>> const& lpd, StackingOptions const& opts = {}) {
  if (lpd.size() < 2) throw std::invalid_argument("stacking_weights: at least two models required");
  std::size_t const m = lpd.size(), n = lpd[0].size();
  if (n == 0) throw std::invalid_argument("stacking_weights: no points");
  for (auto const& row : lpd) {
    if (row.size() != n) throw std::invalid_argument("stacking_weights: ragged input");
    for (double v : row)
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw std::invalid_argument("stacking_weights: invalid predictive density");
  }
  WeightVector out{WeightMethod::stacking, std::vector<double>(m, 1.0 / static_cast<double>(m)), false, {}};
  auto& w = out.weights;
  std::vector<double> g(m), g_try(m), w_try(m);
  double obj = detail::stacking_objective(lpd, w, g);
  double eta = 1.0;
  std::size_t it = 0;
  for (; it < opts.max_iterations; ++it) {
    double const gap = static_cast<double>(n) * (*std::max_element(g.begin(), g.end()) - 1.0);
    if (gap < opts.tolerance) break;
    bool improved = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      double gmax = *std::max_element(g.begin(), g.end());
      double s = 0;
      for (std::size_t k = 0; k < m; ++k) s += (w_try[k] = w[k] * std::exp(eta * (g[k] - gmax)));
      for (auto& v : w_try) v /= s;
      double const next = detail::stacking_objective(lpd, w_try, g_try);
      if (next >= obj) {
        improved = next > obj;
        w.swap(w_try);
        g.swap(g_try);
        obj = next;
        eta *= 1.5;
        break;
      }
      eta *= 0.5;
    }
    if (!improved) break; // no representable ascent left
  }
  if (it == opts.max_iterations) {
    out.flagged = true;
    out.note = "iteration cap reached";
  }
  return out;
}

/// The stacking objective at given weights.
inline double stacking_objective(std::vector<std::vector<double>> const& lpd, std::vector<double> const& w) {
  std::vector<double> g(lpd.size());
  return detail::stacking_objective(lpd, w, g);
}

/// Posterior draws pooled across models, with the source model per draw.
struct MixedDraws {
  std::size_t arity = 0;
  Eigen::MatrixXd natural; // ParameterVector::flatten layout
  std::vector<std::size_t> model;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(natural.rows()); }
  [[nodiscard]] ParameterVector parameters(std::size_t row) const {
    Eigen::RowVectorXd r = natural.row(static_cast<Eigen::Index>(row));
    return ParameterVector::unflatten(std::span<double const>(r.data(), static_cast<std::size_t>(r.size())), arity);
  }
};

/// Draws `total` parameter vectors: the model by weight, then a uniformly
/// chosen draw of that model.
inline MixedDraws bma_mix(std::vector<PosteriorDraws> const& fits, WeightVector const& weights, std::size_t total,
                          Stream& rng) {
  weights.validate();
  if (fits.size() != weights.size()) throw std::invalid_argument("bma_mix: weights and fits differ in length");
  if (fits.empty()) throw std::invalid_argument("bma_mix: no fits");
  std::size_t const arity = fits[0].spec.arity;
  for (auto const& f : fits)
    if (f.size() == 0 || f.spec.arity != arity) throw std::invalid_argument("bma_mix: every model needs draws");
  std::vector<double> cum(weights.size());
  std::partial_sum(weights.weights.begin(), weights.weights.end(), cum.begin());
  MixedDraws out;
  out.arity = arity;
  out.natural.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(3 + 3 * arity));
  out.model.resize(total);
  for (std::size_t t = 0; t < total; ++t) {
    double const u = rng.uniform() * cum.back();
    std::size_t m = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    m = std::min(m, cum.size() - 1);
    while (weights[m] == 0 && m > 0) --m; // guard against rounding onto a zero-weight model
    std::size_t const row = static_cast<std::size_t>(rng.index(fits[m].size()));
    out.natural.row(static_cast<Eigen::Index>(t)) = fits[m].natural.row(static_cast<Eigen::Index>(row));
    out.model[t] = m;
  }
  return out;
}

inline double frequentist_average(std::span<double const> estimates, std::span<double const> weights) {
  if (estimates.size() != weights.size() || estimates.empty())
    throw std::invalid_argument("frequentist_average: misaligned inputs");
  double s = 0;
  for (std::size_t i = 0; i < estimates.size(); ++i)
    if (weights[i] != 0) s += weights[i] * estimates[i];
  return s;
}

inline double frequentist_average(std::span<double const> estimates, WeightVector const& weights) {
  return frequentist_average(estimates, std::span<double const>(weights.weights));
}

/// Index of the best criterion value. Ties go to fewer free parameters,
/// then to the earlier model.
inline std::size_t select_best(std::span<double const> values, std::span<ModelSpec const> specs,
                               bool higher_is_better) {
  if (values.empty() || values.size() != specs.size()) throw std::invalid_argument("select_best: misaligned inputs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    double const a = higher_is_better ? values[i] : -values[i];
    double const b = higher_is_better ? values[best] : -values[best];
    if (std::isnan(a)) continue;
    if (a > b || std::isnan(b) || (a == b && specs[i].parameter_count() < specs[best].parameter_count())) best = i;
  }
  return best;
}

enum class StepDirection { forward, backward };

struct StepwiseOptions {
  double alpha = 0.05;
  bool boundary_mixture = false; // halve p-values of variance tests
};

struct StepwiseResult {
  ModelSpec spec;
  std::vector<std::string> warnings;
};

namespace detail {

class FitCache {
public:
  explicit FitCache(SufficientStats const& s) : stats_(s) {}

  FrequentistFit const& get(ModelSpec const& spec, FitMethod method) {
    auto key = std::pair{model_index(spec), method == FitMethod::reml};
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, fit_frequentist(stats_, spec, method)).first;
    return it->second;
  }

private:
  SufficientStats const& stats_;
  std::map<std::pair<std::size_t, bool>, FrequentistFit> cache_;
};

inline double fit_loglik(FrequentistFit const& f) {
  return f.method == FitMethod::reml ? f.restricted_log_likelihood : f.log_likelihood;
}

inline ModelSpec toggled(ModelSpec s, Component c, std::size_t k) {
  std::uint32_t const bit = 1U << k;
  switch (c) {
  case Component::mean: s.mean_mask ^= bit; break;
  case Component::structural: s.structural_mask ^= bit; break;
  case Component::residual: s.residual_mask ^= bit; break;
  }
  return s;
}

/// One greedy stage. Adding: take the smallest p-value at or below alpha.
/// Removing: drop the term with the largest p-value above alpha.
inline ModelSpec greedy_stage(FitCache& cache, ModelSpec current, std::vector<Component> const& components,
                              FitMethod method, bool adding, StepwiseOptions const& opts,
                              std::vector<std::string>& warnings) {
  for (;;) {
    std::optional<ModelSpec> choice;
    double choice_p = adding ? 2.0 : -1.0;
    auto const& here = cache.get(current, method);
    if (!here.converged) warnings.push_back("fit of model " + std::to_string(model_index(current)) + " did not converge");
    for (auto c : components)
      for (std::size_t k = 0; k < current.arity; ++k) {
        if (current.frees(c, k) == adding) continue;
        ModelSpec const cand = toggled(current, c, k);
        auto const& other = cache.get(cand, method);
        if (!other.converged) {
          warnings.push_back("skipped non-converged candidate model " + std::to_string(model_index(cand)));
          continue;
        }
        auto const& big = adding ? other : here;
        auto const& small = adding ? here : other;
        double p = lrt_pvalue(fit_loglik(big), fit_loglik(small));
        if (opts.boundary_mixture && c != Component::mean) p *= 0.5;
        if (adding ? (p <= opts.alpha && p < choice_p) : (p > opts.alpha && p > choice_p)) {
          choice = cand;
          choice_p = p;
        }
      }
    if (!choice) return current;
    current = *choice;
  }
}

} // namespace detail

/// Two-stage stepwise selection with likelihood-ratio tests against
/// chi-square(1): REML tests for mean differences, ML tests for variance
/// differences. Forward starts from the null model and tests the mean
/// first; backward starts from the full model and tests variances first.
inline StepwiseResult stepwise(SufficientStats const& stats, StepDirection direction, StepwiseOptions const& opts = {}) {
  if (!(opts.alpha >= 0 && opts.alpha <= 1)) throw std::invalid_argument("stepwise: alpha must lie in [0, 1]");
  detail::FitCache cache(stats);
  StepwiseResult r;
  std::size_t const k = stats.arity();
  std::vector<Component> const variance{Component::structural, Component::residual};
  std::vector<Component> const mean{Component::mean};
  if (direction == StepDirection::forward) {
    ModelSpec s{k, 0, 0, 0};
    s = detail::greedy_stage(cache, s, mean, FitMethod::reml, true, opts, r.warnings);
    s = detail::greedy_stage(cache, s, variance, FitMethod::ml, true, opts, r.warnings);
    r.spec = s;
  } else {
    ModelSpec s = ModelSpec::full(k);
    s = detail::greedy_stage(cache, s, variance, FitMethod::ml, false, opts, r.warnings);
    s = detail::greedy_stage(cache, s, mean, FitMethod::reml, false, opts, r.warnings);
    r.spec = s;
  }
  std::sort(r.warnings.begin(), r.warnings.end());
  r.warnings.erase(std::unique(r.warnings.begin(), r.warnings.end()), r.warnings.end());
  return r;
}

inline ModelSpec stepwise(RatingsTable const& data, StepDirection direction, double alpha) {
  data.validate();
  return stepwise(SufficientStats(data), direction, StepwiseOptions{alpha, false}).spec;
}

struct Interval {
  double point = 0;
  double lower = 0;
  double upper = 0;
};

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  double const h = (static_cast<double>(v.size()) - 1) * q;
  auto const lo = static_cast<std::size_t>(std::floor(h));
  auto const hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Median and central 95% interval.
inline Interval summarize(std::vector<double> const& v) {
  return {quantile(v, 0.5), quantile(v, 0.025), quantile(v, 0.975)};
}

/// IRR at each profile followed by, per covariate, the IRR difference
/// between the -0.5 and +0.5 levels averaged over the other covariates.
inline std::vector<double> irr_quantities(ParameterVector const& p) {
  std::size_t const k = p.beta_mu.size();
  auto const profiles = all_profiles(k);
  std::vector<double> out;
  out.reserve(profiles.size() + k);
  for (auto const& prof : profiles) out.push_back(irr_profile(p, prof));
  for (std::size_t c = 0; c < k; ++c) {
    double d = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i)
      d += profiles[i][c] < 0 ? out[i] : -out[i];
    out.push_back(d / static_cast<double>(profiles.size() / 2));
  }
  return out;
}

struct IrrSummary {
  std::vector<CovariateProfile> profiles;
  std::vector<Interval> irr;   // per profile
  std::vector<Interval> delta; // per covariate
};

namespace detail {

inline IrrSummary assemble_irr(std::size_t arity, std::vector<std::vector<double>> const& columns,
                               std::vector<double> const* points) {
  IrrSummary s;
  s.profiles = all_profiles(arity);
  for (std::size_t q = 0; q < columns.size(); ++q) {
    Interval iv = summarize(columns[q]);
    if (points) {
      iv.point = (*points)[q];
      iv.lower = std::min(iv.lower, iv.point);
      iv.upper = std::max(iv.upper, iv.point);
    }
    (q < s.profiles.size() ? s.irr : s.delta).push_back(iv);
  }
  return s;
}

template <class Draws>
IrrSummary irr_from_draws(Draws const& d, std::size_t arity) {
  std::size_t const nq = (std::size_t{1} << arity) + arity;
  std::vector<std::vector<double>> cols(nq, std::vector<double>(d.size()));
  for (std::size_t r = 0; r < d.size(); ++r) {
    auto const q = irr_quantities(d.parameters(r));
    for (std::size_t i = 0; i < nq; ++i) cols[i][r] = q[i];
  }
  return assemble_irr(arity, cols, nullptr);
}

} // namespace detail

/// Bayesian summaries: posterior median and central 95% interval.
inline IrrSummary irr_summaries(PosteriorDraws const& d) { return detail::irr_from_draws(d, d.spec.arity); }
inline IrrSummary irr_summaries(MixedDraws const& d) { return detail::irr_from_draws(d, d.arity); }

/// Frequentist summaries: `estimator` maps a dataset to the quantities of
/// irr_quantities. Points come from the observed data; intervals are
/// percentiles over `resamples` parametric-bootstrap datasets simulated
/// from `generating`. Failed refits are skipped.
inline IrrSummary irr_summaries_bootstrap(RatingsTable const& data, ParameterVector const& generating,
                                          std::function<std::vector<double>(RatingsTable const&)> const& estimator,
                                          std::size_t resamples = 500, std::uint64_t seed = 0) {
  std::size_t const arity = data.schema.arity();
  auto const points = estimator(data);
  std::vector<std::vector<double>> cols(points.size());
  Stream const root(seed, 0xB0075ULL);
  for (std::size_t b = 0; b < resamples; ++b) {
    try {
      auto const q = estimator(simulate_like(data, generating, root.substream(b)));
      for (std::size_t i = 0; i < q.size(); ++i) cols[i].push_back(q[i]);
    } catch (std::exception const&) {
    }
  }
  if (cols.empty() || cols[0].empty()) {
    for (std::size_t i = 0; i < points.size(); ++i) cols[i].push_back(points[i]);
  }
  return detail::assemble_irr(arity, cols, &points);
}

struct MarginalMeanRow {
  CovariateProfile profile;
  Interval mu, sigma_gamma, sigma_epsilon, irr;
};

inline std::vector<MarginalMeanRow> marginal_means(MixedDraws const& d) {
  if (d.size() == 0) throw std::invalid_argument("marginal_means: no draws");
  std::vector<MarginalMeanRow> rows;
  for (auto const& prof : all_profiles(d.arity)) {
    std::vector<double> mu(d.size()), sg(d.size()), se(d.size()), ir(d.size());
    for (std::size_t r = 0; r < d.size(); ++r) {
      auto const p = d.parameters(r);
      mu[r] = linked_mean(p.alpha_mu, p.beta_mu, prof);
      sg[r] = linked_sd(p.alpha_gamma, p.beta_gamma, prof);
      se[r] = linked_sd(p.alpha_epsilon, p.beta_epsilon, prof);
      ir[r] = irr(sg[r], se[r]);
    }
    rows.push_back({prof, summarize(mu), summarize(sg), summarize(se), summarize(ir)});
  }
  return rows;
}

/// Pointwise log-likelihood of every rating, one row per retained draw,
/// with ratee effects drawn from their conditional distribution. With
/// `max_draws` > 0 the draws are thinned evenly.
inline PointwiseMatrix pointwise_matrix(RatingsTable const& data, PosteriorDraws const& draws, Stream& rng,
                                        std::size_t max_draws = 0) {
  SufficientStats const stats(data);
  std::size_t const total = draws.size();
  std::size_t const rows = max_draws > 0 ? std::min(max_draws, total) : total;
  PointwiseMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data.n_ratings()));
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t const src = rows == total ? r : r * total / rows;
    auto const p = draws.parameters(src);
    auto const fx = draw_conditional_effects(stats, draws.spec, p, rng);
    auto const ll = pointwise_loglik(data, draws.spec, p, fx);
    for (std::size_t j = 0; j < ll.size(); ++j) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = ll[j];
  }
  return out;
}

struct PredictiveCriteria {
  double waic = 0;
  LooResult loo;
};

inline PredictiveCriteria predictive_criteria(PointwiseMatrix const& ll) { return {waic(ll), loo(ll)}; }

/// Everything averaged over the model space for one dataset.
struct AveragedResult {
  WeightVector weights;
  MixedDraws mixed;
  IrrSummary irr;
  std::vector<MarginalMeanRow> marginal;
  std::vector<InclusionResult> inclusion;
};

inline AveragedResult average_models(std::vector<PosteriorDraws> const& fits, std::vector<ModelEvidence> const& ev,
                                     std::size_t total, Stream& rng) {
  AveragedResult r;
  r.weights = bma_weights(ev);
  r.mixed = bma_mix(fits, r.weights, total, rng);
  r.irr = irr_summaries(r.mixed);
  r.marginal = marginal_means(r.mixed);
  if (!ev.empty() && ev[0].spec.arity > 0)
    for (auto const& t : all_inclusion_targets(ev[0].spec.arity)) {
      try {
        r.inclusion.push_back(inclusion_bf(ev, t));
      } catch (PartitionError const&) {
      }
    }
  return r;
}

} // namespace irrbma

#endif // IRRBMA_AVERAGING_HPP

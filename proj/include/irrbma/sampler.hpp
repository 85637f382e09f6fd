#ifndef IRRBMA_SAMPLER_HPP
#define IRRBMA_SAMPLER_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_cdf.h>

#include "irrbma/likelihood.hpp"
#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"

namespace irrbma {

/// An unnormalized log density on R^dim.
template <class T>
concept LogDensity = requires(T const& t, std::span<double const> x) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.log_density(x) } -> std::convertible_to<double>;
};

struct SamplerConfig {
  std::size_t chains = 4;
  std::size_t warmup = 2000;
  std::size_t draws_per_chain = 2000;
  std::uint64_t seed = 1;
  double target_acceptance = 0.30;
  double max_rhat = 1.01;
  std::size_t adapt_interval = 200;
  bool parallel = true; // one thread per chain

  void validate() const {
    if (chains < 2) throw std::invalid_argument("SamplerConfig: at least two chains required");
    if (warmup < 100 || draws_per_chain < 100)
      throw std::invalid_argument("SamplerConfig: warmup and draws must be at least 100");
    if (!(target_acceptance > 0 && target_acceptance < 1))
      throw std::invalid_argument("SamplerConfig: target acceptance must lie in (0, 1)");
  }
};

struct InitializationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DiagnosticError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParameterDiagnostics {
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = 0;
  bool degenerate = false;
};

/// Draws from a generic target; rows are chain-major.
struct ChainSet {
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  Eigen::MatrixXd draws; // rows = chains * draws_per_chain, cols = dim
  std::vector<double> log_density;
  std::vector<double> acceptance; // post-warmup, per chain
};

namespace detail {

inline double rank_normal_score(double rank, double total) {
  return gsl_cdf_ugaussian_Pinv((rank - 0.375) / (total + 0.25));
}

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(std::vector<double> const& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    double const avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Split-R-hat and Geyer-truncated ESS on split chains (rows = chains).
inline ParameterDiagnostics split_diagnostics(std::vector<std::vector<double>> const& chains) {
  ParameterDiagnostics d;
  std::size_t const m = chains.size();
  std::size_t const n = chains.front().size();
  double const nn = static_cast<double>(n);
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    double const mu = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / nn;
    double ss = 0;
    for (double v : chains[c]) ss += (v - mu) * (v - mu);
    means[c] = mu;
    vars[c] = ss / (nn - 1);
  }
  double const w = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(m);
  double const grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b = 0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= nn / static_cast<double>(m - 1);
  double const var_plus = (nn - 1) / nn * w + b / nn;
  double const total = static_cast<double>(m) * nn;
  if (!(w > 0) || !(var_plus > 0) || !std::isfinite(var_plus)) {
    d.degenerate = true;
    d.ess = 1.0;
    return d;
  }
  d.rhat = std::sqrt(var_plus / w);

  auto mean_autocov = [&](std::size_t lag) {
    double acc = 0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      acc += s / nn;
    }
    return acc / static_cast<double>(m);
  };
  auto rho = [&](std::size_t lag) { return 1.0 - (w - mean_autocov(lag)) / var_plus; };

  std::vector<double> rho_hat(n + 1, 0.0);
  rho_hat[0] = 1.0;
  double even = 1.0, odd = n > 1 ? rho(1) : 0.0;
  rho_hat[1] = odd;
  std::size_t t = 0;
  while (t + 5 < n && even + odd > 0) {
    t += 2;
    even = rho(t);
    odd = rho(t + 1);
    if (even + odd >= 0) {
      rho_hat[t] = even;
      rho_hat[t + 1] = odd;
    }
  }
  std::size_t const max_t = t;
  if (even > 0) rho_hat[max_t] = even;
  for (std::size_t k = 1; k + 3 <= max_t; k += 2) {
    if (rho_hat[k + 1] + rho_hat[k + 2] > rho_hat[k - 1] + rho_hat[k]) {
      rho_hat[k + 1] = (rho_hat[k - 1] + rho_hat[k]) / 2;
      rho_hat[k + 2] = rho_hat[k + 1];
    }
  }
  double tau = -1.0 + rho_hat[max_t];
  for (std::size_t k = 0; k < max_t; ++k) tau += 2.0 * rho_hat[k];
  tau = std::max(tau, 1.0 / std::log10(total));
  d.ess = total / tau;
  return d;
}

} // namespace detail

/// Rank-normalized split-R-hat and bulk ESS for one coordinate given as
/// chain-major draws.
inline ParameterDiagnostics diagnose_column(std::span<double const> column, std::size_t chains) {
  if (chains < 2) throw DiagnosticError("diagnostics require at least two chains");
  std::size_t const per_chain = column.size() / chains;
  std::size_t const half = per_chain / 2;
  if (half < 4) throw DiagnosticError("diagnostics require at least four draws per half-chain");
  std::vector<double> pooled(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(chains * per_chain));
  auto const ranks = detail::average_ranks(pooled);
  double const total = static_cast<double>(pooled.size());
  std::vector<std::vector<double>> split;
  for (std::size_t c = 0; c < chains; ++c) {
    std::size_t const base = c * per_chain;
    std::size_t const second = base + per_chain - half; // drops the middle draw of odd-length chains
    std::vector<double> a(half), b(half);
    for (std::size_t i = 0; i < half; ++i) {
      a[i] = detail::rank_normal_score(ranks[base + i], total);
      b[i] = detail::rank_normal_score(ranks[second + i], total);
    }
    split.push_back(std::move(a));
    split.push_back(std::move(b));
  }
  return detail::split_diagnostics(split);
}

inline std::vector<ParameterDiagnostics> diagnose(Eigen::MatrixXd const& draws, std::size_t chains) {
  std::vector<ParameterDiagnostics> out;
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    Eigen::VectorXd col = draws.col(j);
    out.push_back(diagnose_column(std::span<double const>(col.data(), static_cast<std::size_t>(col.size())), chains));
  }
  return out;
}

namespace detail {

struct ChainResult {
  std::vector<double> draws; // draws_per_chain * dim, row-major
  std::vector<double> log_density;
  double acceptance = 0;
};

template <LogDensity T>
ChainResult run_chain(T const& target, std::vector<double> theta, SamplerConfig const& cfg, Stream rng) {
  std::size_t const d = target.dim();
  auto const dd = static_cast<Eigen::Index>(d);
  double lp = target.log_density(theta);
  if (!std::isfinite(lp)) throw InitializationError("target density is not finite at the initial point");

  Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(dd, dd) * 0.1;
  double const base = 2.38 / std::sqrt(static_cast<double>(d));
  double log_lambda = 0.0;
  std::size_t since_refresh = 0;

  std::vector<double> warm(cfg.warmup * d);
  ChainResult out;
  out.draws.resize(cfg.draws_per_chain * d);
  out.log_density.resize(cfg.draws_per_chain);
  std::size_t accepted = 0;
  Eigen::VectorXd z(dd);
  std::vector<double> prop(d);

  for (std::size_t it = 0; it < cfg.warmup + cfg.draws_per_chain; ++it) {
    for (Eigen::Index k = 0; k < dd; ++k) z(k) = rng.normal();
    double const scale = std::exp(log_lambda) * base;
    for (Eigen::Index k = 0; k < dd; ++k) {
      double s = 0;
      for (Eigen::Index l = 0; l <= k; ++l) s += chol(k, l) * z(l);
      prop[static_cast<std::size_t>(k)] = theta[static_cast<std::size_t>(k)] + scale * s;
    }
    double const lpp = target.log_density(prop);
    double const log_ratio = std::isfinite(lpp) ? lpp - lp : -std::numeric_limits<double>::infinity();
    bool const accept = log_ratio >= 0 || std::log(rng.uniform()) < log_ratio;
    if (accept) {
      theta = prop;
      lp = lpp;
    }
    if (it < cfg.warmup) {
      double const a = log_ratio >= 0 ? 1.0 : std::exp(log_ratio);
      ++since_refresh;
      log_lambda += (a - cfg.target_acceptance) * std::pow(static_cast<double>(since_refresh), -0.6);
      std::copy(theta.begin(), theta.end(), warm.begin() + static_cast<std::ptrdiff_t>(it * d));
      if ((it + 1) % cfg.adapt_interval == 0 && it + 1 < cfg.warmup) {
        // empirical covariance of the second half of warmup so far
        std::size_t const lo = (it + 1) / 2, cnt = it + 1 - lo;
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
            warm.data() + lo * d, static_cast<Eigen::Index>(cnt), dd);
        Eigen::RowVectorXd mean = w.colwise().mean();
        Eigen::MatrixXd centered = w.rowwise() - mean;
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(cnt - 1);
        double const nc = static_cast<double>(cnt);
        cov = (nc / (nc + 5.0)) * cov + (1e-6 * 5.0 / (nc + 5.0)) * Eigen::MatrixXd::Identity(dd, dd);
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success) {
          chol = llt.matrixL();
          since_refresh = 0;
        }
      }
    } else {
      std::size_t const row = it - cfg.warmup;
      if (accept) ++accepted;
      std::copy(theta.begin(), theta.end(), out.draws.begin() + static_cast<std::ptrdiff_t>(row * d));
      out.log_density[row] = lp;
    }
  }
  out.acceptance = static_cast<double>(accepted) / static_cast<double>(cfg.draws_per_chain);
  return out;
}

} // namespace detail

/// Adaptive random-walk Metropolis. `init(chain, rng)` returns the starting
/// point of each chain; chain c uses substream c of the configured seed.
template <LogDensity T, class Init>
ChainSet sample(T const& target, Init&& init, SamplerConfig const& cfg) {
  cfg.validate();
  std::size_t const d = target.dim();
  Stream const root(cfg.seed);
  std::vector<detail::ChainResult> results(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);
  auto work = [&](std::size_t c) {
    try {
      Stream rng = root.substream(c);
      std::vector<double> start = init(c, rng);
      if (start.size() != d) throw InitializationError("initial point has wrong dimension");
      results[c] = detail::run_chain(target, std::move(start), cfg, rng);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (cfg.parallel && cfg.chains > 1 && std::thread::hardware_concurrency() > 1) {
    std::vector<std::jthread> pool;
    for (std::size_t c = 0; c < cfg.chains; ++c) pool.emplace_back(work, c);
  } else {
    for (std::size_t c = 0; c < cfg.chains; ++c) work(c);
  }
  for (auto const& e : errors)
    if (e) std::rethrow_exception(e);

  ChainSet set;
  set.chains = cfg.chains;
  set.draws_per_chain = cfg.draws_per_chain;
  set.draws.resize(static_cast<Eigen::Index>(cfg.chains * cfg.draws_per_chain), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    for (std::size_t i = 0; i < cfg.draws_per_chain; ++i)
      for (std::size_t k = 0; k < d; ++k)
        set.draws(static_cast<Eigen::Index>(c * cfg.draws_per_chain + i), static_cast<Eigen::Index>(k)) =
            results[c].draws[i * d + k];
    set.log_density.insert(set.log_density.end(), results[c].log_density.begin(), results[c].log_density.end());
    set.acceptance.push_back(results[c].acceptance);
  }
  return set;
}

/// Unnormalized posterior of one model on the unconstrained coordinates
/// [a_mu, b_mu free.., ln a_gamma, b_gamma free.., ln a_eps, b_eps free..],
/// including the log-transform Jacobian of both intercepts.
class ModelPosterior {
public:
  ModelPosterior(SufficientStats stats, ModelSpec spec, PriorConfig prior)
      : stats_(std::move(stats)), spec_(spec), prior_(prior) {
    prior_.validate();
    if (spec_.arity != stats_.arity()) throw std::invalid_argument("spec arity does not match data");
  }

  [[nodiscard]] std::size_t dim() const noexcept { return spec_.parameter_count(); }
  [[nodiscard]] ModelSpec const& spec() const noexcept { return spec_; }
  [[nodiscard]] PriorConfig const& prior() const noexcept { return prior_; }
  [[nodiscard]] SufficientStats const& stats() const noexcept { return stats_; }

  [[nodiscard]] ParameterVector to_parameters(std::span<double const> theta) const {
    ParameterVector p = ParameterVector::zeros(spec_.arity);
    std::size_t i = 0;
    p.alpha_mu = theta[i++];
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::mean, k)) p.beta_mu[k] = theta[i++];
    p.alpha_gamma = std::exp(theta[i++]);
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::structural, k)) p.beta_gamma[k] = theta[i++];
    p.alpha_epsilon = std::exp(theta[i++]);
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::residual, k)) p.beta_epsilon[k] = theta[i++];
    return p;
  }

  [[nodiscard]] std::vector<double> to_unconstrained(ParameterVector const& p) const {
    std::vector<double> theta;
    theta.reserve(dim());
    theta.push_back(p.alpha_mu);
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::mean, k)) theta.push_back(p.beta_mu[k]);
    theta.push_back(std::log(p.alpha_gamma));
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::structural, k)) theta.push_back(p.beta_gamma[k]);
    theta.push_back(std::log(p.alpha_epsilon));
    for (std::size_t k = 0; k < spec_.arity; ++k)
      if (spec_.frees(Component::residual, k)) theta.push_back(p.beta_epsilon[k]);
    return theta;
  }

  [[nodiscard]] double log_density(std::span<double const> theta) const {
    ParameterVector const p = to_parameters(theta);
    if (!(p.alpha_gamma > 0) || !(p.alpha_epsilon > 0) || !std::isfinite(p.alpha_gamma) || !std::isfinite(p.alpha_epsilon))
      return -std::numeric_limits<double>::infinity();
    double const ll = detail::loglik_unchecked(stats_, p);
    if (!std::isfinite(ll)) return ll;
    return ll + log_prior(p, prior_, spec_) + std::log(p.alpha_gamma) + std::log(p.alpha_epsilon);
  }

private:
  SufficientStats stats_;
  ModelSpec spec_;
  PriorConfig prior_;
};

static_assert(LogDensity<ModelPosterior>);

struct PosteriorDraws {
  ModelSpec spec;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  Eigen::MatrixXd natural;       // rows = draws, cols = ParameterVector::flatten layout
  Eigen::MatrixXd unconstrained; // rows = draws, cols = free coordinates
  std::vector<double> log_posterior;
  std::vector<ParameterDiagnostics> diagnostics; // per free coordinate
  std::vector<double> acceptance;                // per chain
  bool converged = true;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(natural.rows()); }

  [[nodiscard]] ParameterVector parameters(std::size_t row) const {
    Eigen::RowVectorXd r = natural.row(static_cast<Eigen::Index>(row));
    return ParameterVector::unflatten(std::span<double const>(r.data(), static_cast<std::size_t>(r.size())), spec.arity);
  }
};

inline std::vector<ParameterDiagnostics> diagnostics(PosteriorDraws const& draws) {
  return diagnose(draws.unconstrained, draws.chains);
}

/// Starting point from ANOVA moments (intercept SDs clamped at 0.05),
/// coefficients at zero.
inline ParameterVector moment_start(SufficientStats const& stats) {
  auto const a = anova_moments(stats);
  ParameterVector p = ParameterVector::zeros(stats.arity());
  p.alpha_mu = a.grand_mean;
  p.alpha_gamma = std::max(std::sqrt(a.var_gamma), 0.05);
  p.alpha_epsilon = std::max(std::sqrt(a.var_epsilon), 0.05);
  return p;
}

inline PosteriorDraws sample_posterior(SufficientStats const& stats, ModelSpec const& spec, PriorConfig const& prior,
                                       SamplerConfig const& cfg) {
  ModelPosterior const target(stats, spec, prior);
  auto const start = target.to_unconstrained(moment_start(stats));
  auto set = sample(
      target,
      [&](std::size_t, Stream& rng) {
        auto x = start;
        for (auto& v : x) v += rng.uniform(-0.1, 0.1);
        return x;
      },
      cfg);

  PosteriorDraws out;
  out.spec = spec;
  out.chains = set.chains;
  out.draws_per_chain = set.draws_per_chain;
  out.unconstrained = std::move(set.draws);
  out.log_posterior = std::move(set.log_density);
  out.acceptance = std::move(set.acceptance);
  auto const rows = out.unconstrained.rows();
  out.natural.resize(rows, static_cast<Eigen::Index>(3 + 3 * spec.arity));
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::RowVectorXd u = out.unconstrained.row(r);
    auto const flat = target.to_parameters(std::span<double const>(u.data(), static_cast<std::size_t>(u.size()))).flatten();
    for (std::size_t c = 0; c < flat.size(); ++c) out.natural(r, static_cast<Eigen::Index>(c)) = flat[c];
  }
  out.diagnostics = diagnostics(out);
  for (auto const& d : out.diagnostics)
    if (d.degenerate || !(d.rhat <= cfg.max_rhat)) out.converged = false;
  return out;
}

inline PosteriorDraws sample_posterior(RatingsTable const& data, ModelSpec const& spec, PriorConfig const& prior,
                                       SamplerConfig const& cfg) {
  data.validate();
  return sample_posterior(SufficientStats(data), spec, prior, cfg);
}

} // namespace irrbma

#endif // IRRBMA_SAMPLER_HPP

#ifndef IRRBMA_EVIDENCE_HPP
#define IRRBMA_EVIDENCE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "irrbma/likelihood.hpp"
#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"
#include "irrbma/sampler.hpp"

namespace irrbma {

inline double log_sum_exp(std::span<double const> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double const m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct BridgeError : std::runtime_error {
  explicit BridgeError(std::string const& what, double last = std::numeric_limits<double>::quiet_NaN())
      : std::runtime_error(what), last_iterate(last) {}
  double last_iterate; // log scale
};

struct BridgeOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 1000;
};

struct BridgeResult {
  double log_marglik = 0;
  double mcse = 0; // approximate standard error on the log scale
  std::size_t iterations = 0;
};

/// Multivariate normal used as the bridge proposal.
class GaussianProposal {
public:
  GaussianProposal(Eigen::VectorXd mean, Eigen::MatrixXd const& cov) : mean_(std::move(mean)) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw BridgeError("proposal covariance is not positive definite");
    chol_ = llt.matrixL();
    log_norm_ = -0.5 * static_cast<double>(mean_.size()) * detail::kLog2Pi -
                chol_.diagonal().array().log().sum();
  }

  /// Moment-matched to the rows of `draws`.
  static GaussianProposal fit(Eigen::MatrixXd const& draws) {
    if (draws.rows() < 2) throw BridgeError("too few draws to fit the proposal");
    Eigen::VectorXd mean = draws.colwise().mean().transpose();
    Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(draws.rows() - 1);
    return GaussianProposal(std::move(mean), cov);
  }

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }

  [[nodiscard]] double log_density(std::span<double const> x) const {
    Eigen::Map<Eigen::VectorXd const> v(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd z = chol_.triangularView<Eigen::Lower>().solve(v - mean_);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  [[nodiscard]] Eigen::VectorXd sample(Stream& rng) const {
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return mean_ + chol_.triangularView<Eigen::Lower>() * z;
  }

private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd chol_;
  double log_norm_ = 0;
};

/// Iterative optimal bridge estimator with a given proposal. `eval` holds
/// posterior draws (rows) from `chains` equal-length chains; an equal number
/// of proposal draws is generated.
template <LogDensity T>
BridgeResult bridge_with_proposal(T const& target, Eigen::MatrixXd const& eval, std::size_t chains,
                                  GaussianProposal const& proposal, Stream& rng, BridgeOptions const& opts = {}) {
  std::size_t const n1 = static_cast<std::size_t>(eval.rows());
  std::size_t const n2 = n1;
  if (n1 < 2) throw BridgeError("too few posterior draws for bridge sampling");
  std::vector<double> l1(n1), l2(n2);
  for (std::size_t i = 0; i < n1; ++i) {
    Eigen::VectorXd x = eval.row(static_cast<Eigen::Index>(i)).transpose();
    std::span<double const> s(x.data(), static_cast<std::size_t>(x.size()));
    l1[i] = target.log_density(s) - proposal.log_density(s);
    if (!std::isfinite(l1[i])) throw BridgeError("non-finite target density at a posterior draw");
  }
  for (std::size_t j = 0; j < n2; ++j) {
    Eigen::VectorXd x = proposal.sample(rng);
    std::span<double const> s(x.data(), static_cast<std::size_t>(x.size()));
    double const t = target.log_density(s);
    l2[j] = std::isnan(t) ? -std::numeric_limits<double>::infinity() : t - proposal.log_density(s);
  }

  std::vector<double> sorted = l1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n1 / 2), sorted.end());
  double const lstar = sorted[n1 / 2];
  double const s1 = static_cast<double>(n1) / static_cast<double>(n1 + n2);
  double const s2 = static_cast<double>(n2) / static_cast<double>(n1 + n2);
  double const ls1 = std::log(s1), ls2 = std::log(s2);

  double logr = -std::numeric_limits<double>::infinity();
  std::vector<double> num(n2), den(n1);
  BridgeResult res;
  bool converged = false;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    for (std::size_t j = 0; j < n2; ++j) {
      double const a = l2[j] - lstar;
      num[j] = a == -std::numeric_limits<double>::infinity() ? a : a - log_add_exp(ls1 + a, ls2 + logr);
    }
    for (std::size_t i = 0; i < n1; ++i) den[i] = -log_add_exp(ls1 + (l1[i] - lstar), ls2 + logr);
    double const next = std::log(static_cast<double>(n1) / static_cast<double>(n2)) + log_sum_exp(num) - log_sum_exp(den);
    if (!std::isfinite(next)) throw BridgeError("bridge iteration produced a non-finite value (degenerate proposal)", logr + lstar);
    double const change = std::isfinite(logr) ? std::abs(-std::expm1(logr - next)) : 1.0;
    logr = next;
    if (change < opts.tolerance) {
      converged = true;
      break;
    }
    ++res.iterations;
  }
  if (!converged) throw BridgeError("bridge fixed point did not converge", logr + lstar);
  res.log_marglik = logr + lstar;

  // Relative mean-squared error of the estimate (Fruehwirth-Schnatter 2004);
  // the posterior term is inflated by the integrated autocorrelation time.
  std::vector<double> f1(n2), f2(n1);
  for (std::size_t j = 0; j < n2; ++j) {
    double const a = l2[j] - res.log_marglik;
    f1[j] = a == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(a - log_add_exp(ls1 + a, ls2));
  }
  for (std::size_t i = 0; i < n1; ++i) f2[i] = std::exp(-log_add_exp(ls1 + (l1[i] - res.log_marglik), ls2));
  auto mean_var = [](std::vector<double> const& v) {
    double const m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  auto [m1, v1] = mean_var(f1);
  auto [m2, v2] = mean_var(f2);
  double tau = 1.0;
  if (chains >= 1 && n1 / chains >= 8 && v2 > 0) {
    std::size_t const per = n1 / chains;
    std::vector<std::vector<double>> split(chains, std::vector<double>(per));
    for (std::size_t c = 0; c < chains; ++c)
      for (std::size_t i = 0; i < per; ++i) split[c][i] = f2[c * per + i];
    if (chains >= 2) {
      auto d = detail::split_diagnostics(split);
      if (!d.degenerate && d.ess > 0) tau = std::max(1.0, static_cast<double>(chains * per) / d.ess);
    }
  }
  double re2 = 0;
  if (m1 > 0) re2 += v1 / (m1 * m1) / static_cast<double>(n2);
  if (m2 > 0) re2 += tau * v2 / (m2 * m2) / static_cast<double>(n1);
  res.mcse = std::sqrt(re2);
  return res;
}

/// Splits each chain in half: first halves fit a moment-matched normal
/// proposal, second halves enter the bridge iteration.
template <LogDensity T>
BridgeResult bridge_sampling(T const& target, Eigen::MatrixXd const& draws, std::size_t chains, Stream& rng,
                             BridgeOptions const& opts = {}) {
  if (chains == 0 || draws.rows() % static_cast<Eigen::Index>(chains) != 0)
    throw std::invalid_argument("bridge_sampling: draws are not a whole number of chains");
  std::size_t const per = static_cast<std::size_t>(draws.rows()) / chains;
  std::size_t const half = per / 2;
  if (half < 2) throw BridgeError("too few draws per chain for bridge sampling");
  auto const cols = draws.cols();
  Eigen::MatrixXd fit_half(static_cast<Eigen::Index>(chains * half), cols);
  Eigen::MatrixXd eval_half(static_cast<Eigen::Index>(chains * half), cols);
  for (std::size_t c = 0; c < chains; ++c)
    for (std::size_t i = 0; i < half; ++i) {
      fit_half.row(static_cast<Eigen::Index>(c * half + i)) = draws.row(static_cast<Eigen::Index>(c * per + i));
      eval_half.row(static_cast<Eigen::Index>(c * half + i)) = draws.row(static_cast<Eigen::Index>(c * per + per - half + i));
    }
  auto const proposal = GaussianProposal::fit(fit_half);
  return bridge_with_proposal(target, eval_half, chains, proposal, rng, opts);
}

/// Log marginal likelihood of one model from its posterior draws.
inline BridgeResult bridge_logml(PosteriorDraws const& draws, SufficientStats const& stats, ModelSpec const& spec,
                                 PriorConfig const& prior, std::uint64_t seed = 0, BridgeOptions const& opts = {}) {
  if (!(draws.spec == spec)) throw std::invalid_argument("draws belong to a different model");
  ModelPosterior const target(stats, spec, prior);
  Stream rng = Stream(seed, 0xB81D6EULL).substream(model_index(spec));
  return bridge_sampling(target, draws.unconstrained, draws.chains, rng, opts);
}

inline BridgeResult bridge_logml(PosteriorDraws const& draws, RatingsTable const& data, ModelSpec const& spec,
                                 PriorConfig const& prior, std::uint64_t seed = 0, BridgeOptions const& opts = {}) {
  return bridge_logml(draws, SufficientStats(data), spec, prior, seed, opts);
}

inline double bayes_factor(double logml_1, double logml_0) {
  if (!std::isfinite(logml_1) || !std::isfinite(logml_0)) throw std::invalid_argument("bayes_factor: non-finite input");
  return std::exp(logml_1 - logml_0);
}

struct ModelEvidence {
  ModelSpec spec;
  double log_marglik = 0;
  double log_marglik_mcse = 0;
  double prior_prob = 1;
  double posterior_prob = 0;
};

struct DegenerateEvidenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Uniform prior model probabilities.
inline void assign_uniform_priors(std::vector<ModelEvidence>& ev) {
  for (auto& e : ev) e.prior_prob = 1.0 / static_cast<double>(ev.size());
}

inline std::vector<ModelEvidence> posterior_model_probs(std::vector<ModelEvidence> ev) {
  if (ev.empty()) throw std::invalid_argument("posterior_model_probs: empty model set");
  double total_prior = 0;
  for (auto const& e : ev) {
    if (!(e.prior_prob > 0)) throw std::invalid_argument("prior model probabilities must be positive");
    total_prior += e.prior_prob;
  }
  if (std::abs(total_prior - 1.0) > 1e-9) throw std::invalid_argument("prior model probabilities must sum to one");
  std::vector<double> lw(ev.size());
  for (std::size_t m = 0; m < ev.size(); ++m) lw[m] = ev[m].log_marglik + std::log(ev[m].prior_prob);
  double const norm = log_sum_exp(lw);
  if (!std::isfinite(norm)) throw DegenerateEvidenceError("all marginal likelihoods are zero");
  for (std::size_t m = 0; m < ev.size(); ++m) ev[m].posterior_prob = std::exp(lw[m] - norm);
  return ev;
}

struct InclusionTarget {
  Component component = Component::residual;
  std::size_t covariate = 0;
  friend bool operator==(InclusionTarget const&, InclusionTarget const&) = default;
};

struct InclusionResult {
  InclusionTarget target;
  double bf_inclusion = 1;
  double log_bf_inclusion = 0;
  double prior_incl_odds = 1;
  double posterior_incl_odds = 1;
};

struct PartitionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Change from prior to posterior odds of the models containing the target
/// effect (set A) against those without it (set B).
inline InclusionResult inclusion_bf(std::vector<ModelEvidence> const& ev, InclusionTarget const& target) {
  std::vector<double> post_a, post_b, prior_a, prior_b;
  for (auto const& e : ev) {
    double const lp = std::log(e.prior_prob);
    if (e.spec.frees(target.component, target.covariate)) {
      post_a.push_back(e.log_marglik + lp);
      prior_a.push_back(lp);
    } else {
      post_b.push_back(e.log_marglik + lp);
      prior_b.push_back(lp);
    }
  }
  if (post_a.empty() || post_b.empty()) throw PartitionError("inclusion_bf: both partitions must be nonempty");
  InclusionResult r;
  r.target = target;
  double const log_post_odds = log_sum_exp(post_a) - log_sum_exp(post_b);
  double const log_prior_odds = log_sum_exp(prior_a) - log_sum_exp(prior_b);
  if (std::isnan(log_post_odds)) throw DegenerateEvidenceError("inclusion_bf: undefined posterior odds");
  r.posterior_incl_odds = std::exp(log_post_odds);
  r.prior_incl_odds = std::exp(log_prior_odds);
  r.log_bf_inclusion = log_post_odds - log_prior_odds;
  r.bf_inclusion = std::exp(r.log_bf_inclusion);
  return r;
}

/// All targets of a schema: (mean, structural, residual) x covariates.
inline std::vector<InclusionTarget> all_inclusion_targets(std::size_t arity) {
  std::vector<InclusionTarget> out;
  for (auto c : {Component::mean, Component::structural, Component::residual})
    for (std::size_t k = 0; k < arity; ++k) out.push_back({c, k});
  return out;
}

enum class Strength { none, weak, moderate, strong, very_strong };
enum class Direction { neither, presence, absence };

struct EvidenceLabel {
  Strength strength = Strength::none;
  Direction direction = Direction::neither;

  [[nodiscard]] std::string strength_text() const {
    switch (strength) {
    case Strength::none: return "no";
    case Strength::weak: return "weak";
    case Strength::moderate: return "moderate";
    case Strength::strong: return "strong";
    case Strength::very_strong: return "very strong";
    }
    return "?";
  }

  /// e.g. "moderate evidence for presence", or "no evidence".
  [[nodiscard]] std::string text() const {
    if (strength == Strength::none) return "no evidence";
    return strength_text() + " evidence for " + (direction == Direction::presence ? "presence" : "absence");
  }
};

/// Classifies BF (or 1/BF when below one) on (1,3], (3,10], (10,100], >100.
inline EvidenceLabel evidence_label(double bf) {
  if (!(bf > 0)) throw std::invalid_argument("evidence_label: Bayes factor must be positive");
  EvidenceLabel l;
  if (bf == 1.0) return l;
  l.direction = bf > 1 ? Direction::presence : Direction::absence;
  double const x = bf > 1 ? bf : 1.0 / bf;
  if (x <= 3) l.strength = Strength::weak;
  else if (x <= 10) l.strength = Strength::moderate;
  else if (x <= 100) l.strength = Strength::strong;
  else l.strength = Strength::very_strong;
  return l;
}

} // namespace irrbma

#endif // IRRBMA_EVIDENCE_HPP

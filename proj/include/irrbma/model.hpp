#ifndef IRRBMA_MODEL_HPP
#define IRRBMA_MODEL_HPP

// Model space, parameterization and priors for the covariate-dependent
// one-way random-effects model
//
//   y_ij = mu_i + gamma_i + eps_ij,
//   mu_i      = alpha_mu + beta_mu' x_i
//   sd(gamma) = alpha_gamma   * exp(beta_gamma'   x_i)
//   sd(eps)   = alpha_epsilon * exp(beta_epsilon' x_i)
//
// with binary covariates effect-coded as -0.5 / +0.5.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace irrbma {

inline constexpr double kLowCode = -0.5;
inline constexpr double kHighCode = 0.5;
inline constexpr std::size_t kMaxCovariates = 16;

class CovariateSchema {
public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() > kMaxCovariates)
      throw std::invalid_argument("CovariateSchema: at most 16 covariates are supported");
    std::unordered_set<std::string> seen;
    for (auto const& n : names_) {
      if (n.empty()) throw std::invalid_argument("CovariateSchema: empty covariate name");
      if (!seen.insert(n).second)
        throw std::invalid_argument("CovariateSchema: duplicate covariate name '" + n + "'");
    }
  }

  [[nodiscard]] std::size_t arity() const noexcept { return names_.size(); }
  [[nodiscard]] std::vector<std::string> const& names() const noexcept { return names_; }

  friend bool operator==(CovariateSchema const&, CovariateSchema const&) = default;

private:
  std::vector<std::string> names_;
};

/// A point in covariate space. Bit k of code() is set iff covariate k sits
/// at +0.5.
class CovariateProfile {
public:
  CovariateProfile() = default;
  explicit CovariateProfile(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() > kMaxCovariates)
      throw std::invalid_argument("CovariateProfile: too many entries");
    for (double v : values_)
      if (v != kLowCode && v != kHighCode)
        throw std::invalid_argument("CovariateProfile: entries must be -0.5 or +0.5");
  }

  static CovariateProfile from_code(std::uint32_t code, std::size_t arity) {
    std::vector<double> v(arity);
    for (std::size_t k = 0; k < arity; ++k) v[k] = (code >> k) & 1U ? kHighCode : kLowCode;
    return CovariateProfile(std::move(v));
  }

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<double const> values() const noexcept { return values_; }
  [[nodiscard]] double operator[](std::size_t k) const { return values_[k]; }

  [[nodiscard]] std::uint32_t code() const noexcept {
    std::uint32_t c = 0;
    for (std::size_t k = 0; k < values_.size(); ++k)
      if (values_[k] > 0) c |= 1U << k;
    return c;
  }

  [[nodiscard]] CovariateProfile negated() const {
    std::vector<double> v(values_);
    for (double& x : v) x = -x;
    return CovariateProfile(std::move(v));
  }

  friend bool operator==(CovariateProfile const&, CovariateProfile const&) = default;

private:
  std::vector<double> values_;
};

/// All 2^K profiles, ordered by code.
inline std::vector<CovariateProfile> all_profiles(std::size_t arity) {
  std::vector<CovariateProfile> out;
  out.reserve(std::size_t{1} << arity);
  for (std::uint32_t c = 0; c < (1U << arity); ++c) out.push_back(CovariateProfile::from_code(c, arity));
  return out;
}

enum class Component { mean = 0, structural = 1, residual = 2 };

inline char const* to_string(Component c) {
  switch (c) {
  case Component::mean: return "mean";
  case Component::structural: return "structural";
  case Component::residual: return "residual";
  }
  return "?";
}

/// Which covariates enter each of the three regressions. Bit k of a mask
/// frees the coefficient of covariate k.
struct ModelSpec {
  std::size_t arity = 0;
  std::uint32_t mean_mask = 0;
  std::uint32_t structural_mask = 0;
  std::uint32_t residual_mask = 0;

  [[nodiscard]] std::uint32_t mask(Component c) const noexcept {
    switch (c) {
    case Component::mean: return mean_mask;
    case Component::structural: return structural_mask;
    case Component::residual: return residual_mask;
    }
    return 0;
  }
  [[nodiscard]] bool frees(Component c, std::size_t k) const noexcept { return (mask(c) >> k) & 1U; }

  [[nodiscard]] std::size_t free_beta_count() const noexcept {
    return static_cast<std::size_t>(std::popcount(mean_mask) + std::popcount(structural_mask) +
                                    std::popcount(residual_mask));
  }
  /// Free parameters excluding the integrated random effects.
  [[nodiscard]] std::size_t parameter_count() const noexcept { return 3 + free_beta_count(); }

  /// Componentwise mask containment.
  [[nodiscard]] bool contains(ModelSpec const& other) const noexcept {
    return (other.mean_mask & ~mean_mask) == 0 && (other.structural_mask & ~structural_mask) == 0 &&
           (other.residual_mask & ~residual_mask) == 0;
  }

  static ModelSpec full(std::size_t arity) {
    std::uint32_t const m = arity == 0 ? 0 : (1U << arity) - 1;
    return {arity, m, m, m};
  }

  friend bool operator==(ModelSpec const&, ModelSpec const&) = default;
};

/// Mean mask varies slowest, residual fastest; for K = 1 this yields M1..M8.
inline std::vector<ModelSpec> enumerate_models(CovariateSchema const& schema) {
  std::size_t const k = schema.arity();
  std::uint32_t const n = 1U << k;
  std::vector<ModelSpec> out;
  out.reserve(std::size_t{n} * n * n);
  for (std::uint32_t m = 0; m < n; ++m)
    for (std::uint32_t s = 0; s < n; ++s)
      for (std::uint32_t r = 0; r < n; ++r) out.push_back({k, m, s, r});
  return out;
}

/// Index of a spec in enumerate_models order.
inline std::size_t model_index(ModelSpec const& spec) {
  std::size_t const n = std::size_t{1} << spec.arity;
  return (spec.mean_mask * n + spec.structural_mask) * n + spec.residual_mask;
}

struct ParameterVector {
  double alpha_mu = 0.0;
  std::vector<double> beta_mu;
  double alpha_gamma = 1.0;
  std::vector<double> beta_gamma;
  double alpha_epsilon = 1.0;
  std::vector<double> beta_epsilon;

  static ParameterVector zeros(std::size_t arity) {
    ParameterVector p;
    p.beta_mu.assign(arity, 0.0);
    p.beta_gamma.assign(arity, 0.0);
    p.beta_epsilon.assign(arity, 0.0);
    return p;
  }

  [[nodiscard]] std::size_t arity() const noexcept { return beta_mu.size(); }

  [[nodiscard]] std::vector<double> const& beta(Component c) const noexcept {
    switch (c) {
    case Component::structural: return beta_gamma;
    case Component::residual: return beta_epsilon;
    default: return beta_mu;
    }
  }
  std::vector<double>& beta(Component c) noexcept {
    switch (c) {
    case Component::structural: return beta_gamma;
    case Component::residual: return beta_epsilon;
    default: return beta_mu;
    }
  }

  /// True if positivity holds and every masked-out coefficient is zero.
  [[nodiscard]] bool respects(ModelSpec const& spec) const noexcept {
    if (!(alpha_gamma > 0.0) || !(alpha_epsilon > 0.0)) return false;
    if (beta_mu.size() != spec.arity || beta_gamma.size() != spec.arity || beta_epsilon.size() != spec.arity)
      return false;
    for (auto c : {Component::mean, Component::structural, Component::residual})
      for (std::size_t k = 0; k < spec.arity; ++k)
        if (!spec.frees(c, k) && beta(c)[k] != 0.0) return false;
    return true;
  }

  /// Natural-scale layout [a_mu, b_mu.., a_gamma, b_gamma.., a_eps, b_eps..].
  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(3 + 3 * arity());
    out.push_back(alpha_mu);
    out.insert(out.end(), beta_mu.begin(), beta_mu.end());
    out.push_back(alpha_gamma);
    out.insert(out.end(), beta_gamma.begin(), beta_gamma.end());
    out.push_back(alpha_epsilon);
    out.insert(out.end(), beta_epsilon.begin(), beta_epsilon.end());
    return out;
  }

  static ParameterVector unflatten(std::span<double const> flat, std::size_t arity) {
    if (flat.size() != 3 + 3 * arity) throw std::invalid_argument("ParameterVector: bad flat length");
    ParameterVector p;
    auto it = flat.begin();
    p.alpha_mu = *it++;
    p.beta_mu.assign(it, it + static_cast<std::ptrdiff_t>(arity));
    it += static_cast<std::ptrdiff_t>(arity);
    p.alpha_gamma = *it++;
    p.beta_gamma.assign(it, it + static_cast<std::ptrdiff_t>(arity));
    it += static_cast<std::ptrdiff_t>(arity);
    p.alpha_epsilon = *it++;
    p.beta_epsilon.assign(it, it + static_cast<std::ptrdiff_t>(arity));
    return p;
  }
};

/// Column names matching ParameterVector::flatten.
inline std::vector<std::string> parameter_names(CovariateSchema const& schema) {
  std::vector<std::string> out{"alpha_mu"};
  for (auto const& n : schema.names()) out.push_back("beta_mu[" + n + "]");
  out.emplace_back("alpha_gamma");
  for (auto const& n : schema.names()) out.push_back("beta_gamma[" + n + "]");
  out.emplace_back("alpha_epsilon");
  for (auto const& n : schema.names()) out.push_back("beta_epsilon[" + n + "]");
  return out;
}

struct PriorConfig {
  double sigma_beta = 0.5;
  double mu_alpha_mu = 0.0;
  double sd_alpha_mu = 1.0;
  double sd_alpha_gamma = 1.0;
  double sd_alpha_epsilon = 1.0;

  void validate() const {
    if (!(sigma_beta > 0) || !(sd_alpha_mu > 0) || !(sd_alpha_gamma > 0) || !(sd_alpha_epsilon > 0))
      throw std::invalid_argument("PriorConfig: standard deviations must be strictly positive");
  }

  /// "small" (0.25), "medium" (0.5) or "large" (1.0) coefficient prior.
  static PriorConfig preset(std::string const& name) {
    PriorConfig p;
    if (name == "small") p.sigma_beta = 0.25;
    else if (name == "medium") p.sigma_beta = 0.5;
    else if (name == "large") p.sigma_beta = 1.0;
    else throw std::invalid_argument("unknown prior preset '" + name + "'");
    return p;
  }
};

inline double dot(std::span<double const> a, CovariateProfile const& p) {
  if (a.size() != p.size()) throw std::invalid_argument("coefficient/profile length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * p[k];
  return s;
}

inline double linked_sd(double alpha, std::span<double const> beta, CovariateProfile const& profile) {
  if (!(alpha > 0.0)) throw std::domain_error("linked_sd: alpha must be positive");
  double const eta = dot(beta, profile);
  double const out = alpha * std::exp(eta);
  if (!std::isfinite(out) || out <= 0.0) throw std::range_error("linked_sd: exponent out of range");
  return out;
}

inline double linked_mean(double alpha_mu, std::span<double const> beta_mu, CovariateProfile const& profile) {
  return alpha_mu + dot(beta_mu, profile);
}

inline double irr(double sigma_gamma, double sigma_epsilon) {
  if (!(sigma_gamma > 0.0) || !(sigma_epsilon > 0.0)) throw std::domain_error("irr: SDs must be positive");
  double const g2 = sigma_gamma * sigma_gamma;
  return g2 / (g2 + sigma_epsilon * sigma_epsilon);
}

inline double irr_profile(ParameterVector const& params, CovariateProfile const& profile) {
  return irr(linked_sd(params.alpha_gamma, params.beta_gamma, profile),
             linked_sd(params.alpha_epsilon, params.beta_epsilon, profile));
}

namespace detail {
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178; // ln sqrt(2 pi)

inline double normal_logpdf(double x, double mean, double sd) {
  double const z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

inline double half_normal_logpdf(double x, double sd) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  return std::numbers::ln2 + normal_logpdf(x, 0.0, sd);
}
} // namespace detail

/// Natural-scale log prior density; masked coefficients contribute nothing.
inline double log_prior(ParameterVector const& params, PriorConfig const& prior, ModelSpec const& spec) {
  double lp = detail::normal_logpdf(params.alpha_mu, prior.mu_alpha_mu, prior.sd_alpha_mu);
  lp += detail::half_normal_logpdf(params.alpha_gamma, prior.sd_alpha_gamma);
  lp += detail::half_normal_logpdf(params.alpha_epsilon, prior.sd_alpha_epsilon);
  for (auto c : {Component::mean, Component::structural, Component::residual})
    for (std::size_t k = 0; k < spec.arity; ++k)
      if (spec.frees(c, k)) lp += detail::normal_logpdf(params.beta(c)[k], 0.0, prior.sigma_beta);
  return lp;
}

/// Human-readable label of a mask, e.g. "gender & stage" or "none".
inline std::string describe_mask(std::uint32_t mask, CovariateSchema const& schema) {
  std::string out;
  for (std::size_t k = 0; k < schema.arity(); ++k) {
    if (!((mask >> k) & 1U)) continue;
    if (!out.empty()) out += " & ";
    out += schema.names()[k];
  }
  return out.empty() ? "none" : out;
}

} // namespace irrbma

#endif // IRRBMA_MODEL_HPP

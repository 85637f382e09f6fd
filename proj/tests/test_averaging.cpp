#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"

using namespace irrbma;

namespace {

RatingsTable scenario_data(std::string const& name, std::size_t i, std::size_t j, std::uint64_t seed) {
  auto cfg = find_scenario(name);
  cfg.ratees_per_group = i;
  cfg.ratings_per_ratee = j;
  cfg.seed = seed;
  return simulate_dataset(cfg);
}

// Posterior draws that all equal one parameter vector.
PosteriorDraws point_mass(ModelSpec const& spec, ParameterVector const& p, std::size_t n = 200) {
  PosteriorDraws d;
  d.spec = spec;
  d.chains = 4;
  d.draws_per_chain = n / 4;
  auto const flat = p.flatten();
  d.natural.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(flat.size()));
  for (Eigen::Index r = 0; r < d.natural.rows(); ++r)
    for (std::size_t c = 0; c < flat.size(); ++c) d.natural(r, static_cast<Eigen::Index>(c)) = flat[c];
  return d;
}

// Normal-mean toy: y_j ~ N(theta, 1), theta ~ N(0, 1). Returns the
// pointwise matrix of `s` exact posterior draws plus analytic WAIC and LOO.
struct NormalToy {
  std::vector<double> y;
  double post_mean = 0, post_var = 0;

  explicit NormalToy(std::vector<double> ys) : y(std::move(ys)) {
    double const prec = 1.0 + static_cast<double>(y.size());
    post_var = 1.0 / prec;
    post_mean = std::accumulate(y.begin(), y.end(), 0.0) / prec;
  }

  PointwiseMatrix draws(std::size_t s, Stream& rng) const {
    PointwiseMatrix ll(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(y.size()));
    for (std::size_t r = 0; r < s; ++r) {
      double const th = rng.normal(post_mean, std::sqrt(post_var));
      for (std::size_t j = 0; j < y.size(); ++j)
        ll(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = detail::normal_logpdf(y[j], th, 1.0);
    }
    return ll;
  }

  [[nodiscard]] double waic() const {
    double total = 0, s2 = post_var;
    for (double v : y) {
      double const d = v - post_mean;
      total += detail::normal_logpdf(v, post_mean, std::sqrt(1 + s2)) - (d * d * s2 + s2 * s2 / 2);
    }
    return total;
  }

  [[nodiscard]] double loo() const {
    double total = 0;
    for (double v : y) {
      double const prec = 1 / post_var - 1;
      double const mean = (post_mean / post_var - v) / prec;
      total += detail::normal_logpdf(v, mean, std::sqrt(1 + 1 / prec));
    }
    return total;
  }
};

} // namespace

TEST(Weights, InformationCriteria) {
  std::vector<double> const v{100.0, 102.0};
  auto const w = ic_weights(v, WeightMethod::aic);
  EXPECT_NEAR(w[0], 0.7311, 1e-4);
  EXPECT_NEAR(w[1], 0.2689, 1e-4);
  std::vector<double> const same{5.0, 5.0, 5.0};
  for (double x : ic_weights(same).weights) EXPECT_NEAR(x, 1.0 / 3, 1e-15);
  std::vector<double> const bad{1.0, std::nan("")};
  EXPECT_THROW(ic_weights(bad), std::invalid_argument);
}

TEST(Weights, PseudoBma) {
  std::vector<double> const e{-10.0, -10.0 - std::log(3.0)};
  auto const w = pseudo_bma_weights(e);
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_EQ(w.method, WeightMethod::pseudo_bma);
}

TEST(AveragingProperty, WeightShiftInvariance) {
  Stream rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(8);
    for (auto& x : v) x = rng.normal(500, 10);
    auto w = ic_weights(v);
    w.validate();
    for (auto& x : v) x += 1e3;
    auto const u = ic_weights(v);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(w[i], u[i], 1e-12);
  }
}

TEST(Waic, ConstantLikelihood) {
  PointwiseMatrix ll = PointwiseMatrix::Constant(50, 7, -1.25);
  EXPECT_NEAR(waic(ll), 7 * -1.25, 1e-12);
  EXPECT_NEAR(loo(PointwiseMatrix::Constant(200, 7, -1.25)).elpd, 7 * -1.25, 1e-12);
}

TEST(Waic, NormalToyAnalytic) {
  NormalToy const toy({0.3, -1.2, 0.8, 2.1, 0.0, -0.4});
  Stream rng(2);
  int const reps = 20;
  std::vector<double> w, l;
  for (int r = 0; r < reps; ++r) {
    auto const ll = toy.draws(4000, rng);
    w.push_back(waic(ll));
    l.push_back(loo(ll).elpd);
  }
  auto mean_se = [](std::vector<double> const& v) {
    double const m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
  };
  auto [mw, sw] = mean_se(w);
  auto [ml, sl] = mean_se(l);
  EXPECT_NEAR(mw, toy.waic(), 3 * sw + 1e-3);
  EXPECT_NEAR(ml, toy.loo(), 3 * sl + 1e-3);
}

TEST(Waic, AdditiveOverPoints) {
  NormalToy const toy({0.3, -1.2, 0.8});
  Stream rng(3);
  auto const ll = toy.draws(500, rng);
  PointwiseMatrix more(ll.rows(), ll.cols() + 1);
  more << ll, ll.col(0);
  auto const pw = waic_pointwise(ll);
  EXPECT_NEAR(waic(more), waic(ll) + pw[0], 1e-10);
}

TEST(Loo, RequiresEnoughDraws) {
  EXPECT_THROW(loo(PointwiseMatrix::Zero(50, 3)), std::invalid_argument);
}

TEST(Loo, FlagsDominatedPoints) {
  PointwiseMatrix ll = PointwiseMatrix::Constant(200, 2, -1.0);
  ll(0, 1) = -60.0; // one draw carries almost all importance weight
  auto const r = loo(ll);
  EXPECT_EQ(r.flag_count, 1u);
  EXPECT_TRUE(r.flagged[1]);
  EXPECT_NEAR(r.pointwise[1], waic_pointwise(ll)[1], 1e-12);
}

TEST(Stacking, Examples) {
  std::vector<std::vector<double>> same(3, std::vector<double>{-1.0, -2.0, -0.5});
  auto const w = stacking_weights(same);
  for (double x : w.weights) EXPECT_NEAR(x, 1.0 / 3, 1e-9);

  std::vector<std::vector<double>> dom{{-1.0, -1.2, -0.9, -1.1}, {-5.0, -6.0, -5.5, -7.0}};
  EXPECT_GE(stacking_weights(dom)[0], 0.99);
  EXPECT_THROW(stacking_weights({{-1.0}}), std::invalid_argument);
}

TEST(AveragingProperty, StackingVertexBound) {
  Stream rng(4);
  for (int t = 0; t < 50; ++t) {
    std::size_t const m = 2 + rng.index(6), n = 5 + rng.index(40);
    std::vector<std::vector<double>> lpd(m, std::vector<double>(n));
    for (auto& row : lpd)
      for (auto& v : row) v = rng.normal(-1, 1);
    auto const w = stacking_weights(lpd);
    w.validate();
    double const at_w = stacking_objective(lpd, w.weights);
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<double> vertex(m, 0.0);
      vertex[k] = 1.0;
      EXPECT_GE(at_w, stacking_objective(lpd, vertex) - 1e-9);
    }
  }
}

TEST(Mixture, DegenerateWeights) {
  auto const p1 = find_scenario("1").true_parameters();
  auto const p2 = find_scenario("8.2").true_parameters();
  std::vector<PosteriorDraws> fits{point_mass(ModelSpec{1, 0, 0, 0}, p1), point_mass(ModelSpec::full(1), p2)};
  Stream rng(5);
  auto const mix = bma_mix(fits, WeightVector{WeightMethod::bma, {1.0, 0.0}, false, {}}, 300, rng);
  for (auto m : mix.model) EXPECT_EQ(m, 0u);
  auto const s = irr_summaries(mix);
  EXPECT_NEAR(s.irr[0].point, irr(0.67, 0.74), 1e-12);
  EXPECT_NEAR(s.delta[0].lower, 0.0, 1e-15);
  EXPECT_NEAR(s.delta[0].upper, 0.0, 1e-15);
}

TEST(AveragingProperty, MixtureFrequencies) {
  auto const p = find_scenario("1").true_parameters();
  std::vector<PosteriorDraws> fits{point_mass(ModelSpec{1, 0, 0, 0}, p), point_mass(ModelSpec{1, 0, 0, 0}, p),
                                   point_mass(ModelSpec{1, 0, 0, 0}, p)};
  Stream rng(6);
  std::vector<double> const w{0.5, 0.3, 0.2};
  std::size_t const n = 20000;
  auto const mix = bma_mix(fits, WeightVector{WeightMethod::bma, w, false, {}}, n, rng);
  std::vector<double> counts(3, 0);
  for (auto m : mix.model) ++counts[m];
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_NEAR(counts[k] / n, w[k], 3 * std::sqrt(w[k] * (1 - w[k]) / n));
}

TEST(AveragingProperty, MixtureMeanPreserved) {
  auto p1 = find_scenario("1").true_parameters();
  auto p2 = p1;
  p2.alpha_mu = 2.0;
  std::vector<PosteriorDraws> fits{point_mass(ModelSpec{1, 0, 0, 0}, p1), point_mass(ModelSpec{1, 0, 0, 0}, p2)};
  Stream rng(7);
  std::size_t const n = 20000;
  auto const mix = bma_mix(fits, WeightVector{WeightMethod::bma, {0.25, 0.75}, false, {}}, n, rng);
  double const mean = mix.natural.col(0).mean();
  double const sd = std::sqrt(0.25 * 0.75) * 2.0;
  EXPECT_NEAR(mean, 1.5, 3 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(FrequentistAverage, Examples) {
  std::vector<double> const e{0.4, 0.6}, w{0.5, 0.5};
  EXPECT_DOUBLE_EQ(frequentist_average(e, w), 0.5);
  std::vector<double> const inf_e{0.4, std::numeric_limits<double>::infinity()}, w2{1.0, 0.0};
  EXPECT_DOUBLE_EQ(frequentist_average(inf_e, w2), 0.4);
}

TEST(SelectBest, TiesPreferSimplerModels) {
  auto const specs = enumerate_models(CovariateSchema({"g"}));
  std::vector<double> v(8, 10.0);
  v[3] = 5.0;
  v[5] = 5.0;
  EXPECT_EQ(select_best(v, specs, false), 3u);
  v[1] = 5.0;
  EXPECT_EQ(select_best(v, specs, false), 1u);
}

TEST(Stepwise, AlphaExtremes) {
  auto const t = scenario_data("1", 50, 3, 1);
  SufficientStats const s(t);
  EXPECT_EQ(stepwise(s, StepDirection::forward, {1.0, false}).spec, ModelSpec::full(1));
  EXPECT_EQ(stepwise(s, StepDirection::backward, {1.0, false}).spec, ModelSpec::full(1));
  EXPECT_EQ(stepwise(s, StepDirection::forward, {0.0, false}).spec, (ModelSpec{1, 0, 0, 0}));
  EXPECT_EQ(stepwise(s, StepDirection::backward, {0.0, false}).spec, (ModelSpec{1, 0, 0, 0}));
}

TEST(Stepwise, NullScenarioUsuallyNullModel) {
  int hits_f = 0, hits_b = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SufficientStats const s(scenario_data("1", 200, 3, seed));
    hits_f += stepwise(s, StepDirection::forward).spec == ModelSpec{1, 0, 0, 0};
    hits_b += stepwise(s, StepDirection::backward).spec == ModelSpec{1, 0, 0, 0};
  }
  EXPECT_GE(hits_f, 60);
  EXPECT_GE(hits_b, 60);
}

TEST(Stepwise, DirectionsAgreeOnClearData) {
  int agree = 0, total = 0;
  for (auto const* name : {"1", "8.2"})
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      SufficientStats const s(scenario_data(name, 500, 3, seed));
      agree += stepwise(s, StepDirection::forward).spec == stepwise(s, StepDirection::backward).spec;
      ++total;
    }
  EXPECT_GE(agree, 0.8 * total);
}

TEST(Stepwise, InvalidAlpha) {
  SufficientStats const s(scenario_data("1", 5, 3, 1));
  EXPECT_THROW(stepwise(s, StepDirection::forward, {1.5, false}), std::invalid_argument);
}

TEST(IrrSummaries, ScenarioTwoAtTruth) {
  auto const p = find_scenario("2").true_parameters();
  auto const s = irr_summaries(point_mass(ModelSpec{1, 0, 0, 1}, p));
  ASSERT_EQ(s.irr.size(), 2u);
  EXPECT_NEAR(s.irr[0].point, 0.50, 0.005);
  EXPECT_NEAR(s.irr[1].point, 0.40, 0.005);
  EXPECT_NEAR(s.delta[0].point, irr(0.67, 0.67) - irr(0.67, 0.82), 1e-12);
}

TEST(IrrSummaries, QuantileType7) {
  std::vector<double> const v{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 3);
  EXPECT_DOUBLE_EQ(quantile(v, 0.25), 2);
  EXPECT_DOUBLE_EQ(quantile(v, 0.1), 1.4);
}

TEST(IrrSummaries, BootstrapPointInsideInterval) {
  auto const t = scenario_data("2", 40, 3, 3);
  auto const fit = ml_fit(t, ModelSpec::full(1));
  auto estimator = [](RatingsTable const& d) { return irr_quantities(ml_fit(d, ModelSpec::full(1)).estimates); };
  auto const s = irr_summaries_bootstrap(t, fit.estimates, estimator, 50, 1);
  for (auto const& iv : s.irr) {
    EXPECT_LE(iv.lower, iv.point);
    EXPECT_GE(iv.upper, iv.point);
  }
  auto const again = irr_summaries_bootstrap(t, fit.estimates, estimator, 50, 1);
  EXPECT_EQ(again.irr[0].lower, s.irr[0].lower);
}

TEST(IrrSummaries, BayesianCoverage) {
  // central 95% intervals of the group IRRs under the full model
  int covered = 0, total = 0;
  SamplerConfig cfg;
  cfg.warmup = 1000;
  cfg.draws_per_chain = 1000;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    auto const t = scenario_data("1", 100, 3, seed);
    cfg.seed = seed;
    auto const d = sample_posterior(t, ModelSpec::full(1), PriorConfig{}, cfg);
    auto const s = irr_summaries(d);
    for (auto const& iv : s.irr) {
      covered += iv.lower <= irr(0.67, 0.74) && irr(0.67, 0.74) <= iv.upper;
      ++total;
    }
  }
  EXPECT_GE(covered, 0.85 * total);
}

TEST(MarginalMeans, Rows) {
  auto const p = find_scenario("1").true_parameters();
  std::vector<PosteriorDraws> fits{point_mass(ModelSpec{1, 0, 0, 0}, p)};
  Stream rng(8);
  auto const mix = bma_mix(fits, WeightVector{WeightMethod::bma, {1.0}, false, {}}, 100, rng);
  auto const rows = marginal_means(mix);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].irr.point, rows[1].irr.point);
  EXPECT_NEAR(rows[0].sigma_gamma.point, 0.67, 1e-12);

  auto q = ParameterVector::zeros(2);
  std::vector<PosteriorDraws> k2{point_mass(ModelSpec{2, 0, 0, 0}, q)};
  EXPECT_EQ(marginal_means(bma_mix(k2, WeightVector{WeightMethod::bma, {1.0}, false, {}}, 10, rng)).size(), 4u);
}

TEST(PointwiseMatrix, ShapeAndThinning) {
  auto const t = scenario_data("1", 10, 3, 2);
  auto const d = point_mass(ModelSpec{1, 0, 0, 0}, find_scenario("1").true_parameters(), 400);
  Stream rng(9);
  auto const ll = pointwise_matrix(t, d, rng, 100);
  EXPECT_EQ(ll.rows(), 100);
  EXPECT_EQ(ll.cols(), 60);
  EXPECT_TRUE(ll.allFinite());
}

TEST(AveragingProperty, BicFavorsNullMoreThanAic) {
  // 72 ratees (25 vs 47), 3 ratings each, no true differences
  int bic_more = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ParameterVector p = ParameterVector::zeros(1);
    p.alpha_gamma = 0.67;
    p.alpha_epsilon = 0.74;
    std::vector<CovariateProfile> profiles;
    std::vector<double> mu, sg, se;
    for (int i = 0; i < 72; ++i) {
      profiles.emplace_back(std::vector<double>{i < 25 ? -0.5 : 0.5});
      mu.push_back(0);
      sg.push_back(0.67);
      se.push_back(0.74);
    }
    auto const t = detail::simulate_design(CovariateSchema({"gender"}), {{{"female", "male"}}}, profiles,
                                           std::vector<std::size_t>(72, 3), mu, sg, se, Stream(seed));
    std::vector<double> aic, bic;
    for (auto const& spec : enumerate_models(t.schema)) {
      auto const f = ml_fit(t, spec);
      aic.push_back(f.aic);
      bic.push_back(f.bic);
    }
    bic_more += ic_weights(bic, WeightMethod::bic)[0] > ic_weights(aic)[0];
  }
  EXPECT_EQ(bic_more, 20);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "irrbma/data.hpp"

using namespace irrbma;

namespace {

RatingsTable parse(std::string const& text, std::vector<std::string> covs = {}) {
  std::istringstream in(text);
  return parse_csv(in, CovariateSchema(std::move(covs)));
}

struct GroupMoments {
  double var_gamma = 0, var_epsilon = 0, se_gamma = 0, se_epsilon = 0;
};

// One-way ANOVA moments of the ratees at one level of the first covariate,
// with large-sample standard errors under normality.
GroupMoments group_moments(RatingsTable const& t, double level, double true_g, double true_e) {
  std::vector<double> sum(t.n_ratees(), 0), ss(t.n_ratees(), 0);
  std::vector<int> cnt(t.n_ratees(), 0);
  for (std::size_t r = 0; r < t.n_ratings(); ++r) {
    sum[t.ratee_ids[r]] += t.ratings[r];
    ++cnt[t.ratee_ids[r]];
  }
  std::vector<double> means;
  double ssw = 0;
  int n_ratings = 0;
  for (std::size_t r = 0; r < t.n_ratings(); ++r) {
    auto i = t.ratee_ids[r];
    if (t.profiles[i][0] != level) continue;
    double const d = t.ratings[r] - sum[i] / cnt[i];
    ssw += d * d;
    ++n_ratings;
  }
  int j = 0;
  for (std::size_t i = 0; i < t.n_ratees(); ++i)
    if (t.profiles[i][0] == level) {
      means.push_back(sum[i] / cnt[i]);
      j = cnt[i];
    }
  double const n = static_cast<double>(means.size());
  double grand = 0;
  for (double m : means) grand += m;
  grand /= n;
  double ssb = 0;
  for (double m : means) ssb += (m - grand) * (m - grand);
  double const msb = j * ssb / (n - 1), df_w = n_ratings - n, msw = ssw / df_w;
  GroupMoments g;
  g.var_gamma = (msb - msw) / j;
  g.var_epsilon = msw;
  double const eb = j * true_g * true_g + true_e * true_e, ee = true_e * true_e;
  g.se_epsilon = ee * std::sqrt(2 / df_w);
  g.se_gamma = std::sqrt(2 * eb * eb / (n - 1) + 2 * ee * ee / df_w) / j;
  return g;
}

} // namespace

TEST(Csv, MinimalTable) {
  auto t = parse("ratee,rating\nr1,1\nr1,2\nr1,3\n");
  EXPECT_EQ(t.n_ratees(), 1u);
  EXPECT_EQ(t.n_ratings(), 3u);
  EXPECT_EQ(t.ratings_per_ratee()[0], 3u);
}

TEST(Csv, InconsistentCovariateNamesRatee) {
  try {
    parse("ratee,rating,g\n7,1,a\n7,2,b\n8,1,a\n", {"g"});
    FAIL() << "expected ValidationError";
  } catch (ValidationError const& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse("ratee,score\n1,2\n"), SchemaError);
  EXPECT_THROW(parse("ratee,rating\n1,2\n", {"g"}), SchemaError);
  EXPECT_THROW(parse(""), SchemaError);
  try {
    parse("ratee,rating\n1,2\n1,abc\n");
    FAIL() << "expected ParseError";
  } catch (ParseError const& e) {
    EXPECT_EQ(e.line, 3u);
  }
  EXPECT_THROW(parse("ratee,rating\n1,2,3\n"), ParseError);
  EXPECT_THROW(parse("ratee,rating,g\n1,2,a\n2,2,a\n", {"g"}), ValidationError); // one level only
  EXPECT_THROW(parse("ratee,rating,g\n1,2,a\n2,2,b\n3,2,c\n", {"g"}), ValidationError);
}

TEST(Csv, QuotedFieldsAndBom) {
  auto t = parse("\xEF\xBB\xBFratee,rating,g\n\"a,1\",1.5,\"x\"\"y\"\n\"a,1\",2,\"x\"\"y\"\nb,3,z\n", {"g"});
  EXPECT_EQ(t.n_ratees(), 2u);
  EXPECT_EQ(t.ratee_labels[0], "a,1");
  EXPECT_EQ(t.levels[0][0], "x\"y");
}

TEST(Csv, LexicographicCoding) {
  // 25 "female" and 47 "male" ratees with three ratings each
  std::string text = "ratee,rating,gender\n";
  for (int i = 0; i < 72; ++i)
    for (int j = 0; j < 3; ++j) text += std::to_string(i) + "," + std::to_string(i + j) + "," + (i < 25 ? "female" : "male") + "\n";
  auto t = parse(text, {"gender"});
  EXPECT_EQ(t.n_ratees(), 72u);
  auto const c = t.level_counts(0);
  EXPECT_EQ(c[0], 25u);
  EXPECT_EQ(c[1], 47u);
  EXPECT_EQ(t.levels[0][0], "female");
  EXPECT_DOUBLE_EQ(t.profiles[0][0], -0.5);
  EXPECT_DOUBLE_EQ(t.profiles[71][0], 0.5);
}

TEST(Csv, RoundTrip) {
  auto cfg = find_scenario("6");
  cfg.ratees_per_group = 7;
  cfg.ratings_per_ratee = 4;
  cfg.seed = 99;
  auto const t = simulate_dataset(cfg);
  std::stringstream buf;
  write_csv(buf, t);
  auto const u = parse_csv(buf, t.schema);
  EXPECT_EQ(u.ratings, t.ratings);
  EXPECT_EQ(u.ratee_ids, t.ratee_ids);
  EXPECT_EQ(u.levels, t.levels);
  ASSERT_EQ(u.profiles.size(), t.profiles.size());
  for (std::size_t i = 0; i < t.profiles.size(); ++i) EXPECT_EQ(u.profiles[i].code(), t.profiles[i].code());
}

TEST(Scenarios, TableContents) {
  auto const rows = scenario_table();
  ASSERT_EQ(rows.size(), 10u);
  auto const s2 = find_scenario("2");
  EXPECT_DOUBLE_EQ(s2.se2, 0.82);
  auto const s82 = find_scenario("8.2");
  EXPECT_DOUBLE_EQ(s82.mu1, -0.2);
  EXPECT_DOUBLE_EQ(s82.sg1, 0.73);
  EXPECT_THROW(find_scenario("9"), std::invalid_argument);
}

TEST(Scenarios, TabulatedIrrAndConstraints) {
  for (auto const& s : scenario_table()) {
    SCOPED_TRACE(s.name);
    double const i1 = irr(s.sg1, s.se1), i2 = irr(s.sg2, s.se2);
    EXPECT_NEAR(i1, s.tabulated_irr1, 0.005);
    EXPECT_NEAR(i2, s.tabulated_irr2, 0.005);
    double const v1 = s.sg1 * s.sg1 + s.se1 * s.se1, v2 = s.sg2 * s.sg2 + s.se2 * s.se2;
    EXPECT_NEAR(0.5 * (v1 + v2), 1.0, 0.015);
    EXPECT_NEAR(0.5 * (i1 + i2), 0.45, 0.015);
  }
}

TEST(Scenarios, TrueSpecAndParameters) {
  EXPECT_EQ(find_scenario("1").true_spec(), (ModelSpec{1, 0, 0, 0}));
  EXPECT_EQ(find_scenario("4.2").true_spec(), (ModelSpec{1, 0, 1, 1}));
  EXPECT_EQ(find_scenario("8.2").true_spec(), ModelSpec::full(1));
  auto const p = find_scenario("8.2").true_parameters();
  EXPECT_NEAR(linked_sd(p.alpha_gamma, p.beta_gamma, CovariateProfile({-0.5})), 0.73, 1e-12);
  EXPECT_NEAR(linked_sd(p.alpha_epsilon, p.beta_epsilon, CovariateProfile({0.5})), 0.81, 1e-12);
  EXPECT_NEAR(linked_mean(p.alpha_mu, p.beta_mu, CovariateProfile({0.5})), 0.2, 1e-12);
}

TEST(Simulate, ShapeAndValidation) {
  auto cfg = find_scenario("1");
  cfg.ratees_per_group = 5;
  cfg.ratings_per_ratee = 3;
  auto const t = simulate_dataset(cfg);
  EXPECT_EQ(t.n_ratees(), 10u);
  EXPECT_EQ(t.n_ratings(), 30u);
  EXPECT_EQ(t.level_counts(0)[0], 5u);
  cfg.ratees_per_group = 0;
  EXPECT_THROW(simulate_dataset(cfg), std::invalid_argument);
  cfg.ratees_per_group = 5;
  cfg.sg1 = 0;
  EXPECT_THROW(simulate_dataset(cfg), std::invalid_argument);
}

TEST(Simulate, VarianceComponentsRecovered) {
  auto cfg = find_scenario("1");
  cfg.ratees_per_group = 10000;
  cfg.ratings_per_ratee = 3;
  cfg.seed = 2024;
  auto const t = simulate_dataset(cfg);
  for (double level : {-0.5, 0.5}) {
    auto const g = group_moments(t, level, 0.67, 0.74);
    EXPECT_NEAR(g.var_gamma, 0.67 * 0.67, 3 * g.se_gamma);
    EXPECT_NEAR(g.var_epsilon, 0.74 * 0.74, 3 * g.se_epsilon);
  }
}

TEST(Simulate, ZeroStructuralSdLimit) {
  auto cfg = find_scenario("1");
  cfg.sg1 = cfg.sg2 = 0;
  cfg.ratees_per_group = 10000;
  cfg.ratings_per_ratee = 3;
  cfg.seed = 5;
  auto const t = detail::simulate_scenario_unchecked(cfg);
  auto const g = group_moments(t, -0.5, 0.0, 0.74);
  EXPECT_NEAR(g.var_gamma, 0.0, 3 * g.se_gamma);
}

TEST(DataProperty, Deterministic) {
  auto cfg = find_scenario("4.2");
  cfg.ratees_per_group = 20;
  cfg.ratings_per_ratee = 3;
  cfg.seed = 17;
  auto const a = simulate_dataset(cfg), b = simulate_dataset(cfg);
  EXPECT_EQ(a.ratings, b.ratings);
  cfg.seed = 18;
  EXPECT_NE(simulate_dataset(cfg).ratings, a.ratings);
}

TEST(DataProperty, LabelSwapDistribution) {
  // swapping group parameters swaps the group moments
  auto cfg = find_scenario("4.2");
  cfg.ratees_per_group = 8000;
  cfg.ratings_per_ratee = 3;
  cfg.seed = 31;
  auto sw = cfg;
  std::swap(sw.sg1, sw.sg2);
  std::swap(sw.se1, sw.se2);
  sw.seed = 32;
  auto const a = simulate_dataset(cfg), b = simulate_dataset(sw);
  auto const ga = group_moments(a, -0.5, cfg.sg1, cfg.se1);
  auto const gb = group_moments(b, 0.5, sw.sg2, sw.se2);
  EXPECT_NEAR(ga.var_gamma, gb.var_gamma, 3 * std::sqrt(2.0) * ga.se_gamma);
  EXPECT_NEAR(ga.var_epsilon, gb.var_epsilon, 3 * std::sqrt(2.0) * ga.se_epsilon);
}

TEST(DataProperty, SimulateLikeKeepsDesign) {
  auto cfg = find_scenario("3");
  cfg.ratees_per_group = 6;
  cfg.ratings_per_ratee = 2;
  auto const t = simulate_dataset(cfg);
  auto const u = simulate_like(t, cfg.true_parameters(), Stream(4));
  EXPECT_EQ(u.ratee_ids, t.ratee_ids);
  EXPECT_EQ(u.ratee_labels, t.ratee_labels);
  EXPECT_NE(u.ratings, t.ratings);
}

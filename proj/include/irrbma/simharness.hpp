#ifndef IRRBMA_SIMHARNESS_HPP
#define IRRBMA_SIMHARNESS_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "irrbma/averaging.hpp"
#include "irrbma/data.hpp"
#include "irrbma/evidence.hpp"
#include "irrbma/likelihood.hpp"
#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"
#include "irrbma/sampler.hpp"

namespace irrbma {

/// Estimation strategies compared in the study. Selection methods pick one
/// model; averaging methods weight all of them.
enum class Method {
  bf,          // highest posterior model probability
  bma,         // posterior-probability weights
  aic,
  bic,
  aic_weights,
  bic_weights,
  waic,
  loo,
  pseudo_bma,
  stacking,
  forward,     // stepwise LRT selection
  backward,
  full,        // unrestricted model, posterior means
};

inline constexpr std::array kAllMethods{Method::bf,     Method::bma,        Method::aic,      Method::bic,
                                        Method::aic_weights, Method::bic_weights, Method::waic, Method::loo,
                                        Method::pseudo_bma, Method::stacking, Method::forward, Method::backward,
                                        Method::full};

inline char const* to_string(Method m) {
  switch (m) {
  case Method::bf: return "bf";
  case Method::bma: return "bma";
  case Method::aic: return "aic";
  case Method::bic: return "bic";
  case Method::aic_weights: return "aic_weights";
  case Method::bic_weights: return "bic_weights";
  case Method::waic: return "waic";
  case Method::loo: return "loo";
  case Method::pseudo_bma: return "pseudo_bma";
  case Method::stacking: return "stacking";
  case Method::forward: return "forward";
  case Method::backward: return "backward";
  case Method::full: return "full";
  }
  return "?";
}

inline Method parse_method(std::string const& s) {
  for (auto m : kAllMethods)
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

inline bool is_selection(Method m) {
  switch (m) {
  case Method::bf:
  case Method::aic:
  case Method::bic:
  case Method::waic:
  case Method::loo:
  case Method::forward:
  case Method::backward: return true;
  default: return false;
  }
}

enum class Quantity { mean, structural_sd, residual_sd, irr };

inline char const* to_string(Quantity q) {
  switch (q) {
  case Quantity::mean: return "mean";
  case Quantity::structural_sd: return "structural_sd";
  case Quantity::residual_sd: return "residual_sd";
  case Quantity::irr: return "irr";
  }
  return "?";
}

inline constexpr std::array kAllQuantities{Quantity::mean, Quantity::structural_sd, Quantity::residual_sd, Quantity::irr};

/// Per-profile values of the four scored quantities (group 1 first).
struct GroupEstimates {
  std::array<std::vector<double>, 4> values;

  std::vector<double>& operator[](Quantity q) { return values[static_cast<std::size_t>(q)]; }
  std::vector<double> const& operator[](Quantity q) const { return values[static_cast<std::size_t>(q)]; }

  static GroupEstimates of(ParameterVector const& p) {
    GroupEstimates g;
    for (auto const& prof : all_profiles(p.beta_mu.size())) {
      double const sg = linked_sd(p.alpha_gamma, p.beta_gamma, prof);
      double const se = linked_sd(p.alpha_epsilon, p.beta_epsilon, prof);
      g[Quantity::mean].push_back(linked_mean(p.alpha_mu, p.beta_mu, prof));
      g[Quantity::structural_sd].push_back(sg);
      g[Quantity::residual_sd].push_back(se);
      g[Quantity::irr].push_back(irr(sg, se));
    }
    return g;
  }

  /// Weighted combination of per-model estimates.
  static GroupEstimates average(std::vector<GroupEstimates> const& parts, std::vector<double> const& w) {
    GroupEstimates g;
    for (auto q : kAllQuantities) {
      g[q].assign(parts.at(0)[q].size(), 0.0);
      for (std::size_t m = 0; m < parts.size(); ++m)
        if (w[m] != 0)
          for (std::size_t i = 0; i < g[q].size(); ++i) g[q][i] += w[m] * parts[m][q][i];
    }
    return g;
  }
};

/// Posterior means of the group quantities.
inline GroupEstimates posterior_group_means(PosteriorDraws const& d) {
  GroupEstimates acc;
  for (std::size_t r = 0; r < d.size(); ++r) {
    auto const g = GroupEstimates::of(d.parameters(r));
    for (auto q : kAllQuantities) {
      if (acc[q].empty()) acc[q].assign(g[q].size(), 0.0);
      for (std::size_t i = 0; i < g[q].size(); ++i) acc[q][i] += g[q][i];
    }
  }
  for (auto q : kAllQuantities)
    for (auto& v : acc[q]) v /= static_cast<double>(d.size());
  return acc;
}

enum class SelectionOutcome { correct, more_complex, other };

/// Correct iff all masks match; more complex iff every mask is a superset
/// of the generating one and at least one strictly so.
inline SelectionOutcome score_selection(ModelSpec const& selected, ModelSpec const& truth) {
  if (selected == truth) return SelectionOutcome::correct;
  for (auto c : {Component::mean, Component::structural, Component::residual})
    if ((selected.mask(c) & truth.mask(c)) != truth.mask(c)) return SelectionOutcome::other;
  return SelectionOutcome::more_complex;
}

struct Condition {
  ScenarioConfig scenario; // I and J filled in, seed unused
  std::size_t ratees = 0;  // I per group
  std::size_t ratings = 0; // J per ratee
};

struct StudyPlan {
  std::vector<std::string> scenarios{"1", "4.2"};
  std::vector<std::size_t> ratees{50, 200};
  std::vector<std::size_t> ratings{3};
  std::size_t replications = 200;
  std::vector<Method> methods{Method::bf, Method::bma, Method::aic, Method::bic, Method::full};
  std::uint64_t seed = 1;
  PriorConfig prior{};
  SamplerConfig sampler{};
  std::size_t pointwise_draws = 1000; // thinning for WAIC/LOO
  std::size_t workers = 0;            // 0: hardware concurrency

  SamplerConfig default_sampler() const { return sampler; }

  void validate() const {
    if (scenarios.empty() || ratees.empty() || ratings.empty() || methods.empty())
      throw std::invalid_argument("StudyPlan: selections must be nonempty");
    if (replications < 1) throw std::invalid_argument("StudyPlan: replications must be at least 1");
    for (auto const& s : scenarios) (void)find_scenario(s);
    for (auto i : ratees)
      if (i < 2) throw std::invalid_argument("StudyPlan: at least 2 ratees per group required");
    for (auto j : ratings)
      if (j < 1) throw std::invalid_argument("StudyPlan: at least 1 rating per ratee required");
    prior.validate();
    sampler.validate();
  }

  [[nodiscard]] std::vector<Condition> conditions() const {
    std::vector<Condition> out;
    for (auto const& name : scenarios)
      for (auto i : ratees)
        for (auto j : ratings) {
          Condition c{find_scenario(name), i, j};
          c.scenario.ratees_per_group = i;
          c.scenario.ratings_per_ratee = j;
          out.push_back(std::move(c));
        }
    return out;
  }

  [[nodiscard]] bool uses(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

struct MethodOutcome {
  Method method = Method::bf;
  std::optional<ModelSpec> selected;
  GroupEstimates estimates;
};

struct ReplicationRecord {
  std::size_t condition = 0;
  std::size_t replication = 0;
  bool failed = false;
  std::string error;
  std::vector<MethodOutcome> outcomes;
  std::optional<std::array<double, 3>> inclusion_bf; // mean, structural, residual
  std::size_t nonconverged_models = 0;
  std::size_t loo_flags = 0;

  [[nodiscard]] MethodOutcome const* find(Method m) const {
    for (auto const& o : outcomes)
      if (o.method == m) return &o;
    return nullptr;
  }
};

struct StudyResults {
  StudyPlan plan;
  std::vector<Condition> conditions;
  std::vector<ReplicationRecord> records; // condition-major, replication-minor
};

namespace detail {

inline ReplicationRecord run_replication(StudyPlan const& plan, Condition const& cond, std::size_t ci,
                                         std::size_t rep) {
  ReplicationRecord rec;
  rec.condition = ci;
  rec.replication = rep;
  Stream s = Stream(plan.seed).substream(ci).substream(rep);
  ScenarioConfig sc = cond.scenario;
  sc.seed = s();
  std::uint64_t const sampler_seed = s();
  auto const data = simulate_dataset(sc);
  SufficientStats const stats(data);
  auto const models = enumerate_models(data.schema);
  std::size_t const m_count = models.size();

  auto wants = [&](std::initializer_list<Method> ms) {
    return std::any_of(ms.begin(), ms.end(), [&](Method m) { return plan.uses(m); });
  };
  bool const bayes = wants({Method::bf, Method::bma, Method::waic, Method::loo, Method::pseudo_bma, Method::stacking,
                            Method::full});
  bool const freq = wants({Method::aic, Method::bic, Method::aic_weights, Method::bic_weights});
  bool const predictive = wants({Method::waic, Method::loo, Method::pseudo_bma, Method::stacking});

  std::vector<PosteriorDraws> draws;
  std::vector<GroupEstimates> post_means;
  std::vector<ModelEvidence> ev;
  if (bayes) {
    for (std::size_t m = 0; m < m_count; ++m) {
      SamplerConfig cfg = plan.sampler;
      cfg.parallel = false;
      cfg.seed = Stream(sampler_seed).substream(m)();
      draws.push_back(sample_posterior(stats, models[m], plan.prior, cfg));
      if (!draws.back().converged) ++rec.nonconverged_models;
      post_means.push_back(posterior_group_means(draws.back()));
    }
  }
  if (wants({Method::bf, Method::bma})) {
    for (std::size_t m = 0; m < m_count; ++m) {
      auto const b = bridge_logml(draws[m], stats, models[m], plan.prior, sampler_seed);
      ev.push_back({models[m], b.log_marglik, b.mcse, 1.0 / static_cast<double>(m_count), 0});
    }
    ev = posterior_model_probs(std::move(ev));
    std::array<double, 3> bfs{};
    for (auto c : {Component::mean, Component::structural, Component::residual})
      bfs[static_cast<std::size_t>(c)] = inclusion_bf(ev, {c, 0}).bf_inclusion;
    rec.inclusion_bf = bfs;
  }

  auto add = [&](Method m, std::optional<ModelSpec> sel, GroupEstimates est) {
    if (plan.uses(m)) rec.outcomes.push_back({m, sel, std::move(est)});
  };

  if (plan.uses(Method::bf)) {
    std::vector<double> pp;
    for (auto const& e : ev) pp.push_back(e.posterior_prob);
    auto const b = select_best(pp, models, true);
    add(Method::bf, models[b], post_means[b]);
  }
  if (plan.uses(Method::bma)) add(Method::bma, std::nullopt, GroupEstimates::average(post_means, bma_weights(ev).weights));
  if (plan.uses(Method::full)) add(Method::full, std::nullopt, post_means.back());

  if (freq) {
    std::vector<FrequentistFit> fits;
    std::vector<GroupEstimates> est;
    std::vector<double> aic, bic;
    for (auto const& spec : models) {
      fits.push_back(ml_fit(stats, spec));
      est.push_back(GroupEstimates::of(fits.back().estimates));
      aic.push_back(fits.back().aic);
      bic.push_back(fits.back().bic);
    }
    if (plan.uses(Method::aic)) {
      auto const b = select_best(aic, models, false);
      add(Method::aic, models[b], est[b]);
    }
    if (plan.uses(Method::bic)) {
      auto const b = select_best(bic, models, false);
      add(Method::bic, models[b], est[b]);
    }
    add(Method::aic_weights, std::nullopt, GroupEstimates::average(est, ic_weights(aic, WeightMethod::aic).weights));
    add(Method::bic_weights, std::nullopt, GroupEstimates::average(est, ic_weights(bic, WeightMethod::bic).weights));
  }

  for (auto dir : {Method::forward, Method::backward}) {
    if (!plan.uses(dir)) continue;
    auto const r = stepwise(stats, dir == Method::forward ? StepDirection::forward : StepDirection::backward);
    add(dir, r.spec, GroupEstimates::of(ml_fit(stats, r.spec).estimates));
  }

  if (predictive) {
    std::vector<double> waics, loos;
    std::vector<std::vector<double>> lpd;
    for (std::size_t m = 0; m < m_count; ++m) {
      Stream pw = Stream(sampler_seed, 0x9017ULL).substream(m);
      auto const ll = pointwise_matrix(data, draws[m], pw, plan.pointwise_draws);
      waics.push_back(waic(ll));
      auto l = loo(ll);
      rec.loo_flags += l.flag_count;
      loos.push_back(l.elpd);
      lpd.push_back(std::move(l.pointwise));
    }
    if (plan.uses(Method::waic)) {
      auto const b = select_best(waics, models, true);
      add(Method::waic, models[b], post_means[b]);
    }
    if (plan.uses(Method::loo)) {
      auto const b = select_best(loos, models, true);
      add(Method::loo, models[b], post_means[b]);
    }
    add(Method::pseudo_bma, std::nullopt, GroupEstimates::average(post_means, pseudo_bma_weights(loos).weights));
    if (plan.uses(Method::stacking))
      add(Method::stacking, std::nullopt, GroupEstimates::average(post_means, stacking_weights(lpd).weights));
  }

  std::vector<MethodOutcome> ordered;
  for (auto m : plan.methods)
    for (auto const& o : rec.outcomes)
      if (o.method == m) ordered.push_back(o);
  rec.outcomes = std::move(ordered);
  return rec;
}

} // namespace detail

/// Runs every condition x replication on a worker pool. Replication
/// (c, r) draws from substream r of substream c of the master seed, so
/// results do not depend on scheduling.
inline StudyResults run_study_records(StudyPlan const& plan) {
  plan.validate();
  StudyResults res;
  res.plan = plan;
  res.conditions = plan.conditions();
  std::size_t const total = res.conditions.size() * plan.replications;
  res.records.resize(total);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t u = next++; u < total; u = next++) {
      std::size_t const ci = u / plan.replications, rep = u % plan.replications;
      try {
        res.records[u] = detail::run_replication(plan, res.conditions[ci], ci, rep);
      } catch (std::exception const& e) {
        ReplicationRecord f;
        f.condition = ci;
        f.replication = rep;
        f.failed = true;
        f.error = e.what();
        res.records[u] = std::move(f);
      }
    }
  };
  std::size_t workers = plan.workers ? plan.workers : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, total);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return res;
}

inline constexpr char const* kPooled = "pooled";

struct SelectionRow {
  std::string scenario; // or "pooled"
  std::size_t ratees = 0, ratings = 0;
  Method method = Method::bf;
  std::size_t n = 0;
  double correct = 0, correct_se = 0;
  double more_complex = 0, more_complex_se = 0;
  double other = 0, other_se = 0;
};

struct RmseRow {
  std::string scenario;
  std::size_t ratees = 0, ratings = 0;
  Method method = Method::bf;
  Quantity quantity = Quantity::residual_sd;
  std::size_t n = 0;
  double rmse = 0, rmse_se = 0;
  double bias2_over_mse = 0;
};

struct CalibrationRow {
  std::size_t ratees = 0, ratings = 0; // 0 for rows pooled over sample sizes
  Component component = Component::mean;
  bool difference = false; // truth class
  std::size_t n = 0;
  double favoring = 0, favoring_se = 0;
  double misleading = 0, misleading_se = 0;
};

struct ConditionStatus {
  std::string scenario;
  std::size_t ratees = 0, ratings = 0;
  std::size_t replications = 0, failures = 0, nonconverged_fits = 0;
  bool flagged = false; // more than 5% failed replications
};

struct SimulationMetrics {
  std::vector<SelectionRow> selection;
  std::vector<RmseRow> rmse;
  std::vector<CalibrationRow> calibration;
  std::vector<ConditionStatus> status;
  std::vector<std::string> notes;
};

namespace detail {

inline double proportion_se(double p, std::size_t n) {
  return n > 0 ? std::sqrt(p * (1 - p) / static_cast<double>(n)) : 0.0;
}

/// Groups of condition indices: one per condition, then pooled over
/// scenarios at each (I, J).
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> condition_groups(std::vector<Condition> const& cs) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> g;
  for (std::size_t i = 0; i < cs.size(); ++i) g.push_back({cs[i].scenario.name, {i}});
  std::set<std::string> names;
  for (auto const& c : cs) names.insert(c.scenario.name);
  if (names.size() > 1) {
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by;
    for (std::size_t i = 0; i < cs.size(); ++i) by[{cs[i].ratees, cs[i].ratings}].push_back(i);
    for (auto& [k, v] : by) g.push_back({kPooled, v});
  }
  return g;
}

/// Squared-error statistics of one quantity over records. Group-specific
/// values are scored per group and pooled.
inline std::optional<RmseRow> rmse_row(std::vector<ReplicationRecord> const& records,
                                       std::vector<Condition> const& conds, std::vector<std::size_t> const& idx,
                                       Method m, Quantity q) {
  std::set<std::size_t> in(idx.begin(), idx.end());
  std::vector<double> per_rep; // mean squared error across groups per replication
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> group; // (cond, g) -> (sum err, sum sq)
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> group_n;
  for (auto const& r : records) {
    if (r.failed || !in.count(r.condition)) continue;
    auto const* o = r.find(m);
    if (!o) continue;
    auto const truth = GroupEstimates::of(conds[r.condition].scenario.true_parameters());
    auto const& est = o->estimates[q];
    auto const& tru = truth[q];
    double sq = 0;
    for (std::size_t g = 0; g < est.size(); ++g) {
      double const e = est[g] - tru[g];
      sq += e * e;
      auto& acc = group[{r.condition, g}];
      acc.first += e;
      acc.second += e * e;
      ++group_n[{r.condition, g}];
    }
    per_rep.push_back(sq / static_cast<double>(est.size()));
  }
  if (per_rep.empty()) return std::nullopt;
  RmseRow row;
  row.method = m;
  row.quantity = q;
  row.n = per_rep.size();
  double const n = static_cast<double>(per_rep.size());
  double mse = 0;
  for (double v : per_rep) mse += v;
  mse /= n;
  double var = 0;
  for (double v : per_rep) var += (v - mse) * (v - mse);
  var = per_rep.size() > 1 ? var / (n - 1) : 0.0;
  row.rmse = std::sqrt(mse);
  row.rmse_se = row.rmse > 0 ? std::sqrt(var / n) / (2 * row.rmse) : 0.0;
  double bias2 = 0, mse_g = 0;
  for (auto const& [k, acc] : group) {
    double const gn = static_cast<double>(group_n[k]);
    bias2 += (acc.first / gn) * (acc.first / gn);
    mse_g += acc.second / gn;
  }
  row.bias2_over_mse = mse_g > 0 ? std::min(1.0, bias2 / mse_g) : 0.0;
  return row;
}

} // namespace detail

inline std::vector<SelectionRow> selection_table(StudyResults const& res) {
  std::vector<SelectionRow> rows;
  for (auto const& [name, idx] : detail::condition_groups(res.conditions)) {
    std::set<std::size_t> in(idx.begin(), idx.end());
    for (auto m : res.plan.methods) {
      if (!is_selection(m)) continue;
      SelectionRow row;
      row.scenario = name;
      row.ratees = res.conditions[idx[0]].ratees;
      row.ratings = res.conditions[idx[0]].ratings;
      row.method = m;
      std::array<std::size_t, 3> counts{};
      for (auto const& r : res.records) {
        if (r.failed || !in.count(r.condition)) continue;
        auto const* o = r.find(m);
        if (!o || !o->selected) continue;
        ++counts[static_cast<std::size_t>(score_selection(*o->selected, res.conditions[r.condition].scenario.true_spec()))];
        ++row.n;
      }
      if (row.n == 0) continue;
      double const n = static_cast<double>(row.n);
      row.correct = static_cast<double>(counts[0]) / n;
      row.more_complex = static_cast<double>(counts[1]) / n;
      row.other = static_cast<double>(counts[2]) / n;
      row.correct_se = detail::proportion_se(row.correct, row.n);
      row.more_complex_se = detail::proportion_se(row.more_complex, row.n);
      row.other_se = detail::proportion_se(row.other, row.n);
      rows.push_back(row);
    }
  }
  return rows;
}

/// RMSE of one quantity per method and condition, plus rows pooled over
/// scenarios at each sample size.
inline std::vector<RmseRow> rmse_table(StudyResults const& res, Quantity q) {
  std::vector<RmseRow> rows;
  for (auto const& [name, idx] : detail::condition_groups(res.conditions))
    for (auto m : res.plan.methods)
      if (auto row = detail::rmse_row(res.records, res.conditions, idx, m, q)) {
        row->scenario = name;
        row->ratees = res.conditions[idx[0]].ratees;
        row->ratings = res.conditions[idx[0]].ratings;
        rows.push_back(*row);
      }
  return rows;
}

/// Inclusion-BF calibration per component and truth class, at each
/// sample size and pooled over all of them.
inline std::vector<CalibrationRow> bf_calibration(StudyResults const& res, std::vector<std::string>* notes = nullptr) {
  std::vector<CalibrationRow> rows;
  std::set<std::pair<std::size_t, std::size_t>> sizes;
  for (auto const& c : res.conditions) sizes.insert({c.ratees, c.ratings});
  std::vector<std::pair<std::size_t, std::size_t>> keys(sizes.begin(), sizes.end());
  keys.push_back({0, 0});
  for (auto [ii, jj] : keys)
    for (auto comp : {Component::mean, Component::structural, Component::residual})
      for (bool diff : {true, false}) {
        CalibrationRow row;
        row.ratees = ii;
        row.ratings = jj;
        row.component = comp;
        row.difference = diff;
        std::size_t fav = 0, mis = 0;
        for (auto const& r : res.records) {
          if (r.failed || !r.inclusion_bf) continue;
          auto const& c = res.conditions[r.condition];
          if (ii != 0 && (c.ratees != ii || c.ratings != jj)) continue;
          if ((c.scenario.true_spec().mask(comp) != 0) != diff) continue;
          double const bf = (*r.inclusion_bf)[static_cast<std::size_t>(comp)];
          ++row.n;
          if (diff ? bf > 1 : bf < 1) ++fav;
          if (diff ? bf < 0.1 : bf > 10) ++mis;
        }
        if (row.n == 0) {
          if (notes)
            notes->push_back(std::string("no replications for ") + to_string(comp) + (diff ? " difference" : " no-difference") +
                             " class" + (ii ? " at I=" + std::to_string(ii) + ", J=" + std::to_string(jj) : ""));
          continue;
        }
        row.favoring = static_cast<double>(fav) / static_cast<double>(row.n);
        row.misleading = static_cast<double>(mis) / static_cast<double>(row.n);
        row.favoring_se = detail::proportion_se(row.favoring, row.n);
        row.misleading_se = detail::proportion_se(row.misleading, row.n);
        rows.push_back(row);
      }
  return rows;
}

inline std::vector<ConditionStatus> condition_status(StudyResults const& res) {
  std::vector<ConditionStatus> out;
  for (auto const& c : res.conditions) out.push_back({c.scenario.name, c.ratees, c.ratings, 0, 0, 0, false});
  for (auto const& r : res.records) {
    auto& s = out[r.condition];
    ++s.replications;
    if (r.failed) ++s.failures;
    s.nonconverged_fits += r.nonconverged_models;
  }
  for (auto& s : out) s.flagged = s.replications > 0 && static_cast<double>(s.failures) > 0.05 * static_cast<double>(s.replications);
  return out;
}

inline SimulationMetrics summarize_study(StudyResults const& input) {
  // canonical record order keeps floating-point sums reproducible
  StudyResults res = input;
  std::sort(res.records.begin(), res.records.end(), [](auto const& a, auto const& b) {
    return std::pair{a.condition, a.replication} < std::pair{b.condition, b.replication};
  });
  SimulationMetrics m;
  m.selection = selection_table(res);
  for (auto q : kAllQuantities) {
    auto rows = rmse_table(res, q);
    m.rmse.insert(m.rmse.end(), rows.begin(), rows.end());
  }
  if (res.plan.uses(Method::bf) || res.plan.uses(Method::bma)) m.calibration = bf_calibration(res, &m.notes);
  m.status = condition_status(res);
  for (auto const& s : m.status)
    if (s.flagged)
      m.notes.push_back("condition " + s.scenario + " I=" + std::to_string(s.ratees) + " J=" + std::to_string(s.ratings) +
                        ": more than 5% of replications failed");
  return m;
}

inline SimulationMetrics run_study(StudyPlan const& plan) { return summarize_study(run_study_records(plan)); }

/// Long-format CSV: one row per condition x method x metric.
inline void write_metrics_csv(std::ostream& out, SimulationMetrics const& m) {
  out << "table,scenario,I,J,method,metric,value,se\n";
  auto const prec = out.precision();
  out << std::setprecision(17);
  auto line = [&](char const* table, std::string const& sc, std::size_t i, std::size_t j, std::string const& method,
                  std::string const& metric, double v, double se) {
    out << table << ',' << sc << ',' << i << ',' << j << ',' << method << ',' << metric << ',' << v << ',' << se << '\n';
  };
  for (auto const& r : m.selection) {
    line("selection", r.scenario, r.ratees, r.ratings, to_string(r.method), "correct", r.correct, r.correct_se);
    line("selection", r.scenario, r.ratees, r.ratings, to_string(r.method), "more_complex", r.more_complex, r.more_complex_se);
    line("selection", r.scenario, r.ratees, r.ratings, to_string(r.method), "other", r.other, r.other_se);
  }
  for (auto const& r : m.rmse) {
    line("rmse", r.scenario, r.ratees, r.ratings, to_string(r.method), std::string("rmse_") + to_string(r.quantity), r.rmse,
         r.rmse_se);
    line("rmse", r.scenario, r.ratees, r.ratings, to_string(r.method), std::string("bias2_over_mse_") + to_string(r.quantity),
         r.bias2_over_mse, 0.0);
  }
  for (auto const& r : m.calibration) {
    std::string const sc = r.ratees ? "all" : kPooled;
    std::string const cls = std::string(to_string(r.component)) + (r.difference ? "_difference" : "_no_difference");
    line("calibration", sc, r.ratees, r.ratings, "bma", "favoring_" + cls, r.favoring, r.favoring_se);
    line("calibration", sc, r.ratees, r.ratings, "bma", "misleading_" + cls, r.misleading, r.misleading_se);
  }
  for (auto const& s : m.status) {
    line("status", s.scenario, s.ratees, s.ratings, "", "failures", static_cast<double>(s.failures), 0.0);
    line("status", s.scenario, s.ratees, s.ratings, "", "nonconverged_fits", static_cast<double>(s.nonconverged_fits), 0.0);
  }
  out.precision(prec);
}

} // namespace irrbma

#endif // IRRBMA_SIMHARNESS_HPP

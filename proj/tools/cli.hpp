#ifndef IRRBMA_TOOLS_CLI_HPP
#define IRRBMA_TOOLS_CLI_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "irrbma/irrbma.hpp"

namespace irrbma::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitWarnings = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::string data;
  std::vector<std::string> covariates;
  bool mean_covariates = true;
  std::vector<std::string> priors{"medium"};
  SamplerConfig sampler{};
  std::vector<std::string> methods;
  std::vector<std::string> scenarios{"1", "4.2"};
  std::vector<std::size_t> ratees{50, 200};
  std::vector<std::size_t> ratings{3};
  std::size_t replications = 200;
  std::uint64_t seed = 1;
  std::string out = "irrbma_out";
  std::size_t bootstrap = 500;
  std::size_t workers = 0;
  std::size_t pointwise_draws = 1000;
  bool full_plan = false;
};

namespace detail {

inline std::vector<std::string> split_list(std::string const& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = irrbma::detail::trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline std::size_t parse_count(std::string const& key, std::string const& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (std::exception const&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') throw UsageError("--" + key + ": expected a nonnegative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline bool parse_switch(std::string const& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw UsageError("--" + key + ": expected on or off, got '" + v + "'");
}

inline std::string json_to_flag(json const& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "on" : "off";
  if (v.is_array()) {
    std::string s;
    for (auto const& e : v) s += (s.empty() ? "" : ",") + json_to_flag(e);
    return s;
  }
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw UsageError("config: unsupported value " + v.dump());
}

} // namespace detail

/// Applies one flag-style setting.
inline void apply_setting(RunConfig& c, std::string const& key, std::string const& v) {
  using detail::parse_count;
  if (key == "data") c.data = v;
  else if (key == "covariates") c.covariates = detail::split_list(v);
  else if (key == "mean-covariates") c.mean_covariates = detail::parse_switch(key, v);
  else if (key == "prior") c.priors = detail::split_list(v);
  else if (key == "chains") c.sampler.chains = parse_count(key, v);
  else if (key == "warmup") c.sampler.warmup = parse_count(key, v);
  else if (key == "draws") c.sampler.draws_per_chain = parse_count(key, v);
  else if (key == "methods") c.methods = detail::split_list(v);
  else if (key == "scenarios") c.scenarios = detail::split_list(v);
  else if (key == "I" || key == "J") {
    std::vector<std::size_t> xs;
    for (auto const& s : detail::split_list(v)) xs.push_back(parse_count(key, s));
    (key == "I" ? c.ratees : c.ratings) = xs;
  } else if (key == "replications") c.replications = parse_count(key, v);
  else if (key == "seed") c.seed = parse_count(key, v);
  else if (key == "out") c.out = v;
  else if (key == "bootstrap") c.bootstrap = parse_count(key, v);
  else if (key == "workers") c.workers = parse_count(key, v);
  else if (key == "pointwise-draws") c.pointwise_draws = parse_count(key, v);
  else if (key == "full-plan") c.full_plan = detail::parse_switch(key, v);
  else throw UsageError("unknown setting '" + key + "'");
}

/// Flat JSON object whose keys mirror the long flag names.
inline void apply_config_file(RunConfig& c, fs::path const& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (json::exception const& e) {
    throw UsageError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  for (auto const& [k, v] : j.items()) apply_setting(c, k, detail::json_to_flag(v));
}

/// "small", "medium", "large" or an explicit positive SD for the
/// coefficient priors.
inline PriorConfig parse_prior(std::string const& s) {
  if (s == "small" || s == "medium" || s == "large") return PriorConfig::preset(s);
  auto const v = irrbma::detail::parse_double(s);
  if (!v || !(*v > 0)) throw UsageError("--prior: expected small, medium, large or a positive number, got '" + s + "'");
  PriorConfig p;
  p.sigma_beta = *v;
  return p;
}

namespace fmt {

inline std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fix2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  return s == "-0.00" ? "0.00" : s;
}

/// Two decimals, switching to scientific notation for extreme values.
inline std::string bf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  if (v != 0 && (v >= 1e4 || v < 1e-2)) std::snprintf(buf, sizeof buf, "%.2e", v);
  else std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

} // namespace fmt

/// Minimal CSV table reader for bundle files.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t col(std::string const& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw UsageError("bundle table lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  [[nodiscard]] std::string const& at(std::size_t row, std::string const& name) const { return rows[row][col(name)]; }
  [[nodiscard]] double num(std::size_t row, std::string const& name) const {
    auto v = irrbma::detail::parse_double(at(row, name));
    return v ? *v : std::nan("");
  }
};

inline std::optional<CsvTable> read_csv_table(fs::path const& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  CsvTable t;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = irrbma::detail::split_csv_line(line, no);
    if (t.header.empty()) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
  }
  return t;
}

class CsvWriter {
public:
  CsvWriter(fs::path const& path, std::vector<std::string> const& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(std::vector<std::string> const& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << irrbma::detail::csv_quote(cells[i]);
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

inline std::string profile_label(CovariateProfile const& p, RatingsTable const& t) {
  if (p.size() == 0) return "all";
  std::string s;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k) s += " & ";
    s += t.schema.names()[k] + "=" + t.levels[k][p[k] < 0 ? 0 : 1];
  }
  return s;
}

inline std::string delta_label(std::size_t k, RatingsTable const& t) {
  return t.schema.names()[k] + ": " + t.levels[k][0] + " - " + t.levels[k][1];
}

// ---------------------------------------------------------------- report

namespace detail {

inline std::string md_row(std::vector<std::string> const& cells) {
  std::string s = "|";
  for (auto const& c : cells) s += " " + c + " |";
  return s + "\n";
}

inline std::string md_rule(std::size_t n) {
  std::string s = "|";
  for (std::size_t i = 0; i < n; ++i) s += "---|";
  return s + "\n";
}

inline void render_fit(std::ostringstream& md, fs::path const& dir, json const& summary) {
  md << "# IRR model comparison\n\n";
  md << "Data: `" << summary.value("data", std::string{}) << "` with " << summary.value("n_ratees", 0) << " ratees and "
     << summary.value("n_ratings", 0) << " ratings. " << summary.value("models_fit", 0) << " models fit under prior "
     << summary.value("prior", std::string{}) << ".\n\n";

  if (auto const& w = summary["warnings"]; w.is_array() && !w.empty()) {
    md << "## Warnings\n\n";
    for (auto const& x : w) md << "- **" << x.get<std::string>() << "**\n";
    md << "\n";
  }

  if (auto t = read_csv_table(dir / "models.csv")) {
    md << "## Models by posterior probability\n\n";
    md << md_row({"rank", "model", "mean", "structural SD", "residual SD", "log marg. lik.", "prior prob", "posterior prob"});
    md << md_rule(8);
    for (std::size_t r = 0; r < std::min<std::size_t>(10, t->rows.size()); ++r)
      md << md_row({t->at(r, "rank"), t->at(r, "model"), t->at(r, "mean"), t->at(r, "structural"), t->at(r, "residual"),
                    fmt::fix2(t->num(r, "log_marglik")), fmt::fix2(t->num(r, "prior_prob")),
                    fmt::fix2(t->num(r, "posterior_prob"))});
    md << "\n";
  }

  if (auto t = read_csv_table(dir / "weights.csv"); t && !t->rows.empty()) {
    std::vector<std::string> methods;
    std::map<std::string, std::map<std::string, std::string>> cell;
    std::vector<std::string> models;
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      auto const& m = t->at(r, "method");
      auto const& id = t->at(r, "model");
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
      if (std::find(models.begin(), models.end(), id) == models.end()) models.push_back(id);
      cell[id][m] = fmt::fix2(t->num(r, "weight")) + (t->at(r, "flag").empty() ? "" : "*");
    }
    md << "## Model weights\n\n";
    std::vector<std::string> head{"model"};
    head.insert(head.end(), methods.begin(), methods.end());
    md << md_row(head) << md_rule(head.size());
    for (auto const& id : models) {
      std::vector<std::string> row{id};
      for (auto const& m : methods) row.push_back(cell[id].count(m) ? cell[id][m] : "");
      md << md_row(row);
    }
    md << "\n";
    bool flagged = false;
    for (std::size_t r = 0; r < t->rows.size(); ++r) flagged |= !t->at(r, "flag").empty();
    if (flagged) md << "\\* weight optimization stopped at its iteration cap.\n\n";
  }

  if (auto t = read_csv_table(dir / "inclusion.csv"); t && !t->rows.empty()) {
    md << "## Inclusion Bayes factors\n\n";
    md << md_row({"component", "covariate", "prior odds", "posterior odds", "BF", "evidence"}) << md_rule(6);
    for (std::size_t r = 0; r < t->rows.size(); ++r)
      md << md_row({t->at(r, "component"), t->at(r, "covariate"), fmt::bf(t->num(r, "prior_odds")),
                    fmt::bf(t->num(r, "posterior_odds")), fmt::bf(t->num(r, "bf")), evidence_label(t->num(r, "bf")).text()});
    md << "\n";
  }

  if (auto t = read_csv_table(dir / "irr.csv"); t && !t->rows.empty()) {
    md << "## IRR estimates\n\n";
    md << md_row({"source", "estimate", "quantity", "point", "2.5%", "97.5%"}) << md_rule(6);
    for (std::size_t r = 0; r < t->rows.size(); ++r)
      md << md_row({t->at(r, "source"), t->at(r, "kind"), t->at(r, "quantity"), fmt::fix2(t->num(r, "point")),
                    fmt::fix2(t->num(r, "lower")), fmt::fix2(t->num(r, "upper"))});
    md << "\n";
  }

  if (auto t = read_csv_table(dir / "marginal_means.csv"); t && !t->rows.empty()) {
    md << "## Model-averaged marginal means\n\n";
    md << md_row({"profile", "mean", "structural SD", "residual SD", "IRR"}) << md_rule(5);
    auto iv = [&](std::size_t r, std::string const& q) {
      return fmt::fix2(t->num(r, q)) + " [" + fmt::fix2(t->num(r, q + "_lower")) + ", " + fmt::fix2(t->num(r, q + "_upper")) + "]";
    };
    for (std::size_t r = 0; r < t->rows.size(); ++r)
      md << md_row({t->at(r, "profile"), iv(r, "mu"), iv(r, "sigma_gamma"), iv(r, "sigma_epsilon"), iv(r, "irr")});
    md << "\n";
  }

  if (auto t = read_csv_table(dir / "sensitivity.csv"); t && !t->rows.empty()) {
    md << "## Prior sensitivity\n\n";
    md << md_row({"prior", "kind", "item", "value"}) << md_rule(4);
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      bool const is_bf = t->at(r, "kind") == "inclusion_bf";
      md << md_row({t->at(r, "prior"), t->at(r, "kind"), t->at(r, "item"),
                    is_bf ? fmt::bf(t->num(r, "value")) : fmt::fix2(t->num(r, "value"))});
    }
    md << "\n";
  }
}

inline void render_simulate(std::ostringstream& md, fs::path const& dir, json const& summary) {
  md << "# Simulation study\n\n";
  md << "Replications per condition: " << summary.value("replications", 0) << ". Master seed: " << summary.value("seed", 0)
     << ".\n\n";
  if (auto const& w = summary["warnings"]; w.is_array() && !w.empty()) {
    md << "## Warnings\n\n";
    for (auto const& x : w) md << "- **" << x.get<std::string>() << "**\n";
    md << "\n";
  }
  auto t = read_csv_table(dir / "metrics.csv");
  if (!t) return;
  auto section = [&](std::string const& title, std::string const& table, auto keep) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < t->rows.size(); ++r)
      if (t->at(r, "table") == table && keep(r)) rows.push_back(r);
    if (rows.empty()) return;
    md << "## " << title << "\n\n";
    md << md_row({"scenario", "I", "J", "method", "metric", "value", "SE"}) << md_rule(7);
    for (auto r : rows)
      md << md_row({t->at(r, "scenario"), t->at(r, "I"), t->at(r, "J"), t->at(r, "method"), t->at(r, "metric"),
                    fmt::fix2(t->num(r, "value")), fmt::fix2(t->num(r, "se"))});
    md << "\n";
  };
  section("Model selection (proportions)", "selection", [](std::size_t) { return true; });
  section("RMSE of residual SD estimates", "rmse", [&](std::size_t r) { return t->at(r, "metric") == "rmse_residual_sd"; });
  section("RMSE of IRR estimates", "rmse", [&](std::size_t r) { return t->at(r, "metric") == "rmse_irr"; });
  section("Inclusion Bayes factor calibration", "calibration", [](std::size_t) { return true; });
}

} // namespace detail

/// Renders a bundle directory to markdown.
inline std::string render_report(fs::path const& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw UsageError("no report bundle at " + dir.string() + " (summary.json missing)");
  json summary;
  try {
    summary = json::parse(in);
  } catch (json::exception const& e) {
    throw UsageError(std::string("summary.json: ") + e.what());
  }
  std::ostringstream md;
  if (summary.value("command", std::string{}) == "simulate") detail::render_simulate(md, dir, summary);
  else detail::render_fit(md, dir, summary);
  return md.str();
}

inline int cmd_report(RunConfig const& c, std::ostream& out) {
  auto const text = render_report(c.out);
  std::ofstream(fs::path(c.out) / "report.md") << text;
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------- fit

struct SpaceFit {
  std::vector<ModelSpec> models;
  std::vector<PosteriorDraws> draws;
  std::vector<ModelEvidence> evidence;
  std::vector<std::string> warnings;
  std::vector<std::size_t> nonconverged;
};

inline SpaceFit fit_space(SufficientStats const& stats, std::vector<ModelSpec> const& models, PriorConfig const& prior,
                          SamplerConfig const& sampler, std::uint64_t seed, std::ostream& log) {
  SpaceFit f;
  f.models = models;
  for (std::size_t m = 0; m < models.size(); ++m) {
    SamplerConfig cfg = sampler;
    cfg.seed = Stream(seed, 0x5A4D).substream(model_index(models[m]))();
    f.draws.push_back(sample_posterior(stats, models[m], prior, cfg));
    ModelEvidence e{models[m], -std::numeric_limits<double>::infinity(), std::nan(""), 1.0 / static_cast<double>(models.size()), 0};
    try {
      auto const b = bridge_logml(f.draws.back(), stats, models[m], prior, seed);
      e.log_marglik = b.log_marglik;
      e.log_marglik_mcse = b.mcse;
    } catch (BridgeError const& err) {
      f.warnings.push_back("bridge sampling failed for model " + std::to_string(model_index(models[m])) + ": " + err.what());
    }
    f.evidence.push_back(e);
    if (!f.draws.back().converged) f.nonconverged.push_back(model_index(models[m]));
    if ((m + 1) % 16 == 0 || m + 1 == models.size()) log << "fitted " << (m + 1) << "/" << models.size() << " models\n";
  }
  f.evidence = posterior_model_probs(std::move(f.evidence));
  return f;
}

inline double max_rhat(PosteriorDraws const& d) {
  double r = 0;
  for (auto const& x : d.diagnostics) r = std::max(r, x.degenerate ? std::numeric_limits<double>::infinity() : x.rhat);
  return r;
}

inline double min_ess(PosteriorDraws const& d) {
  double e = std::numeric_limits<double>::infinity();
  for (auto const& x : d.diagnostics) e = std::min(e, x.ess);
  return e;
}

inline bool wants(RunConfig const& c, std::string const& m) {
  return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

inline int cmd_fit(RunConfig const& c, std::ostream& log) {
  if (c.data.empty()) throw UsageError("fit requires --data");
  static std::vector<std::string> const known{"bma", "aic", "bic", "waic", "loo", "pseudo_bma", "stacking"};
  for (auto const& m : c.methods)
    if (std::find(known.begin(), known.end(), m) == known.end()) throw UsageError("fit: unknown method '" + m + "'");
  if (c.priors.empty()) throw UsageError("--prior: at least one prior required");
  std::vector<PriorConfig> priors;
  for (auto const& p : c.priors) priors.push_back(parse_prior(p));
  c.sampler.validate();

  RatingsTable data;
  try {
    data = load_csv(c.data, CovariateSchema(c.covariates));
  } catch (std::exception const& e) {
    throw UsageError(e.what());
  }
  if (data.n_ratees() < 2) throw UsageError("data must contain at least two ratees");
  SufficientStats const stats(data);
  std::size_t const k = data.schema.arity();

  std::vector<ModelSpec> models;
  for (auto const& s : enumerate_models(data.schema))
    if (c.mean_covariates || s.mean_mask == 0) models.push_back(s);

  fs::create_directories(c.out);
  fs::path const dir = c.out;
  log << "fitting " << models.size() << " models to " << data.n_ratees() << " ratees\n";
  auto space = fit_space(stats, models, priors[0], c.sampler, c.seed, log);
  std::vector<std::string> warnings = space.warnings;
  if (!space.nonconverged.empty()) {
    std::string ids;
    for (auto idx : space.nonconverged) ids += (ids.empty() ? "" : " ") + std::to_string(idx);
    warnings.push_back("sampler did not converge for " + std::to_string(space.nonconverged.size()) + " model(s) (R-hat above " +
                       fmt::fix2(c.sampler.max_rhat) + "; consider more --draws): " + ids);
  }

  auto mask_text = [&](ModelSpec const& s, Component comp) { return describe_mask(s.mask(comp), data.schema); };
  json selected = json::object();
  {
    std::vector<double> pp;
    for (auto const& e : space.evidence) pp.push_back(e.posterior_prob);
    selected["bf"] = model_index(models[select_best(pp, models, true)]);
  }

  // frequentist fits
  std::vector<FrequentistFit> ml;
  std::vector<double> aic, bic;
  bool const freq = wants(c, "aic") || wants(c, "bic");
  if (freq)
    for (auto const& s : models) {
      ml.push_back(ml_fit(stats, s));
      aic.push_back(ml.back().aic);
      bic.push_back(ml.back().bic);
      if (!ml.back().converged) warnings.push_back("ML fit did not converge for model " + std::to_string(model_index(s)));
    }

  // predictive criteria
  std::vector<double> waics, loos;
  std::vector<std::vector<double>> lpd;
  std::size_t loo_flags = 0;
  bool const predictive = wants(c, "waic") || wants(c, "loo") || wants(c, "pseudo_bma") || wants(c, "stacking");
  if (predictive)
    for (std::size_t m = 0; m < models.size(); ++m) {
      Stream rng = Stream(c.seed, 0x9017).substream(model_index(models[m]));
      auto const ll = pointwise_matrix(data, space.draws[m], rng, c.pointwise_draws);
      waics.push_back(waic(ll));
      auto l = loo(ll);
      loo_flags += l.flag_count;
      loos.push_back(l.elpd);
      lpd.push_back(std::move(l.pointwise));
    }
  if (loo_flags > 0) warnings.push_back(std::to_string(loo_flags) + " LOO points fell back to WAIC terms (unstable importance weights)");

  // models.csv
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return space.evidence[a].posterior_prob > space.evidence[b].posterior_prob; });
  {
    std::vector<std::string> head{"rank", "model", "mean", "structural", "residual", "k", "log_marglik", "log_marglik_mcse",
                                  "prior_prob", "posterior_prob", "converged", "max_rhat", "min_ess"};
    if (freq) head.insert(head.end(), {"ml_loglik", "aic", "bic"});
    if (predictive) head.insert(head.end(), {"waic", "loo"});
    CsvWriter w(dir / "models.csv", head);
    for (std::size_t r = 0; r < order.size(); ++r) {
      auto const m = order[r];
      auto const& e = space.evidence[m];
      std::vector<std::string> row{std::to_string(r + 1), std::to_string(model_index(e.spec)), mask_text(e.spec, Component::mean),
                                   mask_text(e.spec, Component::structural), mask_text(e.spec, Component::residual),
                                   std::to_string(e.spec.parameter_count()), fmt::full(e.log_marglik),
                                   fmt::full(e.log_marglik_mcse), fmt::full(e.prior_prob), fmt::full(e.posterior_prob),
                                   space.draws[m].converged ? "true" : "false", fmt::full(max_rhat(space.draws[m])),
                                   fmt::full(min_ess(space.draws[m]))};
      if (freq) row.insert(row.end(), {fmt::full(ml[m].log_likelihood), fmt::full(aic[m]), fmt::full(bic[m])});
      if (predictive) row.insert(row.end(), {fmt::full(waics[m]), fmt::full(loos[m])});
      w.row(row);
    }
  }

  // weights.csv
  std::vector<WeightVector> weight_sets{bma_weights(space.evidence)};
  if (wants(c, "aic")) {
    weight_sets.push_back(ic_weights(aic, WeightMethod::aic));
    selected["aic"] = model_index(models[select_best(aic, models, false)]);
  }
  if (wants(c, "bic")) {
    weight_sets.push_back(ic_weights(bic, WeightMethod::bic));
    selected["bic"] = model_index(models[select_best(bic, models, false)]);
  }
  if (wants(c, "waic")) {
    weight_sets.push_back(pseudo_bma_weights(waics, WeightMethod::waic));
    selected["waic"] = model_index(models[select_best(waics, models, true)]);
  }
  if (wants(c, "loo")) selected["loo"] = model_index(models[select_best(loos, models, true)]);
  if (wants(c, "pseudo_bma")) weight_sets.push_back(pseudo_bma_weights(loos));
  if (wants(c, "stacking") && models.size() >= 2) {
    weight_sets.push_back(stacking_weights(lpd));
    if (weight_sets.back().flagged) warnings.push_back("stacking weights: " + weight_sets.back().note);
  }
  {
    CsvWriter w(dir / "weights.csv", {"method", "model", "mean", "structural", "residual", "weight", "flag"});
    for (auto const& ws : weight_sets)
      for (auto m : order)
        w.row({to_string(ws.method), std::to_string(model_index(models[m])), mask_text(models[m], Component::mean),
               mask_text(models[m], Component::structural), mask_text(models[m], Component::residual),
               fmt::full(ws.weights[m]), ws.flagged ? ws.note : ""});
  }

  // inclusion.csv
  json inclusion = json::array();
  {
    CsvWriter w(dir / "inclusion.csv",
                {"component", "covariate", "prior_odds", "posterior_odds", "bf", "log_bf", "label", "direction"});
    for (auto const& t : all_inclusion_targets(k)) {
      InclusionResult r;
      try {
        r = inclusion_bf(space.evidence, t);
      } catch (PartitionError const&) {
        continue; // effect not varied in this model space
      }
      auto const label = evidence_label(r.bf_inclusion);
      std::string const dir_text = label.direction == Direction::presence ? "presence"
                                   : label.direction == Direction::absence ? "absence"
                                                                          : "none";
      w.row({to_string(t.component), data.schema.names()[t.covariate], fmt::full(r.prior_incl_odds),
             fmt::full(r.posterior_incl_odds), fmt::full(r.bf_inclusion), fmt::full(r.log_bf_inclusion), label.text(),
             dir_text});
      inclusion.push_back({{"component", to_string(t.component)},
                           {"covariate", data.schema.names()[t.covariate]},
                           {"bf", r.bf_inclusion},
                           {"label", label.text()}});
    }
  }

  // irr.csv
  auto const profiles = all_profiles(k);
  Stream mix_rng(c.seed, 0x313A);
  auto const total_draws = std::max<std::size_t>(c.sampler.chains * c.sampler.draws_per_chain, 4000);
  auto const mixed = bma_mix(space.draws, weight_sets[0], total_draws, mix_rng);
  {
    CsvWriter w(dir / "irr.csv", {"source", "kind", "quantity", "point", "lower", "upper"});
    auto emit = [&](std::string const& source, std::string const& kind, IrrSummary const& s) {
      for (std::size_t i = 0; i < s.irr.size(); ++i)
        w.row({source, kind, "IRR " + profile_label(s.profiles[i], data), fmt::full(s.irr[i].point), fmt::full(s.irr[i].lower),
               fmt::full(s.irr[i].upper)});
      for (std::size_t i = 0; i < s.delta.size(); ++i)
        w.row({source, kind, "delta IRR " + delta_label(i, data), fmt::full(s.delta[i].point), fmt::full(s.delta[i].lower),
               fmt::full(s.delta[i].upper)});
    };
    emit("bma", "posterior median", irr_summaries(mixed));
    for (std::size_t m = 0; m < models.size(); ++m)
      emit("model " + std::to_string(model_index(models[m])), "posterior median", irr_summaries(space.draws[m]));
    if (freq && c.bootstrap > 0) {
      // parametric bootstrap from the largest fitted model
      auto const& generating = ml.back().estimates;
      for (auto method : {WeightMethod::aic, WeightMethod::bic}) {
        if (!wants(c, to_string(method))) continue;
        auto estimator = [&](RatingsTable const& t) {
          SufficientStats const st(t);
          std::vector<std::vector<double>> q;
          std::vector<double> crit;
          for (auto const& s : models) {
            auto const f = ml_fit(st, s);
            q.push_back(irr_quantities(f.estimates));
            crit.push_back(method == WeightMethod::aic ? f.aic : f.bic);
          }
          auto const wv = ic_weights(crit, method);
          std::vector<double> out(q[0].size());
          for (std::size_t i = 0; i < out.size(); ++i) {
            std::vector<double> col;
            for (auto const& row : q) col.push_back(row[i]);
            out[i] = frequentist_average(col, wv);
          }
          return out;
        };
        log << "bootstrapping " << to_string(method) << "-weighted IRR (" << c.bootstrap << " resamples)\n";
        emit(std::string(to_string(method)) + " weights", "ML plug-in, bootstrap interval",
             irr_summaries_bootstrap(data, generating, estimator, c.bootstrap, c.seed));
      }
    }
  }

  // marginal_means.csv
  {
    CsvWriter w(dir / "marginal_means.csv", {"profile", "mu", "mu_lower", "mu_upper", "sigma_gamma", "sigma_gamma_lower",
                                             "sigma_gamma_upper", "sigma_epsilon", "sigma_epsilon_lower",
                                             "sigma_epsilon_upper", "irr", "irr_lower", "irr_upper"});
    for (auto const& r : marginal_means(mixed)) {
      std::vector<std::string> row{profile_label(r.profile, data)};
      for (auto const* iv : {&r.mu, &r.sigma_gamma, &r.sigma_epsilon, &r.irr})
        row.insert(row.end(), {fmt::full(iv->point), fmt::full(iv->lower), fmt::full(iv->upper)});
      w.row(row);
    }
  }

  // prior sensitivity
  fs::remove(dir / "sensitivity.csv");
  if (priors.size() > 1) {
    CsvWriter w(dir / "sensitivity.csv", {"prior", "sigma_beta", "kind", "item", "value"});
    for (std::size_t p = 0; p < priors.size(); ++p) {
      log << "prior sensitivity: " << c.priors[p] << "\n";
      auto const alt = p == 0 ? space : fit_space(stats, models, priors[p], c.sampler, c.seed, log);
      for (auto m : order)
        w.row({c.priors[p], fmt::full(priors[p].sigma_beta), "posterior_prob", "model " + std::to_string(model_index(models[m])),
               fmt::full(alt.evidence[m].posterior_prob)});
      for (auto const& t : all_inclusion_targets(k)) {
        try {
          auto const r = inclusion_bf(alt.evidence, t);
          w.row({c.priors[p], fmt::full(priors[p].sigma_beta), "inclusion_bf",
                 std::string(to_string(t.component)) + " " + data.schema.names()[t.covariate], fmt::full(r.bf_inclusion)});
        } catch (PartitionError const&) {
        }
      }
    }
  }

  auto const& top = space.evidence[order[0]];
  json summary = {
      {"command", "fit"},
      {"data", c.data},
      {"covariates", c.covariates},
      {"mean_covariates", c.mean_covariates},
      {"n_ratees", data.n_ratees()},
      {"n_ratings", data.n_ratings()},
      {"models_fit", models.size()},
      {"prior", c.priors[0]},
      {"priors", c.priors},
      {"sampler",
       {{"chains", c.sampler.chains}, {"warmup", c.sampler.warmup}, {"draws", c.sampler.draws_per_chain}, {"max_rhat", c.sampler.max_rhat}}},
      {"seed", c.seed},
      {"methods", c.methods},
      {"top_model",
       {{"model", model_index(top.spec)},
        {"mean", mask_text(top.spec, Component::mean)},
        {"structural", mask_text(top.spec, Component::structural)},
        {"residual", mask_text(top.spec, Component::residual)},
        {"posterior_prob", top.posterior_prob}}},
      {"selected", selected},
      {"inclusion", inclusion},
      {"nonconverged_models", space.nonconverged},
      {"warnings", warnings},
  };
  std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
  std::ofstream(dir / "report.md") << render_report(dir);

  for (auto const& w : warnings) log << "warning: " << w << "\n";
  log << "wrote bundle to " << dir.string() << "\n";
  return warnings.empty() ? kExitOk : kExitWarnings;
}

// ---------------------------------------------------------------- simulate

inline StudyPlan make_plan(RunConfig const& c) {
  StudyPlan p;
  if (c.full_plan) {
    p.scenarios.clear();
    for (auto const& s : scenario_table()) p.scenarios.push_back(s.name);
    p.ratees = {25, 50, 100, 200};
    p.ratings = {3, 5};
  } else {
    p.scenarios = c.scenarios;
    p.ratees = c.ratees;
    p.ratings = c.ratings;
  }
  p.replications = c.replications;
  p.seed = c.seed;
  p.sampler = c.sampler;
  p.workers = c.workers;
  p.pointwise_draws = c.pointwise_draws;
  if (!c.priors.empty()) p.prior = parse_prior(c.priors[0]);
  if (!c.methods.empty()) {
    p.methods.clear();
    for (auto const& m : c.methods) {
      try {
        p.methods.push_back(parse_method(m));
      } catch (std::invalid_argument const& e) {
        throw UsageError(e.what());
      }
    }
  }
  try {
    p.validate();
  } catch (std::invalid_argument const& e) {
    throw UsageError(std::string("invalid plan: ") + e.what());
  }
  return p;
}

inline int cmd_simulate(RunConfig const& c, std::ostream& log) {
  auto const plan = make_plan(c);
  if (c.full_plan)
    log << "warning: the full plan runs " << plan.conditions().size() * plan.replications
        << " datasets and may take many hours\n";
  fs::create_directories(c.out);
  fs::path const dir = c.out;
  log << "running " << plan.conditions().size() << " conditions x " << plan.replications << " replications\n";
  auto const metrics = run_study(plan);
  {
    std::ofstream out(dir / "metrics.csv");
    write_metrics_csv(out, metrics);
  }
  json status = json::array();
  for (auto const& s : metrics.status)
    status.push_back({{"scenario", s.scenario},
                      {"I", s.ratees},
                      {"J", s.ratings},
                      {"replications", s.replications},
                      {"failures", s.failures},
                      {"nonconverged_fits", s.nonconverged_fits},
                      {"flagged", s.flagged}});
  std::vector<std::string> methods;
  for (auto m : plan.methods) methods.push_back(to_string(m));
  json summary = {{"command", "simulate"},
                  {"scenarios", plan.scenarios},
                  {"I", plan.ratees},
                  {"J", plan.ratings},
                  {"replications", plan.replications},
                  {"methods", methods},
                  {"seed", plan.seed},
                  {"sampler",
                   {{"chains", plan.sampler.chains}, {"warmup", plan.sampler.warmup}, {"draws", plan.sampler.draws_per_chain}}},
                  {"conditions", status},
                  {"warnings", metrics.notes}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
  std::ofstream(dir / "report.md") << render_report(dir);
  log << "wrote bundle to " << dir.string() << "\n";
  bool flagged = false;
  for (auto const& s : metrics.status) flagged |= s.flagged;
  return flagged ? kExitWarnings : kExitOk;
}

// ---------------------------------------------------------------- entry

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"IRR estimation with covariate-dependent variance components"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::vector<std::pair<std::string, CLI::Option*>> opts;

  auto add_common = [&](CLI::App* sub, std::vector<std::pair<std::string, std::string>> const& names) {
    sub->add_option("--config", config_path, "JSON file with flat keys mirroring the flags");
    for (auto const& [name, help] : names) opts.emplace_back(name, sub->add_option("--" + name, flags[name], help));
  };
  std::vector<std::pair<std::string, std::string>> const shared{
      {"prior", "small, medium, large or an explicit SD (comma list for sensitivity runs)"},
      {"chains", "sampler chains"},
      {"warmup", "warmup iterations per chain"},
      {"draws", "retained draws per chain"},
      {"methods", "comma-separated methods"},
      {"seed", "master seed"},
      {"out", "output directory"}};

  auto* fit = app.add_subcommand("fit", "fit every model to a dataset and write a report bundle");
  auto fit_names = shared;
  fit_names.insert(fit_names.end(), {{"data", "ratings CSV (columns ratee, rating, covariates)"},
                                     {"covariates", "comma-separated covariate columns"},
                                     {"mean-covariates", "on/off: let covariates enter the mean"},
                                     {"bootstrap", "parametric bootstrap resamples for frequentist intervals"},
                                     {"pointwise-draws", "draws used for WAIC/LOO"}});
  add_common(fit, fit_names);

  auto* sim = app.add_subcommand("simulate", "run the simulation study");
  auto sim_names = shared;
  sim_names.insert(sim_names.end(), {{"scenarios", "comma-separated scenario names"},
                                     {"I", "comma-separated ratees per group"},
                                     {"J", "comma-separated ratings per ratee"},
                                     {"replications", "replications per condition"},
                                     {"workers", "worker threads (0: all cores)"},
                                     {"pointwise-draws", "draws used for WAIC/LOO"},
                                     {"full-plan", "on/off: all scenarios and sample sizes"}});
  add_common(sim, sim_names);

  auto* rep = app.add_subcommand("report", "render an existing bundle to markdown");
  add_common(rep, {{"out", "bundle directory"}});

  try {
    app.parse(argc, argv);
  } catch (CLI::CallForHelp const& e) {
    return app.exit(e, out, err);
  } catch (CLI::ParseError const& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  RunConfig c;
  CLI::App* chosen = app.got_subcommand(fit) ? fit : app.got_subcommand(sim) ? sim : rep;
  c.command = chosen->get_name();
  if (c.command == "fit") c.methods = {"bma", "aic", "bic"};
  try {
    if (!config_path.empty()) apply_config_file(c, config_path);
    for (auto const& [name, opt] : opts)
      if (opt->count() > 0) apply_setting(c, name, flags[name]);
    if (c.command == "fit") return cmd_fit(c, err);
    if (c.command == "simulate") return cmd_simulate(c, err);
    return cmd_report(c, out);
  } catch (UsageError const& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (std::invalid_argument const& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

} // namespace irrbma::cli

#endif // IRRBMA_TOOLS_CLI_HPP

#ifndef IRRBMA_DATA_HPP
#define IRRBMA_DATA_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "irrbma/model.hpp"
#include "irrbma/rng.hpp"

namespace irrbma {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  ParseError(std::string const& what, std::size_t line) : std::runtime_error(what), line(line) {}
  std::size_t line;
};

/// Long-format ratings. Ratee i owns profiles[i]; rating r belongs to ratee
/// ratee_ids[r]. levels[k] holds the labels coded -0.5 and +0.5 for
/// covariate k.
struct RatingsTable {
  CovariateSchema schema;
  std::vector<std::string> ratee_labels;
  std::vector<CovariateProfile> profiles;
  std::vector<std::size_t> ratee_ids;
  std::vector<double> ratings;
  std::vector<std::array<std::string, 2>> levels;

  [[nodiscard]] std::size_t n_ratees() const noexcept { return profiles.size(); }
  [[nodiscard]] std::size_t n_ratings() const noexcept { return ratings.size(); }

  [[nodiscard]] std::vector<std::size_t> ratings_per_ratee() const {
    std::vector<std::size_t> j(n_ratees(), 0);
    for (auto id : ratee_ids) ++j[id];
    return j;
  }

  /// Ratee counts at the (-0.5, +0.5) levels of covariate k.
  [[nodiscard]] std::array<std::size_t, 2> level_counts(std::size_t k) const {
    std::array<std::size_t, 2> c{0, 0};
    for (auto const& p : profiles) ++c[p[k] > 0 ? 1 : 0];
    return c;
  }

  void validate() const {
    if (ratee_ids.size() != ratings.size()) throw ValidationError("ratee id and rating counts differ");
    if (ratee_labels.size() != profiles.size()) throw ValidationError("ratee label and profile counts differ");
    if (levels.size() != schema.arity()) throw ValidationError("level labels do not match schema arity");
    for (auto const& p : profiles)
      if (p.size() != schema.arity()) throw ValidationError("profile length does not match schema arity");
    std::vector<std::size_t> j(n_ratees(), 0);
    for (std::size_t r = 0; r < ratings.size(); ++r) {
      if (ratee_ids[r] >= n_ratees()) throw ValidationError("rating refers to unknown ratee");
      if (!std::isfinite(ratings[r])) throw ValidationError("non-finite rating");
      ++j[ratee_ids[r]];
    }
    for (std::size_t i = 0; i < j.size(); ++i)
      if (j[i] == 0) throw ValidationError("ratee " + ratee_labels[i] + " has no ratings");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char const ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field on line " + std::to_string(line_no), line_no);
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string const& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  char const* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string csv_quote(std::string const& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

} // namespace detail

inline RatingsTable parse_csv(std::istream& in, CovariateSchema const& schema) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw SchemaError("empty input: header row required");
  ++line_no;
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line, line_no);
  for (auto& h : header) h = detail::trim(h);

  auto column = [&](std::string const& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t const ratee_col = column("ratee");
  std::size_t const rating_col = column("rating");
  std::vector<std::size_t> cov_cols;
  for (auto const& n : schema.names()) cov_cols.push_back(column(n));

  RatingsTable t;
  t.schema = schema;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::string>> raw_cov; // per ratee
  std::vector<std::set<std::string>> labels(schema.arity());

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       line_no);
    std::string const key = detail::trim(fields[ratee_col]);
    if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty ratee key", line_no);
    std::string const rating_text = detail::trim(fields[rating_col]);
    auto value = detail::parse_double(rating_text);
    if (!value)
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric rating '" + rating_text + "'", line_no);

    std::vector<std::string> cov(schema.arity());
    for (std::size_t k = 0; k < schema.arity(); ++k) {
      cov[k] = detail::trim(fields[cov_cols[k]]);
      if (cov[k].empty())
        throw ParseError("line " + std::to_string(line_no) + ": empty value for covariate '" + schema.names()[k] + "'",
                         line_no);
      labels[k].insert(cov[k]);
    }

    auto [it, inserted] = index.try_emplace(key, t.ratee_labels.size());
    if (inserted) {
      t.ratee_labels.push_back(key);
      raw_cov.push_back(cov);
    } else if (raw_cov[it->second] != cov) {
      throw ValidationError("ratee " + key + " has inconsistent covariate values");
    }
    t.ratee_ids.push_back(it->second);
    t.ratings.push_back(*value);
  }

  for (std::size_t k = 0; k < schema.arity(); ++k) {
    if (labels[k].size() != 2)
      throw ValidationError("covariate '" + schema.names()[k] + "' must have exactly two distinct labels, found " +
                            std::to_string(labels[k].size()));
    t.levels.push_back({*labels[k].begin(), *labels[k].rbegin()});
  }
  for (auto const& cov : raw_cov) {
    std::vector<double> v(schema.arity());
    for (std::size_t k = 0; k < schema.arity(); ++k) v[k] = cov[k] == t.levels[k][0] ? kLowCode : kHighCode;
    t.profiles.emplace_back(std::move(v));
  }
  t.validate();
  return t;
}

inline RatingsTable load_csv(std::filesystem::path const& path, CovariateSchema const& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in, schema);
}

inline void write_csv(std::ostream& out, RatingsTable const& t) {
  out << "ratee,rating";
  for (auto const& n : t.schema.names()) out << ',' << detail::csv_quote(n);
  out << '\n';
  char buf[40];
  for (std::size_t r = 0; r < t.n_ratings(); ++r) {
    std::size_t const i = t.ratee_ids[r];
    auto res = std::to_chars(buf, buf + sizeof buf, t.ratings[r]);
    out << detail::csv_quote(t.ratee_labels[i]) << ',' << std::string_view(buf, res.ptr);
    for (std::size_t k = 0; k < t.schema.arity(); ++k)
      out << ',' << detail::csv_quote(t.levels[k][t.profiles[i][k] > 0 ? 1 : 0]);
    out << '\n';
  }
}

inline void write_csv(std::filesystem::path const& path, RatingsTable const& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out, t);
}

/// One simulation condition with two groups; group 1 is coded -0.5.
struct ScenarioConfig {
  std::string name;
  double mu1 = 0, mu2 = 0;
  double sg1 = 1, sg2 = 1;
  double se1 = 1, se2 = 1;
  std::size_t ratees_per_group = 0;
  std::size_t ratings_per_ratee = 0;
  std::uint64_t seed = 0;
  double tabulated_irr1 = 0, tabulated_irr2 = 0; // reference values, for checking

  void validate() const {
    if (ratees_per_group < 1 || ratings_per_ratee < 1)
      throw std::invalid_argument("ScenarioConfig: I and J must be at least 1");
    if (!(sg1 > 0) || !(sg2 > 0) || !(se1 > 0) || !(se2 > 0))
      throw std::invalid_argument("ScenarioConfig: standard deviations must be positive");
  }

  /// Generating masks, read from parameter inequalities.
  [[nodiscard]] ModelSpec true_spec() const noexcept {
    return {1, mu1 != mu2 ? 1U : 0U, sg1 != sg2 ? 1U : 0U, se1 != se2 ? 1U : 0U};
  }

  /// Equivalent effect-coded parameters (group 1 at -0.5).
  [[nodiscard]] ParameterVector true_parameters() const {
    ParameterVector p = ParameterVector::zeros(1);
    p.alpha_mu = 0.5 * (mu1 + mu2);
    p.beta_mu[0] = mu2 - mu1;
    p.alpha_gamma = std::sqrt(sg1 * sg2);
    p.beta_gamma[0] = std::log(sg2 / sg1);
    p.alpha_epsilon = std::sqrt(se1 * se2);
    p.beta_epsilon[0] = std::log(se2 / se1);
    return p;
  }
};

/// The ten data-generating scenarios of the simulation design; I, J and
/// seed left unset.
inline std::vector<ScenarioConfig> scenario_table() {
  auto row = [](std::string name, double m1, double m2, double g1, double g2, double e1, double e2, double i1,
                double i2) {
    ScenarioConfig c;
    c.name = std::move(name);
    c.mu1 = m1;
    c.mu2 = m2;
    c.sg1 = g1;
    c.sg2 = g2;
    c.se1 = e1;
    c.se2 = e2;
    c.tabulated_irr1 = i1;
    c.tabulated_irr2 = i2;
    return c;
  };
  return {
      row("1", 0.00, 0.00, 0.67, 0.67, 0.74, 0.74, 0.45, 0.45),
      row("2", 0.00, 0.00, 0.67, 0.67, 0.67, 0.82, 0.50, 0.40),
      row("3", 0.00, 0.00, 0.60, 0.74, 0.74, 0.74, 0.40, 0.50),
      row("4.1", 0.00, 0.00, 0.60, 0.73, 0.66, 0.81, 0.45, 0.45),
      row("4.2", 0.00, 0.00, 0.73, 0.60, 0.66, 0.81, 0.55, 0.35),
      row("5", -0.20, 0.20, 0.67, 0.67, 0.74, 0.74, 0.45, 0.45),
      row("6", -0.20, 0.20, 0.67, 0.67, 0.67, 0.82, 0.50, 0.40),
      row("7", -0.20, 0.20, 0.60, 0.74, 0.74, 0.74, 0.40, 0.50),
      row("8.1", -0.20, 0.20, 0.60, 0.73, 0.66, 0.81, 0.45, 0.45),
      row("8.2", -0.20, 0.20, 0.73, 0.60, 0.66, 0.81, 0.55, 0.35),
  };
}

inline ScenarioConfig find_scenario(std::string const& name) {
  for (auto const& s : scenario_table())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

namespace detail {

/// Draws ratings for a fixed design. Ratee i uses substream i of the seed,
/// so tables are reproducible regardless of how ratees are scheduled.
inline RatingsTable simulate_design(CovariateSchema const& schema, std::vector<std::array<std::string, 2>> levels,
                                    std::vector<CovariateProfile> const& profiles,
                                    std::vector<std::size_t> const& counts, std::vector<double> const& means,
                                    std::vector<double> const& sg, std::vector<double> const& se,
                                    Stream const& root) {
  RatingsTable t;
  t.schema = schema;
  t.levels = std::move(levels);
  t.profiles = profiles;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  t.ratings.reserve(total);
  t.ratee_ids.reserve(total);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    t.ratee_labels.push_back(std::to_string(i + 1));
    Stream s = root.substream(i);
    double const gamma = sg[i] * s.normal();
    for (std::size_t j = 0; j < counts[i]; ++j) {
      t.ratee_ids.push_back(i);
      t.ratings.push_back(means[i] + gamma + se[i] * s.normal());
    }
  }
  return t;
}

/// Scenario generator without positivity checks (zero SDs allowed).
inline RatingsTable simulate_scenario_unchecked(ScenarioConfig const& c) {
  std::size_t const n = 2 * c.ratees_per_group;
  std::vector<CovariateProfile> profiles;
  std::vector<double> mu, sg, se;
  for (std::size_t i = 0; i < n; ++i) {
    bool const second = i >= c.ratees_per_group;
    profiles.emplace_back(std::vector<double>{second ? kHighCode : kLowCode});
    mu.push_back(second ? c.mu2 : c.mu1);
    sg.push_back(second ? c.sg2 : c.sg1);
    se.push_back(second ? c.se2 : c.se1);
  }
  std::vector<std::size_t> counts(n, c.ratings_per_ratee);
  return simulate_design(CovariateSchema({"group"}), {{{"G1", "G2"}}}, profiles, counts, mu, sg, se,
                         Stream(c.seed));
}

} // namespace detail

/// Two groups of I ratees with J ratings each; ratees 1..I form group 1.
inline RatingsTable simulate_dataset(ScenarioConfig const& config) {
  config.validate();
  return detail::simulate_scenario_unchecked(config);
}

/// Simulates new ratings on the design (profiles and per-ratee counts) of
/// `like` from the model with parameters `params`.
inline RatingsTable simulate_like(RatingsTable const& like, ParameterVector const& params, Stream const& stream) {
  auto const counts = like.ratings_per_ratee();
  std::vector<double> mu, sg, se;
  for (auto const& p : like.profiles) {
    mu.push_back(linked_mean(params.alpha_mu, params.beta_mu, p));
    sg.push_back(linked_sd(params.alpha_gamma, params.beta_gamma, p));
    se.push_back(linked_sd(params.alpha_epsilon, params.beta_epsilon, p));
  }
  auto t = detail::simulate_design(like.schema, like.levels, like.profiles, counts, mu, sg, se, stream);
  t.ratee_labels = like.ratee_labels;
  return t;
}

/// Balanced design with `ratees_per_profile` ratees at each of the 2^K
/// profiles, simulated from `params`.
inline RatingsTable simulate_balanced(CovariateSchema const& schema, ParameterVector const& params,
                                      std::size_t ratees_per_profile, std::size_t ratings_per_ratee,
                                      std::uint64_t seed) {
  std::vector<std::array<std::string, 2>> levels;
  for (auto const& n : schema.names()) levels.push_back({n + "_a", n + "_b"});
  std::vector<CovariateProfile> profiles;
  std::vector<double> mu, sg, se;
  for (auto const& p : all_profiles(schema.arity()))
    for (std::size_t r = 0; r < ratees_per_profile; ++r) {
      profiles.push_back(p);
      mu.push_back(linked_mean(params.alpha_mu, params.beta_mu, p));
      sg.push_back(linked_sd(params.alpha_gamma, params.beta_gamma, p));
      se.push_back(linked_sd(params.alpha_epsilon, params.beta_epsilon, p));
    }
  std::vector<std::size_t> counts(profiles.size(), ratings_per_ratee);
  return detail::simulate_design(schema, std::move(levels), profiles, counts, mu, sg, se, Stream(seed));
}

} // namespace irrbma

#endif // IRRBMA_DATA_HPP

// Factor graph over hidden role variables and max-product belief propagation.
//
// Layout (N role variables, K of them Evil):
//   R_j --- F_j(R_j, P_1..O_5)   conditional factor, state variables clamped to evidence
//   R_j --- prior_j(R_j)         unary prior factor
//   R_1..R_N --- C               cardinality constraint, C(r) = 1 iff sum r = K
//
// The state variables are observed, so their messages into F_j are one-hot and
// F_j reduces to the two-entry table F_j(r) = p(r_j = r | evidence). The
// conditional factor values come from a ConditionalFactorProvider (the factor
// network in play, exact tables in tests).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grail/codec.hpp"

namespace grail {

inline constexpr double kProbabilityFloor = 1e-6;
inline constexpr double kLogFloor = 1e-12;

using Dist2 = std::array<double, 2>;  // [Good, Evil]

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// p(r_j = Evil | encoded state) for the player at 0-based `seat`.
class ConditionalFactorProvider {
 public:
  virtual ~ConditionalFactorProvider() = default;
  virtual double evil_probability(const EncodedState& state, Seat seat) const = 0;
};

/// Wraps a callable; handy for tests and exact tables.
class FunctionFactorProvider final : public ConditionalFactorProvider {
 public:
  explicit FunctionFactorProvider(std::function<double(const EncodedState&, Seat)> fn) : fn_(std::move(fn)) {}
  double evil_probability(const EncodedState& state, Seat seat) const override { return fn_(state, seat); }

 private:
  std::function<double(const EncodedState&, Seat)> fn_;
};

struct BPConfig {
  int max_iterations = 20;
  double epsilon = 1e-6;

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  }
};

struct PriorVector {
  std::vector<double> p;  // p(r_j = Evil)
};

struct GraphOptions {
  // Exact tables may contain hard 0/1 entries; learned factors must stay in (0, 1)
  // and are clipped to [1e-6, 1 - 1e-6].
  bool exact_factors = false;
  bool constraint = true;
};

struct FactorGraph {
  int n_roles = kPlayers;
  int n_evil = kEvilCount;
  bool constraint = true;
  std::optional<EncodedState> evidence;
  std::vector<Dist2> conditional;          // F_j(r)
  std::vector<std::optional<int>> clamp;   // observed role values
  std::optional<Seat> self;

  std::vector<std::string> variable_names() const {
    std::vector<std::string> names;
    for (int j = 0; j < n_roles; ++j) names.push_back("R" + std::to_string(j + 1));
    if (evidence)
      for (const auto& v : variable_specs()) names.push_back(v.name);
    return names;
  }
};

namespace bp_detail {

inline Dist2 normalized(Dist2 d, const char* what) {
  const double s = d[0] + d[1];
  if (!(s > 0.0) || !std::isfinite(s))
    throw InferenceError(std::string("degenerate message (zero or non-finite mass) in ") + what);
  return {d[0] / s, d[1] / s};
}

inline Dist2 factor_table(double p_evil, bool exact) {
  if (!std::isfinite(p_evil)) throw InferenceError("conditional factor is not finite");
  if (exact) {
    if (p_evil < 0.0 || p_evil > 1.0) throw InferenceError("exact factor outside [0, 1]");
    return {1.0 - p_evil, p_evil};
  }
  if (!(p_evil > 0.0 && p_evil < 1.0))
    throw InferenceError("conditional factor must lie in the open interval (0, 1), got " + std::to_string(p_evil));
  const double p = std::clamp(p_evil, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return {1.0 - p, p};
}

}  // namespace bp_detail

/// Generalized N-player graph from precomputed conditional probabilities.
inline FactorGraph build_graph_from_probabilities(const std::vector<double>& evil_probabilities, int n_evil,
                                                  std::optional<Seat> self, GraphOptions options = {}) {
  FactorGraph g;
  g.n_roles = static_cast<int>(evil_probabilities.size());
  g.n_evil = n_evil;
  g.constraint = options.constraint;
  if (g.n_roles < 1 || g.n_roles > 32) throw std::invalid_argument("role count must be in 1..32");
  if (n_evil < 0 || n_evil > g.n_roles) throw std::invalid_argument("evil count out of range");
  g.clamp.assign(static_cast<std::size_t>(g.n_roles), std::nullopt);
  for (double p : evil_probabilities) g.conditional.push_back(bp_detail::factor_table(p, options.exact_factors));
  if (self) {
    if (*self < 0 || *self >= g.n_roles) throw std::invalid_argument("self seat out of range");
    g.clamp[static_cast<std::size_t>(*self)] = 0;
    g.self = self;
  }
  return g;
}

/// The 6-player graph: state variables clamped to `encoded`, one conditional
/// factor per role evaluated through the provider, `self_player` clamped Good.
inline FactorGraph build_graph(const EncodedState& encoded, std::optional<Seat> self_player,
                               const ConditionalFactorProvider& factor_fn, GraphOptions options = {}) {
  encoded.validate();
  std::vector<double> probs;
  for (Seat j = 0; j < kPlayers; ++j) probs.push_back(factor_fn.evil_probability(encoded, j));
  FactorGraph g = build_graph_from_probabilities(probs, kEvilCount, self_player, options);
  g.evidence = encoded;
  return g;
}

/// Summed KL(prev || curr) over variables; entries floored at 1e-12 before the log.
inline double kl_total(const std::vector<Dist2>& prev, const std::vector<Dist2>& curr) {
  if (prev.size() != curr.size()) throw std::invalid_argument("belief vectors differ in length");
  double total = 0.0;
  for (std::size_t k = 0; k < prev.size(); ++k)
    for (std::size_t s = 0; s < 2; ++s) {
      const double p = std::max(prev[k][s], kLogFloor);
      const double q = std::max(curr[k][s], kLogFloor);
      total += prev[k][s] * (std::log(p) - std::log(q));
    }
  return total;
}

struct BeliefVector {
  std::vector<double> evil;  // b_j = b(R_j = 1) / (b(R_j = 0) + b(R_j = 1))
  std::optional<Seat> self;

  double operator[](std::size_t j) const { return evil[j]; }
  std::size_t size() const { return evil.size(); }
};

struct BPResult {
  BeliefVector beliefs;
  std::vector<Dist2> max_marginals;  // normalized per variable
  int iterations = 0;
  double final_kl = 0.0;
  bool converged = false;
  std::vector<double> kl_trace;
};

namespace bp_detail {

// Max over assignments of `others` with exactly `need` Evil of prod msg_j(r_j).
// Greedy on the gain msg(1)/msg(0) is exact for a cardinality constraint; the
// comparison is done by cross-multiplication so hard zeros need no special case.
struct CardinalityMax {
  std::vector<int> order;  // all variables, largest gain first

  explicit CardinalityMax(const std::vector<Dist2>& msgs) : order(msgs.size()) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&msgs](int a, int b) {
      const double lhs = msgs[static_cast<std::size_t>(a)][1] * msgs[static_cast<std::size_t>(b)][0];
      const double rhs = msgs[static_cast<std::size_t>(b)][1] * msgs[static_cast<std::size_t>(a)][0];
      if (lhs != rhs) return lhs > rhs;
      return a < b;
    });
  }

  /// max_excluding for every variable at once, via prefix and suffix products
  /// over the sorted order: O(n) after the sort, no divisions.
  std::vector<double> all_excluding(const std::vector<Dist2>& msgs, int need) const {
    const std::size_t n = order.size();
    std::vector<double> out(n, 0.0);
    const int others = static_cast<int>(n) - 1;
    if (need < 0 || need > others) return out;
    const auto c = static_cast<std::size_t>(need);
    auto m = [&](std::size_t pos, int v) { return msgs[static_cast<std::size_t>(order[pos])][static_cast<std::size_t>(v)]; };
    std::vector<double> p1(n + 1, 1.0), s0(n + 1, 1.0);
    for (std::size_t i = 0; i < n; ++i) p1[i + 1] = p1[i] * m(i, 1);
    for (std::size_t i = n; i-- > 0;) s0[i] = s0[i + 1] * m(i, 0);
    // Excluded position p < c: take positions 0..c except p as Evil, the rest Good.
    double mid1 = m(c, 1);  // product of m1 over (p, c]
    for (std::size_t p = c; p-- > 0;) {
      out[static_cast<std::size_t>(order[p])] = p1[p] * mid1 * s0[c + 1];
      mid1 *= m(p, 1);
    }
    // Excluded position p >= c: positions 0..c-1 Evil, the rest except p Good.
    double mid0 = 1.0;  // product of m0 over [c, p)
    for (std::size_t p = c; p < n; ++p) {
      out[static_cast<std::size_t>(order[p])] = p1[c] * mid0 * s0[p + 1];
      mid0 *= m(p, 0);
    }
    return out;
  }

  double max_excluding(const std::vector<Dist2>& msgs, int excluded, int need) const {
    return all_excluding(msgs, need)[static_cast<std::size_t>(excluded)];
  }
};

}  // namespace bp_detail

/// Loopy max-product with a fixed schedule: every variable->factor message in
/// (variable, factor) order, then every factor->variable message. Messages are
/// normalized as they are produced. Stops when the summed KL between
/// successive beliefs drops below epsilon, or after max_iterations.
inline BPResult run_max_product(const FactorGraph& graph, const BPConfig& config = {},
                                const std::optional<PriorVector>& priors = std::nullopt) {
  config.validate();
  const auto n = static_cast<std::size_t>(graph.n_roles);
  if (graph.conditional.size() != n || graph.clamp.size() != n) throw InferenceError("graph is not well-formed");

  std::vector<Dist2> prior_table(n, Dist2{0.5, 0.5});
  if (priors) {
    if (priors->p.size() != n) throw InferenceError("prior vector length does not match role count");
    for (std::size_t j = 0; j < n; ++j) {
      const double p = priors->p[j];
      if (!(p >= 0.0 && p <= 1.0)) throw InferenceError("prior outside [0, 1]");
      prior_table[j] = {1.0 - p, p};
    }
  }

  // Factor slots per variable: 0 = conditional, 1 = prior, 2 = constraint.
  const std::size_t slots = graph.constraint ? 3 : 2;
  auto one_hot = [](int v) { return v == 0 ? Dist2{1.0, 0.0} : Dist2{0.0, 1.0}; };

  std::vector<std::array<Dist2, 3>> var_to_factor(n), factor_to_var(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Dist2 init = graph.clamp[j] ? one_hot(*graph.clamp[j]) : bp_detail::normalized(prior_table[j], "prior");
    for (std::size_t s = 0; s < 3; ++s) {
      var_to_factor[j][s] = init;
      factor_to_var[j][s] = {0.5, 0.5};
    }
  }

  auto beliefs_from = [&](const std::vector<std::array<Dist2, 3>>& f2v) {
    std::vector<Dist2> b(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (graph.clamp[j]) {
        b[j] = one_hot(*graph.clamp[j]);
        continue;
      }
      Dist2 prod{1.0, 1.0};
      for (std::size_t s = 0; s < slots; ++s) {
        prod[0] *= f2v[j][s][0];
        prod[1] *= f2v[j][s][1];
      }
      b[j] = bp_detail::normalized(prod, "belief");
    }
    return b;
  };

  BPResult result;
  std::vector<Dist2> prev = beliefs_from(factor_to_var);
  std::vector<Dist2> constraint_in(n);

  for (int it = 1; it <= config.max_iterations; ++it) {
    // Variable -> factor.
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t s = 0; s < slots; ++s) {
        if (graph.clamp[j]) {
          var_to_factor[j][s] = one_hot(*graph.clamp[j]);
          continue;
        }
        Dist2 prod{1.0, 1.0};
        for (std::size_t o = 0; o < slots; ++o) {
          if (o == s) continue;
          prod[0] *= factor_to_var[j][o][0];
          prod[1] *= factor_to_var[j][o][1];
        }
        var_to_factor[j][s] = bp_detail::normalized(prod, "variable-to-factor message");
      }
    }
    // Factor -> variable: conditional factors, then priors, then the constraint.
    for (std::size_t j = 0; j < n; ++j)
      factor_to_var[j][0] = bp_detail::normalized(graph.conditional[j], "conditional factor message");
    for (std::size_t j = 0; j < n; ++j) factor_to_var[j][1] = bp_detail::normalized(prior_table[j], "prior factor message");
    if (graph.constraint) {
      for (std::size_t j = 0; j < n; ++j) constraint_in[j] = var_to_factor[j][2];
      bp_detail::CardinalityMax cmax(constraint_in);
      const auto good = cmax.all_excluding(constraint_in, graph.n_evil);
      const auto evil = cmax.all_excluding(constraint_in, graph.n_evil - 1);
      for (std::size_t j = 0; j < n; ++j)
        factor_to_var[j][2] = bp_detail::normalized(Dist2{good[j], evil[j]}, "constraint factor message");
    }

    std::vector<Dist2> curr = beliefs_from(factor_to_var);
    const double kl = kl_total(prev, curr);
    if (!std::isfinite(kl)) throw InferenceError("belief divergence is not finite");
    result.kl_trace.push_back(kl);
    result.iterations = it;
    result.final_kl = kl;
    prev = std::move(curr);
    if (kl < config.epsilon) {
      result.converged = true;
      break;
    }
  }

  result.max_marginals = prev;
  result.beliefs.self = graph.self;
  for (const auto& b : prev) result.beliefs.evil.push_back(b[1] / (b[0] + b[1]));
  return result;
}

struct MapResult {
  std::vector<int> assignment;       // 1 = Evil
  std::vector<Dist2> max_marginals;  // normalized per variable
  double best_score = 0.0;
  std::size_t assignments_enumerated = 0;
};

/// Brute-force MAP: enumerates every assignment that satisfies the clamps and
/// (when enabled) the Evil-count constraint. Test oracle for run_max_product.
inline MapResult exhaustive_map_oracle(const FactorGraph& graph, const std::optional<PriorVector>& priors = std::nullopt) {
  const int n = graph.n_roles;
  if (n > 20) throw std::invalid_argument("exhaustive oracle supports at most 20 role variables");
  MapResult out;
  std::vector<Dist2> mm(static_cast<std::size_t>(n), Dist2{0.0, 0.0});
  double best = -1.0;
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (graph.constraint && std::popcount(mask) != graph.n_evil) continue;
    bool ok = true;
    double score = 1.0;
    for (int j = 0; j < n && ok; ++j) {
      const int r = static_cast<int>((mask >> j) & 1u);
      const auto ju = static_cast<std::size_t>(j);
      if (graph.clamp[ju] && *graph.clamp[ju] != r) ok = false;
      score *= graph.conditional[ju][static_cast<std::size_t>(r)];
      if (priors) score *= r ? priors->p[ju] : 1.0 - priors->p[ju];
    }
    if (!ok) continue;
    ++out.assignments_enumerated;
    if (score > best) {
      best = score;
      best_mask = mask;
    }
    for (int j = 0; j < n; ++j) {
      auto& cell = mm[static_cast<std::size_t>(j)][(mask >> j) & 1u];
      cell = std::max(cell, score);
    }
  }
  out.best_score = best;
  for (int j = 0; j < n; ++j) out.assignment.push_back(static_cast<int>((best_mask >> j) & 1u));
  for (auto& d : mm) {
    const double s = d[0] + d[1];
    out.max_marginals.push_back(s > 0 ? Dist2{d[0] / s, d[1] / s} : Dist2{0.5, 0.5});
  }
  return out;
}

/// Per-variable decision from max-marginals: Evil iff b(Evil) > b(Good).
inline std::vector<int> argmax_assignment(const std::vector<Dist2>& max_marginals) {
  std::vector<int> a;
  for (const auto& d : max_marginals) a.push_back(d[1] > d[0] ? 1 : 0);
  return a;
}

}  // namespace grail

// Tournament runner, synthetic corpus generator, metrics and benchmarks.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "grail/agents.hpp"
#include "grail/game.hpp"
#include "grail/inference.hpp"
#include "grail/prior.hpp"
#include "grail/provider.hpp"
#include "grail/record.hpp"

namespace grail {

/// splitmix64 over (master, a, b): independent per-game and per-seat streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = master;
  for (std::uint64_t v : {a, b}) {
    z += 0x9E3779B97F4A7C15ULL + v * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

// ---------------------------------------------------------------- agent factory

/// Shared inputs for building agents. `provider` is asked once per LLM-backed
/// seat and may return null (GRAIL then runs without priors).
struct AgentResources {
  std::shared_ptr<const ConditionalFactorProvider> factors;
  std::function<std::shared_ptr<Provider>(std::uint64_t game, Seat seat)> provider;
};

inline BetaSchedule beta_from_json(const nlohmann::json& j) {
  if (j.is_number()) return BetaSchedule::constant(j.get<double>());
  BetaSchedule b;
  if (!j.is_array() || j.size() != static_cast<std::size_t>(kQuests)) throw std::invalid_argument("beta must be a number or 5 values");
  for (std::size_t i = 0; i < b.beta.size(); ++i) b.beta[i] = j[i].get<double>();
  b.validate();
  return b;
}

/// Agent spec: {"kind": "grail" | "grail-graph-only" | "random" | "scripted-evil" |
/// "scripted-good" | "llm", ...kind parameters}. A bare string is a kind.
inline std::unique_ptr<Agent> make_agent(const nlohmann::json& spec_in, Seat seat, std::uint64_t seed, std::uint64_t game,
                                         const AgentResources& res) {
  const nlohmann::json spec = spec_in.is_string() ? nlohmann::json{{"kind", spec_in}} : spec_in;
  const std::string kind = spec.at("kind").get<std::string>();
  auto llm = [&]() -> std::shared_ptr<Provider> { return res.provider ? res.provider(game, seat) : nullptr; };
  if (kind == "grail" || kind == "grail-graph-only") {
    GrailConfig cfg;
    cfg.graph_only = kind == "grail-graph-only" || spec.value("graph_only", false);
    if (spec.contains("beta")) cfg.beta = beta_from_json(spec["beta"]);
    if (cfg.graph_only) cfg.beta = BetaSchedule::zero();
    cfg.bp.max_iterations = spec.value("bp_max_iterations", cfg.bp.max_iterations);
    cfg.bp.epsilon = spec.value("bp_epsilon", cfg.bp.epsilon);
    if (!res.factors) throw std::invalid_argument("grail agents need factor model weights");
    return std::make_unique<GrailAgent>(seat, res.factors, cfg.graph_only ? nullptr : llm(), cfg, seed);
  }
  if (kind == "random") return std::make_unique<RandomAgent>(seed, spec.value("fail_probability", 1.0));
  if (kind == "scripted-evil")
    return std::make_unique<ScriptedEvilAgent>(
        seed, ScriptedEvilConfig{spec.value("fail_probability", 1.0), spec.value("reject_all_good", 1.0)});
  if (kind == "scripted-good") return std::make_unique<ScriptedGoodAgent>(seed, ScriptedGoodConfig{spec.value("vote_noise", 0.1)});
  if (kind == "llm") {
    auto p = llm();
    if (!p) throw std::invalid_argument("llm agents need a provider");
    return std::make_unique<LlmAgent>(seat, p, seed);
  }
  throw std::invalid_argument("unknown agent kind: " + kind);
}

// ---------------------------------------------------------------- single game

struct RunOptions {
  bool discussion = true;
  int max_events = 10000;
};

struct GameTiming {
  std::map<std::string, double> seconds;  // per agent kind, summed over decisions
  std::map<std::string, int> decisions;
};

/// Plays one game to completion. Agents are indexed by seat.
inline GameRecord run_game(std::array<std::unique_ptr<Agent>, kPlayers>& agents, const Roles& roles, std::uint64_t seed,
                           RunOptions opt = {}, GameTiming* timing = nullptr) {
  GameState g = new_game(seed, roles, GameOptions{opt.discussion});
  std::vector<Event> events;
  auto ask = [&](Seat s) {
    const auto start = std::chrono::steady_clock::now();
    auto d = decide(*agents[static_cast<std::size_t>(s)], make_view(g, s));
    if (timing) {
      const auto k = agents[static_cast<std::size_t>(s)]->kind();
      timing->seconds[k] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      ++timing->decisions[k];
    }
    return d;
  };
  auto push = [&](Event e) {
    g = apply_event(g, e);
    events.push_back(std::move(e));
    if (static_cast<int>(events.size()) > opt.max_events) throw std::runtime_error("game exceeded the event cap");
  };

  while (g.phase != Phase::Finished) {
    switch (g.phase) {
      case Phase::Proposal: push(std::get<Propose>(ask(g.leader))); break;
      case Phase::Discussion: {
        const Seat s = *g.active_speaker();
        auto d = ask(s);
        if (auto* p = std::get_if<Propose>(&d)) push(*p);
        else push(Say{s, std::get<Message>(d).text});
        break;
      }
      case Phase::PartyVote: {
        PartyVote v;
        for (Seat s = 0; s < kPlayers; ++s) v.approve[static_cast<std::size_t>(s)] = std::get<PartyBallot>(ask(s)).approve;
        push(v);
        break;
      }
      case Phase::QuestVote: {
        QuestVote v;
        for (Seat s : g.proposed->seats()) v.success[s] = std::get<QuestBallot>(ask(s)).success;
        push(v);
        break;
      }
      case Phase::Finished: break;
    }
  }

  GameRecord r = make_record(g, std::move(events));
  for (Seat s = 0; s < kPlayers; ++s) {
    const auto& a = *agents[static_cast<std::size_t>(s)];
    r.agents.push_back(a.kind());
    for (auto& b : a.belief_snapshots()) r.beliefs.push_back(b);
    for (auto& u : a.usage()) r.usage.push_back(u);
    r.params["seats"].push_back(a.params());
  }
  return r;
}

// ---------------------------------------------------------------- matchups

struct Matchup {
  std::array<nlohmann::json, 4> good;
  std::array<nlohmann::json, 2> evil;
  int games = 20;
  std::uint64_t seed = 0;
  bool discussion = true;
  int workers = 1;

  static Matchup from_json(const nlohmann::json& j) {
    Matchup m;
    const auto& g = j.at("good");
    const auto& e = j.at("evil");
    if (g.size() != 4 || e.size() != 2) throw std::invalid_argument("a matchup needs 4 Good and 2 Evil agents");
    for (std::size_t i = 0; i < 4; ++i) m.good[i] = g[i];
    for (std::size_t i = 0; i < 2; ++i) m.evil[i] = e[i];
    m.games = j.value("games", m.games);
    m.seed = j.value("seed", m.seed);
    m.discussion = j.value("discussion", m.discussion);
    m.workers = j.value("workers", m.workers);
    return m;
  }
};

/// Seat permutation for one game: the first four entries take the Good roster.
inline std::array<Seat, kPlayers> shuffled_seats(std::uint64_t seed) {
  std::array<Seat, kPlayers> seats{0, 1, 2, 3, 4, 5};
  std::mt19937_64 rng(seed);
  std::shuffle(seats.begin(), seats.end(), rng);
  return seats;
}

struct MatchupResult {
  std::vector<GameRecord> games;
  int invalid = 0;
  std::vector<std::string> errors;
  GameTiming timing;
};

inline GameRecord run_matchup_game(const Matchup& m, int index, const AgentResources& res, GameTiming* timing = nullptr) {
  const std::uint64_t game_seed = derive_seed(m.seed, static_cast<std::uint64_t>(index));
  const auto seats = shuffled_seats(game_seed);
  PlayerSet evil;
  evil.insert(seats[4]);
  evil.insert(seats[5]);
  std::array<std::unique_ptr<Agent>, kPlayers> agents;
  for (std::size_t i = 0; i < kPlayers; ++i) {
    const Seat s = seats[i];
    const auto& spec = i < 4 ? m.good[i] : m.evil[i - 4];
    agents[static_cast<std::size_t>(s)] = make_agent(spec, s, derive_seed(game_seed, 1, static_cast<std::uint64_t>(s)),
                                                     static_cast<std::uint64_t>(index), res);
  }
  auto r = run_game(agents, roles_from_evil(evil), game_seed, RunOptions{m.discussion}, timing);
  r.params["game"] = index;
  r.params["matchup_seed"] = m.seed;
  return r;
}

/// Runs every game of a matchup. Games that throw are counted as invalid and
/// left out; they are never re-run with another seed.
inline MatchupResult run_matchup(const Matchup& m, const AgentResources& res) {
  MatchupResult out;
  std::vector<std::optional<GameRecord>> slots(static_cast<std::size_t>(m.games));
  std::vector<std::string> errors(static_cast<std::size_t>(m.games));
  std::vector<GameTiming> timings(static_cast<std::size_t>(m.games));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < m.games; i = next++) {
      const auto k = static_cast<std::size_t>(i);
      try {
        slots[k] = run_matchup_game(m, i, res, &timings[k]);
      } catch (const std::exception& e) {
        errors[k] = "game " + std::to_string(i) + ": " + e.what();
      }
    }
  };
  const int workers = std::max(1, std::min(m.workers, m.games));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (slots[k]) out.games.push_back(std::move(*slots[k]));
    else {
      ++out.invalid;
      out.errors.push_back(errors[k]);
    }
    for (const auto& [kind, s] : timings[k].seconds) out.timing.seconds[kind] += s;
    for (const auto& [kind, n] : timings[k].decisions) out.timing.decisions[kind] += n;
  }
  return out;
}

// ---------------------------------------------------------------- metrics

struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

inline Estimate win_rate(const std::vector<GameRecord>& games, Alignment side = Alignment::Good) {
  if (games.empty()) throw std::invalid_argument("win rate of zero games");
  const auto n = static_cast<double>(games.size());
  const double wins = static_cast<double>(std::count_if(games.begin(), games.end(), [&](const GameRecord& g) { return g.winner == side; }));
  const double p = wins / n;
  return {p, std::sqrt(p * (1.0 - p) / n)};
}

struct VoteCounts {
  int tp = 0, fp = 0, fn = 0, tn = 0;
  VoteCounts& operator+=(const VoteCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  int total() const { return tp + fp + fn + tn; }
};

/// F1 with "reject" as the positive prediction for "party contains Evil".
inline double f1_score(int tp, int fp, int fn) {
  const int denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * tp / denom;
}
inline double f1_score(const VoteCounts& c) { return f1_score(c.tp, c.fp, c.fn); }

/// Which seats' ballots count; by default every Good seat.
using VoterFilter = std::function<bool(const GameRecord&, Seat)>;

inline VoterFilter good_voters() {
  return [](const GameRecord& g, Seat s) { return g.roles[static_cast<std::size_t>(s)] == Alignment::Good; };
}
inline VoterFilter voters_of_kind(const std::string& kind) {
  return [kind](const GameRecord& g, Seat s) {
    return g.roles[static_cast<std::size_t>(s)] == Alignment::Good && static_cast<std::size_t>(s) < g.agents.size() &&
           g.agents[static_cast<std::size_t>(s)] == kind;
  };
}

inline VoteCounts vote_counts(const GameRecord& g, int round, const VoterFilter& voters) {
  VoteCounts c;
  const PlayerSet evil = g.evil();
  for (const auto& p : g.proposals) {
    if (p.quest != round) continue;
    const bool truth = p.party.intersects(evil);
    for (Seat s = 0; s < kPlayers; ++s) {
      if (!voters(g, s)) continue;
      const bool predicted = !p.approvals[static_cast<std::size_t>(s)];
      if (predicted && truth) ++c.tp;
      else if (predicted) ++c.fp;
      else if (truth) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

/// Pooled F1 for one round with a leave-one-game-out jackknife standard error.
/// Empty when the round has no ballots.
inline std::optional<Estimate> voting_f1(const std::vector<GameRecord>& games, int round,
                                         const VoterFilter& voters = good_voters()) {
  std::vector<VoteCounts> per_game;
  VoteCounts total;
  for (const auto& g : games) {
    auto c = vote_counts(g, round, voters);
    if (c.total() == 0) continue;
    per_game.push_back(c);
    total += c;
  }
  if (per_game.empty()) return std::nullopt;
  Estimate e{f1_score(total), 0.0};
  const auto n = per_game.size();
  if (n > 1) {
    std::vector<double> loo;
    for (const auto& c : per_game) {
      VoteCounts rest = total;
      rest.tp -= c.tp;
      rest.fp -= c.fp;
      rest.fn -= c.fn;
      rest.tn -= c.tn;
      loo.push_back(f1_score(rest));
    }
    const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : loo) ss += (x - mean) * (x - mean);
    e.stderr_ = std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * ss);
  }
  return e;
}

struct TokenTotals {
  double input = 0.0, output = 0.0;
  int calls = 0;
};

/// Mean tokens per game, keyed by (agent kind, round).
inline std::map<std::pair<std::string, int>, TokenTotals> token_usage(const std::vector<GameRecord>& games) {
  std::map<std::pair<std::string, int>, TokenTotals> out;
  for (const auto& g : games)
    for (const auto& u : g.usage) {
      const std::string kind = static_cast<std::size_t>(u.seat) < g.agents.size() ? g.agents[static_cast<std::size_t>(u.seat)] : "?";
      auto& t = out[{kind, u.quest}];
      t.input += static_cast<double>(u.input_tokens);
      t.output += static_cast<double>(u.output_tokens);
      ++t.calls;
    }
  if (!games.empty())
    for (auto& [k, t] : out) {
      t.input /= static_cast<double>(games.size());
      t.output /= static_cast<double>(games.size());
    }
  return out;
}

inline nlohmann::json metrics_report(const std::vector<GameRecord>& games, int invalid = 0, const GameTiming* timing = nullptr) {
  nlohmann::json j;
  j["games"] = games.size();
  j["invalid"] = invalid;
  if (!games.empty()) {
    auto w = win_rate(games);
    j["good_win_rate"] = {{"value", w.value}, {"stderr", w.stderr_}};
  }
  std::map<std::string, bool> kinds;
  for (const auto& g : games)
    for (Seat s = 0; s < kPlayers && static_cast<std::size_t>(s) < g.agents.size(); ++s)
      if (g.roles[static_cast<std::size_t>(s)] == Alignment::Good) kinds[g.agents[static_cast<std::size_t>(s)]] = true;
  for (const auto& [kind, _] : kinds)
    for (int round = 1; round <= kQuests; ++round) {
      auto f = voting_f1(games, round, voters_of_kind(kind));
      j["voting_f1"][kind][std::to_string(round)] =
          f ? nlohmann::json{{"value", f->value}, {"stderr", f->stderr_}} : nlohmann::json(nullptr);
    }
  for (const auto& [key, t] : token_usage(games))
    j["tokens_per_game"][key.first][std::to_string(key.second)] = {{"input", t.input}, {"output", t.output}, {"calls", t.calls}};
  if (timing)
    for (const auto& [kind, s] : timing->seconds)
      j["seconds_per_decision"][kind] = s / std::max(1, timing->decisions.at(kind));
  return j;
}

// ---------------------------------------------------------------- belief traces

/// CSV of per-round beliefs from every observer's snapshots.
inline void export_belief_traces(const std::vector<GameRecord>& games, std::ostream& out) {
  out << "game,round,observer,player,true_role,belief_with_prior,belief_without_prior\n";
  bool any = false;
  for (std::size_t gi = 0; gi < games.size(); ++gi) {
    const auto& g = games[gi];
    const std::string game = g.params.contains("game") ? g.params["game"].dump() : std::to_string(gi);
    for (const auto& b : g.beliefs) {
      if (b.with_prior.size() != kPlayers || b.without_prior.size() != kPlayers)
        throw std::runtime_error("game " + game + " has a snapshot without both prior settings");
      any = true;
      for (Seat p = 0; p < kPlayers; ++p) {
        std::ostringstream row;
        row.precision(10);
        row << game << ',' << b.quest << ',' << b.observer << ',' << p << ',' << to_string(g.roles[static_cast<std::size_t>(p)])
            << ',' << b.with_prior[static_cast<std::size_t>(p)] << ',' << b.without_prior[static_cast<std::size_t>(p)] << '\n';
        out << row.str();
      }
    }
  }
  if (!any) throw std::runtime_error("logs contain no belief snapshots");
}

// ---------------------------------------------------------------- synthetic corpus

struct CorpusConfig {
  ScriptedEvilConfig evil;
  ScriptedGoodConfig good;
  std::uint64_t seed = 0;
};

/// Scripted self-play without discussion. Writes a header line then one game per line.
inline void generate_synthetic_corpus(int n_games, const CorpusConfig& cfg, std::ostream& out) {
  if (n_games < 1) throw std::invalid_argument("corpus needs at least one game");
  Matchup m;
  nlohmann::json good = {{"kind", "scripted-good"}, {"vote_noise", cfg.good.vote_noise}};
  nlohmann::json evil = {{"kind", "scripted-evil"},
                         {"fail_probability", cfg.evil.fail_probability},
                         {"reject_all_good", cfg.evil.reject_all_good}};
  m.good.fill(good);
  m.evil.fill(evil);
  m.seed = cfg.seed;
  m.discussion = false;
  const nlohmann::json header = {{"generator", "scripted-self-play"}, {"games", n_games}, {"seed", cfg.seed},
                                 {"good", good}, {"evil", evil}};
  out << nlohmann::json{{"header", header}}.dump() << '\n';
  for (int i = 0; i < n_games; ++i) {
    auto r = run_matchup_game(m, i, {});
    r.params = {{"game", i}};
    out << to_jsonl_line(r) << '\n';
  }
}

inline std::vector<GameRecord> synthetic_corpus(int n_games, const CorpusConfig& cfg) {
  std::stringstream s;
  generate_synthetic_corpus(n_games, cfg, s);
  std::vector<GameRecord> out;
  for_each_record(s, [&](GameRecord&& r) { out.push_back(std::move(r)); });
  return out;
}

// ---------------------------------------------------------------- scalability

struct BenchRow {
  int roles = 0;
  int evil = 0;
  double mean_seconds = 0.0;
  double mean_iterations = 0.0;
};

/// Mean BP wall time on random conditional factors, one self seat clamped.
/// Each state is solved `repeats` times so short runs are measurable.
inline std::vector<BenchRow> scalability_bench(const std::vector<int>& role_counts, int trials, std::uint64_t seed,
                                               int repeats = 200) {
  std::vector<BenchRow> rows;
  for (int n : role_counts) {
    if (n < 2 || n > 32) throw std::invalid_argument("role count out of range");
    BenchRow row{n, static_cast<int>(std::lround(n / 3.0)), 0.0, 0.0};
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int t = 0; t < trials; ++t) {
      std::vector<double> p(static_cast<std::size_t>(n));
      for (auto& x : p) x = u(rng);
      const auto g = build_graph_from_probabilities(p, row.evil, 0);
      int iterations = 0;
      const auto start = std::chrono::steady_clock::now();
      for (int r = 0; r < repeats; ++r) iterations = run_max_product(g).iterations;
      row.mean_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / repeats;
      row.mean_iterations += iterations;
    }
    row.mean_seconds /= trials;
    row.mean_iterations /= trials;
    rows.push_back(row);
  }
  return rows;
}

/// Coefficient of determination of the least-squares line through (x, y).
inline double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

}  // namespace grail

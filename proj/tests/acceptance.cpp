// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "grail/factor_model.hpp"
#include "grail/harness.hpp"
#include "test_support.hpp"

namespace grail {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- shared models

struct Models {
  std::vector<GameRecord> test_games;
  std::vector<TrainingSample> test_set;
  std::map<int, double> f1_by_games;
  std::shared_ptr<FactorModel> main;   // trained on the largest corpus
  std::shared_ptr<FactorModel> small;  // 250 games: overfit, so overconfident
  std::vector<TrainingSample> heldout;
  double gradient_error = 0.0;
  double seconds = 0.0;
};

Models& models() {
  static Models m = [] {
    Models out;
    const auto start = Clock::now();
    const CorpusConfig cfg{{0.7, 1.0}, {0.1}, 1};
    const auto corpus = synthetic_corpus(40000, cfg);
    out.test_games = synthetic_corpus(2000, {cfg.evil, cfg.good, 2});
    out.test_set = build_dataset(out.test_games, {.rotations = false});
    const auto val_games = synthetic_corpus(1000, {cfg.evil, cfg.good, 3});
    out.heldout = build_dataset(val_games, {.rotations = false});

    for (int n : {250, 2500, 5000, 40000}) {
      std::vector<GameRecord> sub(corpus.begin(), corpus.begin() + n);
      TrainConfig tc;
      tc.learning_rate = 3e-3;
      tc.batch_size = 256;
      tc.patience = 5;
      tc.max_epochs = n >= 5000 ? 15 : 60;
      tc.seed = 7;
      auto res = train(build_dataset(sub, {.rotations = false}), out.heldout, tc);
      out.f1_by_games[n] = evaluate(res.model, out.test_set).f1();
      if (n == 250) out.small = std::make_shared<FactorModel>(res.model);
      if (n == 40000) out.main = std::make_shared<FactorModel>(std::move(res.model));
    }

    std::vector<EncodedState> x;
    std::vector<int> y;
    for (std::size_t i = 0; i < 16; ++i) {
      const auto& s = out.test_set[i * 37 % out.test_set.size()];
      x.push_back(s.features);
      y.push_back(s.label);
    }
    out.gradient_error = gradient_check(FactorModel(5), x, y);
    out.seconds = seconds_since(start);
    return out;
  }();
  return m;
}

// ---------------------------------------------------------------- criteria

Outcome a1() {
  const auto start = Clock::now();
  const auto truth = test::enumerate_intro_example(0.7);
  std::vector<double> exact(truth.posterior_evil.begin(), truth.posterior_evil.end());
  const auto r = run_max_product(build_graph_from_probabilities(exact, 2, std::nullopt, GraphOptions{.exact_factors = true}));
  double worst = 0.0;
  for (std::size_t j = 0; j < 5; ++j) worst = std::max(worst, std::abs(r.beliefs[j] - truth.max_marginals[j][1]));
  const double t = seconds_since(start);
  return {std::abs(r.beliefs[4]) < 1e-6 && truth.posterior_evil[4] == 0.0 && worst < 1e-6 && t < 1.0,
          fmt("b(Eve)=%.2g max|bp-enum|=%.2g %.3fs", r.beliefs[4], worst, t)};
}

Outcome a2() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  int agree = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(6);
    for (auto& x : p) x = u(rng);
    const auto g = build_graph_from_probabilities(p, kEvilCount, std::nullopt);
    agree += argmax_assignment(run_max_product(g).max_marginals) == exhaustive_map_oracle(g).assignment;
  }
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(6);
    for (auto& x : p) x = u(rng);
    const auto g = build_graph_from_probabilities(p, kEvilCount, std::nullopt, GraphOptions{.constraint = false});
    PriorVector pr;
    for (int j = 0; j < 6; ++j) pr.p.push_back(u(rng));
    const auto bp = run_max_product(g, {}, pr);
    const auto o = exhaustive_map_oracle(g, pr);
    for (std::size_t j = 0; j < 6; ++j) worst = std::max(worst, std::abs(bp.max_marginals[j][1] - o.max_marginals[j][1]));
  }
  return {agree >= 950 && worst < 1e-9, fmt("argmax agreement %d/1000, tree max error %.2g", agree, worst)};
}

Outcome a3() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::uniform_int_distribution<int> seat(-1, 5);
  int ok = 0, max_iter = 0;
  const int runs = 2000;
  for (int t = 0; t < runs; ++t) {
    std::vector<double> p(6);
    for (auto& x : p) x = u(rng);
    const int s = seat(rng);
    const auto g = build_graph_from_probabilities(p, kEvilCount, s < 0 ? std::nullopt : std::optional<Seat>(s));
    const auto r = run_max_product(g);
    max_iter = std::max(max_iter, r.iterations);
    ok += r.iterations <= 20 && r.final_kl < 1e-6;
  }
  return {max_iter <= 20 && ok >= runs * 99 / 100, fmt("%d/%d converged, max iterations %d", ok, runs, max_iter)};
}

Outcome a4() {
  bool exact = true;
  for (double beta : {0.0, 0.05, 0.1, 0.15, 0.25, 0.49}) {
    PriorJudgment j;
    j.deltas = {Delta::Higher, Delta::Lower, Delta::Same, Delta::Higher, Delta::Lower, Delta::Same};
    const auto p = to_prior(j, beta).p;
    exact &= p[0] == 0.5 + beta && p[1] == 0.5 - beta && p[2] == 0.5 && p[3] == 0.5 + beta && p[4] == 0.5 - beta;
  }

  // Same seeds, same factors and the same chat provider; only the prior path differs.
  auto factors = models().main;
  int identical = 0;
  for (std::uint64_t game = 0; game < 20; ++game) {
    auto run = [&](bool graph_only) {
      std::array<std::unique_ptr<Agent>, kPlayers> agents;
      const auto seats = shuffled_seats(game);
      for (std::size_t i = 0; i < kPlayers; ++i) {
        const Seat s = seats[i];
        const auto seed = derive_seed(game, 1, static_cast<std::uint64_t>(s));
        if (i < 4) {
          GrailConfig cfg;
          cfg.beta = BetaSchedule::zero();
          cfg.graph_only = graph_only;
          agents[static_cast<std::size_t>(s)] = std::make_unique<GrailAgent>(s, factors, std::make_shared<ScriptedProvider>(), cfg, seed);
        } else {
          agents[static_cast<std::size_t>(s)] = std::make_unique<RandomAgent>(seed);
        }
      }
      PlayerSet evil{seats[4], seats[5]};
      return run_game(agents, roles_from_evil(evil), game);
    };
    auto a = run(false), b = run(true);
    bool same = a.events.size() == b.events.size() && a.winner == b.winner && a.beliefs.size() == b.beliefs.size();
    for (std::size_t i = 0; same && i < a.events.size(); ++i) same = event_to_json(a.events[i]) == event_to_json(b.events[i]);
    for (std::size_t i = 0; same && i < a.beliefs.size(); ++i) same = a.beliefs[i].with_prior == b.beliefs[i].with_prior;
    identical += same;
  }
  return {exact && identical == 20, fmt("prior mapping exact=%d, %d/20 games bit-identical", exact, identical)};
}

Outcome a5() {
  bool tables = party_code_count(2) == 15 && party_code_count(3) == 20 && party_code_count(4) == 15 && vote_code_count() == 22;
  bool round_trip = true;
  for (int k : {2, 3, 4})
    for (int c = 1; c <= party_code_count(k); ++c) round_trip &= encode_party(decode_party(c, k), k) == c;
  for (int c = 1; c <= vote_code_count(); ++c) round_trip &= encode_vote(decode_vote(c)) == c;
  std::mt19937_64 rng(99);
  int failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto s = test::random_encoded_state(rng);
    for (int a = 1; a <= kPlayers; ++a)
      for (int b = 1; b <= kPlayers; ++b)
        failures += ego_transform(ego_transform(s, a), b) != ego_transform(s, ((a - 1 + b - 1) % kPlayers) + 1);
  }
  return {tables && round_trip && failures == 0, fmt("tables 15/20/15/22=%d round-trip=%d ego failures %d", tables, round_trip, failures)};
}

Outcome a6() {
  const auto& m = models();
  const double f250 = m.f1_by_games.at(250), f2k = m.f1_by_games.at(2500), f5k = m.f1_by_games.at(5000),
               f40k = m.f1_by_games.at(40000);
  const bool pass = std::abs(f5k - f40k) <= 0.03 && f2k - f250 >= 0.05 && m.gradient_error < 1e-4 && m.seconds < 600;
  return {pass, fmt("F1 250=%.3f 2.5k=%.3f 5k=%.3f 40k=%.3f, grad err %.1e, %.0fs", f250, f2k, f5k, f40k, m.gradient_error, m.seconds)};
}

double test_ece(const FactorModel& m, const std::vector<TrainingSample>& samples) {
  const Eigen::RowVectorXd z = batched_logits(m, samples);
  std::vector<double> p;
  std::vector<int> y;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    p.push_back(FactorModel::sigmoid(z(static_cast<Eigen::Index>(i)) / m.temperature()));
    y.push_back(samples[i].label);
  }
  return expected_calibration_error(p, y);
}

// T is fit on one held-out split and ECE is measured on another.
Outcome a7() {
  FactorModel m = *models().small;
  const double before = test_ece(m, models().test_set);
  const auto r = calibrate(m, models().heldout);
  const double after = test_ece(m, models().test_set);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> z(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> logits;
  std::vector<int> labels;
  for (int i = 0; i < 100000; ++i) {
    const double l = z(rng);
    logits.push_back(3.0 * l);
    labels.push_back(u(rng) < FactorModel::sigmoid(l) ? 1 : 0);
  }
  const double t = fit_temperature(logits, labels);
  return {after < before && r.ece_after < r.ece_before && std::abs(t - 3.0) <= 0.3,
          fmt("ECE test %.4f -> %.4f, fit split %.4f -> %.4f (T=%.3f); recovered T=%.3f", before, after, r.ece_before, r.ece_after,
              r.temperature, t)};
}

Outcome a8() {
  const auto rows = scalability_bench({6, 8, 10, 12, 14, 16, 18, 20}, 20, 5, 100);
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(r.roles * std::log2(static_cast<double>(r.roles)));
    y.push_back(r.mean_seconds);
  }
  const double ratio = rows.back().mean_seconds / rows.front().mean_seconds;
  const double r2 = linear_r2(x, y);
  return {ratio <= 5.0 && r2 >= 0.9, fmt("time(20)/time(6)=%.2f, R^2 vs N log N=%.4f", ratio, r2)};
}

Outcome a9() {
  auto factors = models().main;
  int bad_approvals = 0, approvals_checked = 0, good_fails = 0, first_seen = 0, first_approved = 0;
  for (std::uint64_t game = 0; game < 200; ++game) {
    const auto seed = derive_seed(900, game);
    const auto seats = shuffled_seats(seed);
    std::array<std::unique_ptr<Agent>, kPlayers> agents;
    std::vector<GrailAgent*> grail;
    for (std::size_t i = 0; i < kPlayers; ++i) {
      const Seat s = seats[i];
      const auto agent_seed = derive_seed(seed, 1, static_cast<std::uint64_t>(s));
      if (i < 4) {
        GrailConfig cfg;
        cfg.graph_only = true;
        cfg.beta = BetaSchedule::zero();
        auto a = std::make_unique<GrailAgent>(s, factors, nullptr, cfg, agent_seed);
        grail.push_back(a.get());
        agents[static_cast<std::size_t>(s)] = std::move(a);
      } else {
        agents[static_cast<std::size_t>(s)] = std::make_unique<ScriptedEvilAgent>(agent_seed);
      }
    }
    const auto rec = run_game(agents, roles_from_evil(PlayerSet{seats[4], seats[5]}), seed, RunOptions{false});
    for (const auto* a : grail)
      for (const auto& b : a->ballots()) {
        if (b.first_proposal) {
          ++first_seen;
          first_approved += b.approve;
          continue;
        }
        if (b.quest < 2 || !b.approve) continue;
        ++approvals_checked;
        for (Seat m : b.party.seats()) bad_approvals += agent_detail::snapped(b.beliefs[static_cast<std::size_t>(m)]) >= agent_detail::kHalf;
      }
    for (const auto& e : rec.events)
      if (const auto* q = std::get_if<QuestVote>(&e))
        for (const auto& [s, ok] : q->success) good_fails += rec.roles[static_cast<std::size_t>(s)] == Alignment::Good && !ok;
  }
  return {bad_approvals == 0 && good_fails == 0 && first_seen > 0 && first_approved == first_seen,
          fmt("%d approvals with a member at b>=0.5 (of %d), %d Good fail ballots, first proposal approved %d/%d", bad_approvals,
              approvals_checked, good_fails, first_approved, first_seen)};
}

std::shared_ptr<FactorModel> fit_on_logs(std::vector<GameRecord> games) {
  const auto val = std::vector<GameRecord>(games.end() - static_cast<long>(games.size() / 10), games.end());
  games.resize(games.size() - val.size());
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.patience = 5;
  tc.max_epochs = 30;
  tc.seed = 7;
  auto res = train(build_dataset(games, {.rotations = false}), build_dataset(val, {.rotations = false}), tc);
  return std::make_shared<FactorModel>(std::move(res.model));
}

// Factors come from harness logs: random play, then one round of graph-only
// GRAIL against random Evil. Training seeds differ from the evaluation seeds.
Outcome a10() {
  const auto start = Clock::now();
  AgentResources res;
  auto logs = [&](const char* good, std::uint64_t seed) {
    Matchup m;
    m.good.fill(good);
    m.evil.fill("random");
    m.games = 5000;
    m.seed = seed;
    m.discussion = false;
    return run_matchup(m, res).games;
  };
  res.factors = fit_on_logs(logs("random", 1001));
  res.factors = fit_on_logs(logs("grail-graph-only", 1002));
  auto rate = [&](const char* good, const char* evil, std::uint64_t seed) {
    Matchup m;
    m.good.fill(good);
    m.evil.fill(evil);
    m.games = 200;
    m.seed = seed;
    m.discussion = false;
    auto r = run_matchup(m, res);
    if (r.invalid) throw std::runtime_error("invalid games in matchup: " + r.errors.front());
    return win_rate(r.games).value;
  };
  const double sanity = rate("random", "scripted-evil", 41);
  const double random_good = rate("random", "random", 42);
  const double graph_only = rate("grail-graph-only", "random", 42);
  const double t = seconds_since(start);
  return {sanity <= 0.05 && graph_only - random_good >= 0.5 && t < 300,
          fmt("random vs scripted-evil %.3f; vs random Evil: random %.3f, graph-only %.3f; %.0fs", sanity, random_good, graph_only, t)};
}

Outcome a11() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("grail_fixtures_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  Matchup m;
  m.good = {"grail", "grail", "llm", "random"};
  m.evil = {"llm", "random"};
  m.games = 3;
  m.seed = 77;
  auto play = [&](AgentResources res) {
    res.factors = models().main;
    auto r = run_matchup(m, res);
    if (r.invalid) throw std::runtime_error(r.errors.front());
    std::string out;
    for (const auto& g : r.games) out += to_jsonl_line(g) + "\n";
    return out;
  };
  AgentResources rec;
  rec.provider = [&](std::uint64_t, Seat) {
    return std::make_shared<RecordingProvider>(std::make_shared<ScriptedProvider>(), dir);
  };
  const auto recorded = play(rec);
  AgentResources replay_res;
  replay_res.provider = [&](std::uint64_t, Seat) { return std::make_shared<FixtureProvider>(dir); };
  const auto replayed = play(replay_res);
  std::size_t fixtures = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++fixtures;
  fs::remove_all(dir);
  return {recorded == replayed && !recorded.empty(), fmt("%zu fixtures, %zu bytes, identical=%d", fixtures, recorded.size(), recorded == replayed)};
}

}  // namespace
}  // namespace grail

int main() {
  const std::vector<std::pair<std::string, std::function<grail::Outcome()>>> criteria{
      {"A1", grail::a1}, {"A2", grail::a2}, {"A3", grail::a3}, {"A4", grail::a4},   {"A5", grail::a5},   {"A6", grail::a6},
      {"A7", grail::a7}, {"A8", grail::a8}, {"A9", grail::a9}, {"A10", grail::a10}, {"A11", grail::a11},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    grail::Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " failed" : std::string("acceptance: all passed")) << std::endl;
  return failed ? 1 : 0;
}

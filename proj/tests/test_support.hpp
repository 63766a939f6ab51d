// Shared generators for the test suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "grail/codec.hpp"
#include "grail/record.hpp"

namespace grail::test {

inline PlayerSet random_subset(std::mt19937_64& rng, int k) {
  std::vector<Seat> seats{0, 1, 2, 3, 4, 5};
  std::shuffle(seats.begin(), seats.end(), rng);
  seats.resize(static_cast<std::size_t>(k));
  return PlayerSet::from_seats(seats);
}

inline PlayerSet random_evil(std::mt19937_64& rng) { return random_subset(rng, kEvilCount); }

inline EncodedState random_encoded_state(std::mt19937_64& rng, int rounds = -1) {
  if (rounds < 0) rounds = std::uniform_int_distribution<int>(0, kQuests)(rng);
  EncodedState e;
  for (int q = 0; q < rounds; ++q) {
    auto i = static_cast<std::size_t>(q);
    e.party[i] = encode_party(random_subset(rng, kPartySizes[i]), kPartySizes[i]);
    e.vote[i] = encode_vote(random_subset(rng, std::uniform_int_distribution<int>(4, 6)(rng)));
    e.outcome[i] = std::uniform_int_distribution<int>(1, 2)(rng);
  }
  return e;
}

/// Random legal play without discussion: random parties, each ballot approves
/// with probability 2/3, Evil party members fail with probability `evil_fail`.
inline GameRecord random_record(std::uint64_t seed, double evil_fail = 0.8) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution approve(2.0 / 3.0), fail(evil_fail);
  auto g = new_game(seed, std::nullopt, GameOptions{false});
  std::vector<Event> events;
  while (g.phase != Phase::Finished) {
    Event e;
    if (g.phase == Phase::Proposal) {
      e = Propose{random_subset(rng, g.party_size())};
    } else if (g.phase == Phase::PartyVote) {
      PartyVote v;
      for (auto& b : v.approve) b = approve(rng);
      e = v;
    } else {
      QuestVote q;
      for (Seat s : g.proposed->seats())
        q.success[s] = g.roles[static_cast<std::size_t>(s)] == Alignment::Good || !fail(rng);
      e = q;
    }
    g = apply_event(g, e);
    events.push_back(e);
  }
  return make_record(g, events);
}

/// Five players A..E, two Evil; parties {A,B} and {C,D} both failed; each Evil
/// member fails a quest with probability q. Exhaustive enumeration over the 10
/// role pairs, weighted by the fail likelihoods.
struct IntroExample {
  std::array<double, 5> posterior_evil{};    // sum over pairs containing j
  std::array<std::array<double, 2>, 5> max_marginals{};  // normalized max over pairs
  int pairs = 0;
};

inline IntroExample enumerate_intro_example(double q = 0.7) {
  const std::array<std::array<int, 2>, 2> parties{{{0, 1}, {2, 3}}};
  std::array<double, 5> mass{};
  std::array<std::array<double, 2>, 5> mm{};
  double total = 0.0;
  IntroExample out;
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b) {
      ++out.pairs;
      double lik = 1.0;
      for (const auto& p : parties) {
        int evil_on_party = (p[0] == a || p[0] == b) + (p[1] == a || p[1] == b);
        lik *= 1.0 - std::pow(1.0 - q, evil_on_party);
      }
      total += lik;
      for (int j = 0; j < 5; ++j) {
        const int r = (j == a || j == b) ? 1 : 0;
        if (r) mass[static_cast<std::size_t>(j)] += lik;
        auto& cell = mm[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
        cell = std::max(cell, lik);
      }
    }
  for (std::size_t j = 0; j < 5; ++j) {
    out.posterior_evil[j] = mass[j] / total;
    const double s = mm[j][0] + mm[j][1];
    out.max_marginals[j] = {mm[j][0] / s, mm[j][1] / s};
  }
  return out;
}

}  // namespace grail::test

// Agent policies: GRAIL, plus the baselines used for simulation and data
// generation (random, scripted Evil, scripted Good, an LLM reasoning agent).
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "grail/codec.hpp"
#include "grail/game.hpp"
#include "grail/inference.hpp"
#include "grail/prior.hpp"
#include "grail/provider.hpp"
#include "grail/record.hpp"

namespace grail {

/// What one seat may see: the public state, its own role, and (Evil only) the Evil team.
struct AgentView {
  PublicState state;
  Seat self = 0;
  Alignment role = Alignment::Good;
  PlayerSet known_evil;
};

inline AgentView make_view(const GameState& g, Seat seat) {
  AgentView v;
  v.state = static_cast<const PublicState&>(g);
  v.self = seat;
  v.role = g.roles[static_cast<std::size_t>(seat)];
  if (v.role == Alignment::Evil) v.known_evil = g.evil();
  return v;
}

struct Message {
  std::string text;
};
struct PartyBallot {
  bool approve = true;
};
struct QuestBallot {
  bool success = true;
};
using AgentDecision = std::variant<Propose, Message, PartyBallot, QuestBallot>;

/// One party ballot with the beliefs behind it (GRAIL only; used for audits).
struct BallotLog {
  int quest = 0;
  PlayerSet party;
  bool approve = false;
  bool first_proposal = false;
  std::vector<double> beliefs;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string kind() const = 0;
  virtual PlayerSet propose(const AgentView& v) = 0;
  /// Called on the leader's closing discussion turn; a party to switch to, if any.
  virtual std::optional<PlayerSet> revise(const AgentView&) { return std::nullopt; }
  virtual std::string speak(const AgentView& v) = 0;
  virtual bool approve(const AgentView& v) = 0;
  virtual bool quest_success(const AgentView& v) = 0;

  virtual std::vector<BeliefSnapshot> belief_snapshots() const { return {}; }
  virtual std::vector<UsageRecord> usage() const { return {}; }
  virtual nlohmann::json params() const { return nlohmann::json::object(); }
};

/// Dispatches on phase. On the leader's closing turn a revision comes first,
/// then (on the next call) the closing message.
inline AgentDecision decide(Agent& agent, const AgentView& v) {
  const auto& s = v.state;
  switch (s.phase) {
    case Phase::Proposal: return Propose{agent.propose(v)};
    case Phase::Discussion:
      if (s.closing_turn() && s.leader == v.self && !s.revision_used)
        if (auto p = agent.revise(v); p && *p != s.proposed) return Propose{*p};
      return Message{agent.speak(v)};
    case Phase::PartyVote: return PartyBallot{agent.approve(v)};
    case Phase::QuestVote: return QuestBallot{agent.quest_success(v)};
    case Phase::Finished: break;
  }
  throw RuleError("no decision in a finished game");
}

namespace agent_detail {

inline PlayerSet random_party(std::mt19937_64& rng, int size) {
  std::uniform_int_distribution<int> code(1, party_code_count(size));
  return decode_party(code(rng), size);
}

/// Seats ordered by belief (snapped to 1e-9 so float noise cannot reorder
/// equal values), ties to the lower seat.
inline std::vector<Seat> rank_by_belief(const std::vector<double>& b) {
  std::vector<Seat> order(b.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Seat x, Seat y) {
    return std::llround(b[static_cast<std::size_t>(x)] * 1e9) < std::llround(b[static_cast<std::size_t>(y)] * 1e9);
  });
  return order;
}

inline long long snapped(double b) { return std::llround(b * 1e9); }
inline constexpr long long kHalf = 500000000;

inline PlayerSet lowest(const std::vector<double>& b, int k) {
  auto order = rank_by_belief(b);
  PlayerSet s;
  for (int i = 0; i < k; ++i) s.insert(order[static_cast<std::size_t>(i)]);
  return s;
}

}  // namespace agent_detail

// ---------------------------------------------------------------- GRAIL

struct GrailConfig {
  BetaSchedule beta;
  bool graph_only = false;  // beta = 0 and no prior extraction
  BPConfig bp;
  bool trace_without_prior = true;

  nlohmann::json to_json() const {
    return {{"beta", beta.beta}, {"graph_only", graph_only}, {"bp_max_iterations", bp.max_iterations},
            {"bp_epsilon", bp.epsilon}};
  }
};

/// Good-only agent: beliefs from max-product BP over the factor graph, with
/// language priors entering as unary factors.
class GrailAgent final : public Agent {
 public:
  GrailAgent(Seat self, std::shared_ptr<const ConditionalFactorProvider> factors, std::shared_ptr<Provider> llm,
             GrailConfig cfg, std::uint64_t seed)
      : self_(self), factors_(std::move(factors)), llm_(std::move(llm)), cfg_(cfg), rng_(seed) {
    if (!factors_) throw std::invalid_argument("GRAIL needs a conditional factor provider");
    cfg_.beta.validate();
  }

  std::string kind() const override { return cfg_.graph_only ? "grail-graph-only" : "grail"; }

  /// Refreshes and returns the Evil beliefs b_j (self clamped at 0).
  std::vector<double> beliefs(const PublicState& s) {
    const EncodedState evidence = encode_state(s);
    const FactorGraph g = build_graph(evidence, self_, *factors_);
    const int quest = std::min(s.quest_index, kQuests);
    const double beta = cfg_.graph_only ? 0.0 : cfg_.beta.at(quest);
    PriorJudgment j;
    if (auto it = judgments_.find(quest); it != judgments_.end()) j = it->second;
    const auto with = run_max_product(g, cfg_.bp, to_prior(j, beta));
    BeliefSnapshot snap{self_, quest, with.beliefs.evil, {}};
    if (cfg_.trace_without_prior) snap.without_prior = run_max_product(g, cfg_.bp).beliefs.evil;
    snapshots_[quest] = snap;
    return with.beliefs.evil;
  }

  PlayerSet propose(const AgentView& v) override {
    const auto b = beliefs(v.state);
    if (v.state.quest_index == 1) return agent_detail::random_party(rng_, v.state.party_size());
    return agent_detail::lowest(b, v.state.party_size());
  }

  std::optional<PlayerSet> revise(const AgentView& v) override {
    if (!v.state.proposed) return std::nullopt;
    const auto b = beliefs(v.state);
    const PlayerSet preferred = agent_detail::lowest(b, v.state.party_size());
    if (v.state.quest_index == 1) {
      if (!would_approve(*v.state.proposed, b, 1)) return preferred;
      return std::nullopt;
    }
    if (preferred != *v.state.proposed) return preferred;
    return std::nullopt;
  }

  std::string speak(const AgentView& v) override {
    const auto& s = v.state;
    const int quest = s.quest_index;
    PromptView pv = prompt_view(s, self_);
    pv.beliefs = beliefs(s);
    if (llm_ && !cfg_.graph_only) {
      auto e = extract_prior(*llm_, pv);
      judgments_[quest] = e.judgment;
      record_usage(quest, "prior", e.usage);
      pv.beliefs = beliefs(s);
    }
    MessageKind kind = MessageKind::Discussion;
    if (s.leader == self_) {
      if (s.next_speaker == 0) kind = MessageKind::ProposalPitch;
      else if (s.revision_used) kind = MessageKind::Revision;
    }
    if (!llm_) return fallback_message(kind, pv, s.proposed);
    auto m = generate_message(*llm_, kind, pv, s.proposed);
    record_usage(quest, "message", m.usage);
    return m.text;
  }

  bool approve(const AgentView& v) override {
    const auto& s = v.state;
    const auto b = beliefs(s);
    const bool first = s.is_first_proposal_of_game();
    const bool yes = first || would_approve(*s.proposed, b, s.quest_index);
    ballots_.push_back({s.quest_index, *s.proposed, yes, first, b});
    return yes;
  }

  bool quest_success(const AgentView&) override { return true; }

  std::vector<BeliefSnapshot> belief_snapshots() const override {
    std::vector<BeliefSnapshot> out;
    for (const auto& [q, snap] : snapshots_) out.push_back(snap);
    return out;
  }
  std::vector<UsageRecord> usage() const override { return usage_; }
  nlohmann::json params() const override { return cfg_.to_json(); }
  const std::vector<BallotLog>& ballots() const { return ballots_; }
  void set_judgment(int quest, const PriorJudgment& j) { judgments_[quest] = j; }

  /// Every member below 0.5; in quest 1 a member at exactly 0.5 still passes.
  static bool would_approve(PlayerSet party, const std::vector<double>& b, int quest) {
    for (Seat m : party.seats()) {
      const long long x = agent_detail::snapped(b[static_cast<std::size_t>(m)]);
      if (quest == 1 ? x > agent_detail::kHalf : x >= agent_detail::kHalf) return false;
    }
    return true;
  }

 private:
  void record_usage(int quest, const std::string& purpose, const ProviderUsage& u) {
    usage_.push_back({self_, quest, purpose, u.input_tokens, u.output_tokens, u.latency_s});
  }

  Seat self_;
  std::shared_ptr<const ConditionalFactorProvider> factors_;
  std::shared_ptr<Provider> llm_;
  GrailConfig cfg_;
  std::mt19937_64 rng_;
  std::map<int, PriorJudgment> judgments_;
  std::map<int, BeliefSnapshot> snapshots_;
  std::vector<UsageRecord> usage_;
  std::vector<BallotLog> ballots_;
};

// ---------------------------------------------------------------- baselines

/// Uniform legal choices; Good always succeeds, Evil fails with probability q.
class RandomAgent final : public Agent {
 public:
  RandomAgent(std::uint64_t seed, double fail_probability = 1.0) : rng_(seed), q_(fail_probability) {}
  std::string kind() const override { return "random"; }
  PlayerSet propose(const AgentView& v) override { return agent_detail::random_party(rng_, v.state.party_size()); }
  std::string speak(const AgentView&) override { return "hmm."; }
  bool approve(const AgentView&) override { return std::bernoulli_distribution(0.5)(rng_); }
  bool quest_success(const AgentView& v) override {
    if (v.role == Alignment::Good) return true;
    return !std::bernoulli_distribution(q_)(rng_);
  }
  nlohmann::json params() const override { return {{"fail_probability", q_}}; }

 private:
  std::mt19937_64 rng_;
  double q_;
};

struct ScriptedEvilConfig {
  double fail_probability = 1.0;
  double reject_all_good = 1.0;
};

/// Proposes itself plus Good players, backs any party with an Evil member.
class ScriptedEvilAgent final : public Agent {
 public:
  ScriptedEvilAgent(std::uint64_t seed, ScriptedEvilConfig cfg = {}) : rng_(seed), cfg_(cfg) {}
  std::string kind() const override { return "scripted-evil"; }

  PlayerSet propose(const AgentView& v) override {
    if (v.role != Alignment::Evil) return agent_detail::random_party(rng_, v.state.party_size());
    std::vector<Seat> good;
    for (Seat s = 0; s < kPlayers; ++s)
      if (!v.known_evil.contains(s)) good.push_back(s);
    std::shuffle(good.begin(), good.end(), rng_);
    PlayerSet party{v.self};
    for (int i = 0; party.size() < v.state.party_size(); ++i) party.insert(good[static_cast<std::size_t>(i)]);
    return party;
  }
  std::string speak(const AgentView&) override { return "looks fine to me."; }
  bool approve(const AgentView& v) override {
    if (v.role != Alignment::Evil) return true;
    if (v.state.proposed->intersects(v.known_evil)) return true;
    return !std::bernoulli_distribution(cfg_.reject_all_good)(rng_);
  }
  bool quest_success(const AgentView& v) override {
    if (v.role != Alignment::Evil) return true;
    return !std::bernoulli_distribution(cfg_.fail_probability)(rng_);
  }
  nlohmann::json params() const override {
    return {{"fail_probability", cfg_.fail_probability}, {"reject_all_good", cfg_.reject_all_good}};
  }

 private:
  std::mt19937_64 rng_;
  ScriptedEvilConfig cfg_;
};

struct ScriptedGoodConfig {
  double vote_noise = 0.1;  // chance of flipping a ballot
};

/// Suspicion heuristic for corpus generation: players on failed quests are
/// suspected in proportion to fail ballots per seat.
class ScriptedGoodAgent final : public Agent {
 public:
  ScriptedGoodAgent(std::uint64_t seed, ScriptedGoodConfig cfg = {}) : rng_(seed), cfg_(cfg) {}
  std::string kind() const override { return "scripted-good"; }

  static std::array<double, kPlayers> suspicion(const PublicState& s) {
    std::array<double, kPlayers> out{};
    for (const auto& q : s.quests)
      if (q.outcome == QuestOutcome::Fail)
        for (Seat m : q.party.seats()) out[static_cast<std::size_t>(m)] += static_cast<double>(q.fail_votes) / q.party.size();
    return out;
  }

  PlayerSet propose(const AgentView& v) override {
    const auto sus = suspicion(v.state);
    std::vector<std::pair<double, double>> key(kPlayers);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t j = 0; j < kPlayers; ++j) key[j] = {sus[j], u(rng_)};
    key[static_cast<std::size_t>(v.self)].first = -1.0;
    std::vector<Seat> order(kPlayers);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Seat a, Seat b) { return key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)]; });
    PlayerSet party;
    for (int i = 0; i < v.state.party_size(); ++i) party.insert(order[static_cast<std::size_t>(i)]);
    return party;
  }
  std::string speak(const AgentView&) override { return "not sure yet."; }

  bool approve(const AgentView& v) override {
    const auto& s = v.state;
    if (s.is_first_proposal_of_game() || s.consecutive_rejections == kMaxRejections - 1) return true;
    const auto sus = suspicion(s);
    std::vector<double> others;
    for (Seat j = 0; j < kPlayers; ++j)
      if (j != v.self) others.push_back(sus[static_cast<std::size_t>(j)]);
    std::sort(others.begin(), others.end());
    const PlayerSet party = *s.proposed;
    const int slots = party.size() - (party.contains(v.self) ? 1 : 0);
    const double threshold = slots > 0 ? others[static_cast<std::size_t>(slots - 1)] : 0.0;
    bool yes = true;
    for (Seat m : party.seats())
      if (m != v.self && sus[static_cast<std::size_t>(m)] > threshold + 1e-12) yes = false;
    if (std::bernoulli_distribution(cfg_.vote_noise)(rng_)) yes = !yes;
    return yes;
  }
  bool quest_success(const AgentView&) override { return true; }
  nlohmann::json params() const override { return {{"vote_noise", cfg_.vote_noise}}; }

 private:
  std::mt19937_64 rng_;
  ScriptedGoodConfig cfg_;
};

// ---------------------------------------------------------------- LLM reasoning agent

namespace reasoning {

inline std::string state_block(const AgentView& v) {
  PromptView pv = prompt_view(v.state, v.self, v.role, v.known_evil);
  const auto& s = v.state;
  auto name = [&](Seat x) { return s.players[static_cast<std::size_t>(x)]; };
  std::string out = "CURRENT GAME STATE:\n- Current Quest: " + std::to_string(s.quest_index) +
                    "\n- Current Turn: " + std::to_string(s.turn) +
                    "\n- Failed Party Votes: " + std::to_string(s.consecutive_rejections) + "\n- Quest Results:\n";
  for (const auto& q : pv.history)
    out += "  Quest " + std::to_string(q.index) + " party: " + prompts::name_list(pv, q.party) + " : " +
           (q.outcome == QuestOutcome::Success ? "success" : "fail") + "\n";
  out += "- Current Leader: " + name(s.leader) + "\n- Proposed Team: " +
         (s.proposed ? prompts::name_list(pv, *s.proposed) : std::string("[]")) + "\n\nGAME HISTORY:\nPrevious Teams:\n";
  for (std::size_t i = 0; i < s.proposals.size(); ++i) {
    const auto& p = s.proposals[i];
    out += "- Team " + std::to_string(i + 1) + " (proposed by " + name(p.leader) + " in quest " + std::to_string(p.quest) +
           "): " + prompts::name_list(pv, p.party) + " | Votes:";
    for (Seat x = 0; x < kPlayers; ++x) out += " " + name(x) + ": " + (p.approvals[static_cast<std::size_t>(x)] ? "Yes" : "No");
    out += "\n";
  }
  out += "\nDETAILED GAME LOG:\n" + prompts::chat_lines(pv, false) + "\n";
  return prompts::rules() + prompts::role(pv) + out;
}

inline std::string proposal_prompt(const AgentView& v) {
  const std::string k = std::to_string(v.state.party_size());
  const bool good = v.role == Alignment::Good;
  return state_block(v) + "Your objective is to propose a mission team consisting of " + k + " players.\n" +
         (good ? "Remember that you are on the good side - avoid selecting players who seem suspicious or were part of failed missions.\n"
               : "Remember that you are on the evil side - if it is possible, aim to include at least one evil player while "
                 "maintaining your cover.\n") +
         "It's conventional to include yourself in the team unless you have a specific reason not to.\n"
         "Please propose a mission team composed of " + k +
         " members and provide a message to the other players justifying your choices.\n"
         "Respond with a JSON object: {\"team\": [<player names>], \"message\": <string>}";
}

inline std::string discussion_prompt(const AgentView& v) {
  PromptView pv = prompt_view(v.state, v.self);
  const std::string party = v.state.proposed ? prompts::name_list(pv, *v.state.proposed) : "[]";
  return state_block(v) + "Evaluate the proposed mission team consisting of " + party + ".\n" +
         (v.role == Alignment::Good ? "Your goal is to ensure no evil or suspicious players are on the team.\n"
                                    : "Your goal is to ensure at least one evil player is included while maintaining your cover.\n") +
         "Please keep it relatively short as talking too much can be seen as suspicious. Do not say what your specific role "
         "or your task is.\nRespond with a JSON object: {\"message\": <string>}";
}

inline std::string vote_prompt(const AgentView& v) {
  PromptView pv = prompt_view(v.state, v.self);
  const std::string party = v.state.proposed ? prompts::name_list(pv, *v.state.proposed) : "[]";
  std::string out = state_block(v) + "Vote on the proposed mission team consisting of " + party + ".\n" +
                    (v.role == Alignment::Good ? "Your goal is to ensure no evil or suspicious players are on the team.\n"
                                               : "Your goal is to ensure at least one evil player is included while maintaining your cover.\n") +
                    "Note that " + std::to_string(v.state.consecutive_rejections) +
                    " party proposals have been rejected. If five proposals are rejected consecutively, the evil side wins. "
                    "Consider this when voting.\n";
  if (v.state.leader == v.self) out += "Keep in mind that this is your proposed team and as such you should approve it.\n";
  return out + "Choose either 'approve' or 'disapprove'. Respond with a JSON object: {\"vote\": \"approve\" | \"disapprove\"}";
}

inline std::string quest_prompt(const AgentView& v) {
  return state_block(v) +
         "You are on a mission team and must decide whether to make it succeed or fail.\n"
         "Your primary objective is to secure victory for the evil side by voting for missions to fail.\n"
         "If you want the quest to succeed choose 'true'. If you want it to fail choose 'false'.\n"
         "Respond with a JSON object: {\"success\": true | false}";
}

}  // namespace reasoning

/// Prompts a language model for every action; unparseable replies fall back
/// to approve / success / a random legal party.
class LlmAgent final : public Agent {
 public:
  LlmAgent(Seat self, std::shared_ptr<Provider> llm, std::uint64_t seed) : self_(self), llm_(std::move(llm)), rng_(seed) {
    if (!llm_) throw std::invalid_argument("LLM agent needs a provider");
  }
  std::string kind() const override { return "llm"; }

  PlayerSet propose(const AgentView& v) override {
    auto j = ask(v, reasoning::proposal_prompt(v), "proposal");
    PlayerSet party;
    if (j && j->contains("team") && (*j)["team"].is_array())
      for (const auto& n : (*j)["team"])
        if (n.is_string())
          for (Seat s = 0; s < kPlayers; ++s)
            if (prior_detail::lower(v.state.players[static_cast<std::size_t>(s)]) == prior_detail::lower(n.get<std::string>())) party.insert(s);
    if (party.size() != v.state.party_size()) {
      ++fallbacks_;
      party = agent_detail::random_party(rng_, v.state.party_size());
    }
    if (j && j->contains("message") && (*j)["message"].is_string()) pending_message_ = (*j)["message"].get<std::string>();
    return party;
  }

  std::string speak(const AgentView& v) override {
    if (pending_message_ && v.state.leader == v.self && v.state.next_speaker == 0) {
      auto m = *pending_message_;
      pending_message_.reset();
      return m;
    }
    auto j = ask(v, reasoning::discussion_prompt(v), "message");
    if (j && j->contains("message") && (*j)["message"].is_string()) return (*j)["message"].get<std::string>();
    ++fallbacks_;
    return "ok.";
  }

  bool approve(const AgentView& v) override {
    auto j = ask(v, reasoning::vote_prompt(v), "vote");
    if (j && j->contains("vote") && (*j)["vote"].is_string()) {
      const auto s = prior_detail::lower((*j)["vote"].get<std::string>());
      if (s == "approve") return true;
      if (s == "disapprove" || s == "reject") return false;
    }
    ++fallbacks_;
    return true;
  }

  bool quest_success(const AgentView& v) override {
    if (v.role == Alignment::Good) return true;  // the Good contract
    auto j = ask(v, reasoning::quest_prompt(v), "quest");
    if (j && j->contains("success")) {
      const auto& x = (*j)["success"];
      if (x.is_boolean()) return x.get<bool>();
      if (x.is_string()) return prior_detail::lower(x.get<std::string>()) != "false";
    }
    ++fallbacks_;
    return true;
  }

  std::vector<UsageRecord> usage() const override { return usage_; }
  int fallbacks() const { return fallbacks_; }

 private:
  std::optional<nlohmann::json> ask(const AgentView& v, const std::string& prompt, const std::string& purpose) {
    try {
      auto r = llm_->call(prompt, CallParams{purpose});
      usage_.push_back({self_, v.state.quest_index, purpose, r.usage.input_tokens, r.usage.output_tokens, r.usage.latency_s});
      auto obj = prior_detail::first_object(r.text);
      if (!obj) return std::nullopt;
      auto j = nlohmann::json::parse(*obj, nullptr, false);
      if (j.is_discarded() || !j.is_object()) return std::nullopt;
      return j;
    } catch (const ProviderError&) {
      return std::nullopt;
    }
  }

  Seat self_;
  std::shared_ptr<Provider> llm_;
  std::mt19937_64 rng_;
  std::optional<std::string> pending_message_;
  std::vector<UsageRecord> usage_;
  int fallbacks_ = 0;
};

}  // namespace grail

// Deterministic rules engine for 6-player Avalon (4 Good, 2 Evil, no special roles).
//
// GameState is a value: apply_event() never mutates its input, it returns the
// successor state. Seats are 0-based here; the codec is the only place that
// switches to the 1-based ids used by the numeric encodings.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace grail {

using Seat = int;

inline constexpr int kPlayers = 6;
inline constexpr int kEvilCount = 2;
inline constexpr int kQuests = 5;
inline constexpr int kMaxRejections = 5;
inline constexpr int kWinsNeeded = 3;
inline constexpr std::array<int, kQuests> kPartySizes{2, 3, 4, 3, 4};

enum class Alignment { Good, Evil };
enum class Phase { Proposal, Discussion, PartyVote, QuestVote, Finished };
enum class QuestOutcome { Unplayed, Fail, Success };

inline const char* to_string(Alignment a) { return a == Alignment::Evil ? "evil" : "good"; }

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Proposal: return "proposal";
    case Phase::Discussion: return "discussion";
    case Phase::PartyVote: return "party_vote";
    case Phase::QuestVote: return "quest_vote";
    case Phase::Finished: return "finished";
  }
  return "unknown";
}

inline const char* to_string(QuestOutcome o) {
  switch (o) {
    case QuestOutcome::Unplayed: return "unplayed";
    case QuestOutcome::Fail: return "fail";
    case QuestOutcome::Success: return "success";
  }
  return "unknown";
}

/// Set of seats stored as a bitmask. Supports up to 32 seats so the
/// N-player inference variants can reuse it.
class PlayerSet {
 public:
  constexpr PlayerSet() = default;
  PlayerSet(std::initializer_list<Seat> seats) {
    for (Seat s : seats) insert(s);
  }

  static constexpr PlayerSet from_mask(std::uint32_t mask) {
    PlayerSet p;
    p.mask_ = mask;
    return p;
  }
  template <typename Range>
  static PlayerSet from_seats(const Range& seats) {
    PlayerSet p;
    for (Seat s : seats) p.insert(s);
    return p;
  }

  constexpr bool contains(Seat s) const { return s >= 0 && s < 32 && ((mask_ >> s) & 1u) != 0; }
  void insert(Seat s) {
    if (s < 0 || s >= 32) throw std::out_of_range("seat out of range");
    mask_ |= (1u << s);
  }
  void erase(Seat s) {
    if (s >= 0 && s < 32) mask_ &= ~(1u << s);
  }
  constexpr int size() const { return std::popcount(mask_); }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr std::uint32_t mask() const { return mask_; }

  std::vector<Seat> seats() const {
    std::vector<Seat> out;
    for (Seat s = 0; s < 32; ++s)
      if (contains(s)) out.push_back(s);
    return out;
  }

  constexpr bool intersects(PlayerSet o) const { return (mask_ & o.mask_) != 0; }
  constexpr bool operator==(const PlayerSet&) const = default;

 private:
  std::uint32_t mask_ = 0;
};

inline const std::array<std::string, kPlayers>& default_player_names() {
  static const std::array<std::string, kPlayers> names{"Sam", "Paul", "Luca", "Jane", "Kira", "Mia"};
  return names;
}

struct QuestRecord {
  int index = 0;  // 1..5
  PlayerSet party;
  std::array<bool, kPlayers> approvals{};
  Seat leader = 0;
  QuestOutcome outcome = QuestOutcome::Unplayed;
  int fail_votes = 0;

  bool played() const { return outcome != QuestOutcome::Unplayed; }
};

/// Every proposal that reached a vote, approved or not.
struct ProposalRecord {
  int quest = 0;
  Seat leader = 0;
  PlayerSet party;
  std::array<bool, kPlayers> approvals{};
  bool approved = false;
  bool revised = false;
};

struct ChatLine {
  Seat speaker = 0;
  std::string text;
  int quest = 0;
  int turn = 0;
};

struct GameOptions {
  // Headless corpus generation runs without the discussion phase.
  bool discussion = true;
};

/// Everything a player may observe. GameState adds the hidden roles.
struct PublicState {
  std::array<std::string, kPlayers> players = default_player_names();
  Phase phase = Phase::Proposal;
  Seat leader = 0;
  int quest_index = 1;
  int consecutive_rejections = 0;
  std::array<QuestRecord, kQuests> quests{};
  std::optional<PlayerSet> proposed;
  bool revision_used = false;
  std::vector<Seat> speaking_order;
  std::size_t next_speaker = 0;
  std::vector<ProposalRecord> proposals;
  std::vector<ChatLine> chat;
  int turn = 0;
  bool discussion = true;
  std::optional<Alignment> winner;

  int party_size() const { return kPartySizes[static_cast<std::size_t>(quest_index - 1)]; }

  const QuestRecord& current_quest() const { return quests[static_cast<std::size_t>(quest_index - 1)]; }

  std::optional<Seat> active_speaker() const {
    if (phase != Phase::Discussion || next_speaker >= speaking_order.size()) return std::nullopt;
    return speaking_order[next_speaker];
  }

  /// True when the leader is about to give the closing message of the discussion.
  bool closing_turn() const {
    return phase == Phase::Discussion && !speaking_order.empty() &&
           next_speaker + 1 == speaking_order.size();
  }

  bool is_first_proposal_of_game() const { return proposals.empty(); }

  int count(QuestOutcome o) const {
    return static_cast<int>(std::count_if(quests.begin(), quests.end(),
                                          [o](const QuestRecord& q) { return q.outcome == o; }));
  }

  int played_quests() const { return count(QuestOutcome::Success) + count(QuestOutcome::Fail); }
};

struct GameState : PublicState {
  std::uint64_t seed = 0;
  std::array<Alignment, kPlayers> roles{};

  PlayerSet evil() const {
    PlayerSet e;
    for (Seat s = 0; s < kPlayers; ++s)
      if (roles[static_cast<std::size_t>(s)] == Alignment::Evil) e.insert(s);
    return e;
  }
};

// Events --------------------------------------------------------------------

struct Propose {
  PlayerSet party;
};
struct Say {
  Seat speaker = 0;
  std::string text;
};
struct PartyVote {
  std::array<bool, kPlayers> approve{};
};
struct QuestVote {
  std::map<Seat, bool> success;  // party member -> votes success
};
using Event = std::variant<Propose, Say, PartyVote, QuestVote>;

class RuleError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Roles = std::array<Alignment, kPlayers>;

inline Roles roles_from_evil(PlayerSet evil) {
  Roles r{};
  for (Seat s = 0; s < kPlayers; ++s)
    r[static_cast<std::size_t>(s)] = evil.contains(s) ? Alignment::Evil : Alignment::Good;
  return r;
}

inline Roles random_roles(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::array<Seat, kPlayers> order{};
  for (Seat s = 0; s < kPlayers; ++s) order[static_cast<std::size_t>(s)] = s;
  std::shuffle(order.begin(), order.end(), rng);
  return roles_from_evil(PlayerSet{order[0], order[1]});
}

inline GameState new_game(std::uint64_t seed, std::optional<Roles> roles = std::nullopt,
                          GameOptions options = {}) {
  GameState g;
  g.seed = seed;
  g.discussion = options.discussion;
  if (roles) {
    int evil = static_cast<int>(std::count(roles->begin(), roles->end(), Alignment::Evil));
    if (evil != kEvilCount)
      throw RuleError("role assignment must have exactly " + std::to_string(kEvilCount) +
                      " Evil players, got " + std::to_string(evil));
    g.roles = *roles;
  } else {
    g.roles = random_roles(seed);
  }
  for (int q = 0; q < kQuests; ++q) g.quests[static_cast<std::size_t>(q)].index = q + 1;
  return g;
}

inline std::optional<Alignment> winner(const PublicState& s) {
  if (s.count(QuestOutcome::Success) >= kWinsNeeded) return Alignment::Good;
  if (s.count(QuestOutcome::Fail) >= kWinsNeeded) return Alignment::Evil;
  if (s.consecutive_rejections >= kMaxRejections) return Alignment::Evil;
  return std::nullopt;
}

namespace detail {

inline Seat next_seat(Seat s) { return (s + 1) % kPlayers; }

inline void check_party(const PublicState& s, PlayerSet party) {
  if (party.size() != s.party_size())
    throw RuleError("party size " + std::to_string(party.size()) + " does not match schedule size " +
                    std::to_string(s.party_size()) + " for quest " + std::to_string(s.quest_index));
  if ((party.mask() >> kPlayers) != 0) throw RuleError("party contains a seat outside 0..5");
}

// Leader opens, everyone else speaks clockwise, leader closes.
inline std::vector<Seat> speaking_order(Seat leader) {
  std::vector<Seat> order{leader};
  for (int k = 1; k < kPlayers; ++k) order.push_back((leader + k) % kPlayers);
  order.push_back(leader);
  return order;
}

inline void apply(GameState& g, const Propose& e) {
  if (g.phase == Phase::Proposal) {
    check_party(g, e.party);
    g.proposed = e.party;
    g.revision_used = false;
    if (g.discussion) {
      g.phase = Phase::Discussion;
      g.speaking_order = speaking_order(g.leader);
      g.next_speaker = 0;
    } else {
      g.phase = Phase::PartyVote;
    }
    return;
  }
  if (g.phase == Phase::Discussion) {
    if (!g.closing_turn()) throw RuleError("the party may only be revised on the leader's closing turn");
    if (g.revision_used) throw RuleError("the party may be revised only once");
    check_party(g, e.party);
    g.proposed = e.party;
    g.revision_used = true;
    return;
  }
  throw RuleError(std::string("cannot propose during phase ") + to_string(g.phase));
}

inline void apply(GameState& g, const Say& e) {
  if (g.phase != Phase::Discussion) throw RuleError(std::string("cannot chat during phase ") + to_string(g.phase));
  auto speaker = g.active_speaker();
  if (!speaker || *speaker != e.speaker)
    throw RuleError("seat " + std::to_string(e.speaker) + " spoke out of turn");
  g.chat.push_back(ChatLine{e.speaker, e.text, g.quest_index, g.turn++});
  ++g.next_speaker;
  if (g.next_speaker == g.speaking_order.size()) g.phase = Phase::PartyVote;
}

inline void apply(GameState& g, const PartyVote& e) {
  if (g.phase != Phase::PartyVote) throw RuleError(std::string("cannot vote on a party during phase ") + to_string(g.phase));
  int approvals = static_cast<int>(std::count(e.approve.begin(), e.approve.end(), true));
  bool approved = approvals * 2 > kPlayers;

  ProposalRecord rec;
  rec.quest = g.quest_index;
  rec.leader = g.leader;
  rec.party = *g.proposed;
  rec.approvals = e.approve;
  rec.approved = approved;
  rec.revised = g.revision_used;
  g.proposals.push_back(rec);
  g.speaking_order.clear();
  g.next_speaker = 0;

  if (approved) {
    auto& q = g.quests[static_cast<std::size_t>(g.quest_index - 1)];
    q.party = *g.proposed;
    q.approvals = e.approve;
    q.leader = g.leader;
    g.consecutive_rejections = 0;
    g.phase = Phase::QuestVote;
    return;
  }
  g.proposed.reset();
  ++g.consecutive_rejections;
  g.leader = next_seat(g.leader);
  if (g.consecutive_rejections >= kMaxRejections) {
    g.phase = Phase::Finished;
    g.winner = Alignment::Evil;
  } else {
    g.phase = Phase::Proposal;
  }
}

inline void apply(GameState& g, const QuestVote& e) {
  if (g.phase != Phase::QuestVote) throw RuleError(std::string("cannot vote on a quest during phase ") + to_string(g.phase));
  const PlayerSet party = *g.proposed;
  for (const auto& [seat, ok] : e.success)
    if (!party.contains(seat)) throw RuleError("seat " + std::to_string(seat) + " is not on the quest party");
  if (static_cast<int>(e.success.size()) != party.size()) throw RuleError("every party member must cast exactly one quest ballot");

  auto& q = g.quests[static_cast<std::size_t>(g.quest_index - 1)];
  q.fail_votes = static_cast<int>(std::count_if(e.success.begin(), e.success.end(), [](const auto& kv) { return !kv.second; }));
  q.outcome = q.fail_votes == 0 ? QuestOutcome::Success : QuestOutcome::Fail;
  g.proposed.reset();
  g.revision_used = false;

  if (auto w = winner(g)) {
    g.phase = Phase::Finished;
    g.winner = w;
    return;
  }
  ++g.quest_index;
  g.leader = next_seat(g.leader);
  g.phase = Phase::Proposal;
}

}  // namespace detail

inline GameState apply_event(const GameState& state, const Event& event) {
  if (state.phase == Phase::Finished) throw RuleError("game is finished");
  GameState next = state;
  std::visit([&next](const auto& e) { detail::apply(next, e); }, event);
  return next;
}

}  // namespace grail

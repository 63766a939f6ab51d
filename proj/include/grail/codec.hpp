// Numeric encodings of the public game state for the factor graph and the
// factor network, plus the ego-centric and circular-rotation transforms.
//
// Party codes index the k-subsets of {1..6} in increasing lexicographic order
// (1-based, 0 = unseen). Vote codes index the 22 majority approval sets ordered
// by size first (fifteen 4-sets, six 5-sets, the 6-set), lexicographic within
// a size. That ordering is tagged in every weights file.
#pragma once

#include <array>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grail/game.hpp"
#include "grail/record.hpp"

namespace grail {

inline constexpr const char* kVoteOrderingTag = "size-asc-lex-v1";
inline constexpr int kStateVariables = 3 * kQuests;

class CodecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace codec_detail {

// All k-subsets of seats 0..n-1 in lexicographic order of their sorted members.
inline std::vector<PlayerSet> lexicographic_subsets(int n, int k) {
  std::vector<PlayerSet> out;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(PlayerSet::from_seats(idx));
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

inline const std::vector<PlayerSet>& party_table(int size) {
  static const std::array<std::vector<PlayerSet>, kPlayers + 1> tables = [] {
    std::array<std::vector<PlayerSet>, kPlayers + 1> t;
    for (int k = 1; k <= kPlayers; ++k) t[static_cast<std::size_t>(k)] = lexicographic_subsets(kPlayers, k);
    return t;
  }();
  if (size < 2 || size > 4) throw CodecError("party size must be 2, 3 or 4, got " + std::to_string(size));
  return tables[static_cast<std::size_t>(size)];
}

inline const std::vector<PlayerSet>& vote_table() {
  static const std::vector<PlayerSet> table = [] {
    std::vector<PlayerSet> t;
    for (int k = 4; k <= kPlayers; ++k)
      for (auto s : lexicographic_subsets(kPlayers, k)) t.push_back(s);
    return t;
  }();
  return table;
}

inline int index_of(const std::vector<PlayerSet>& table, PlayerSet s) {
  for (std::size_t i = 0; i < table.size(); ++i)
    if (table[i] == s) return static_cast<int>(i) + 1;
  return 0;
}

}  // namespace codec_detail

/// Builds a set from 1-based player ids, as written in the encoding tables.
inline PlayerSet ids(std::initializer_list<int> one_based) {
  PlayerSet s;
  for (int id : one_based) {
    if (id < 1 || id > kPlayers) throw CodecError("player id out of range 1..6: " + std::to_string(id));
    s.insert(id - 1);
  }
  return s;
}

inline std::vector<int> to_ids(PlayerSet s) {
  std::vector<int> out;
  for (Seat seat : s.seats()) out.push_back(seat + 1);
  return out;
}

inline int party_code_count(int size) { return static_cast<int>(codec_detail::party_table(size).size()); }
inline int vote_code_count() { return static_cast<int>(codec_detail::vote_table().size()); }

inline int encode_party(PlayerSet members, int size) {
  if ((members.mask() >> kPlayers) != 0) throw CodecError("party member outside players 1..6");
  if (members.size() != size)
    throw CodecError("party has " + std::to_string(members.size()) + " members, expected " + std::to_string(size));
  return codec_detail::index_of(codec_detail::party_table(size), members);
}

inline PlayerSet decode_party(int code, int size) {
  const auto& t = codec_detail::party_table(size);
  if (code < 1 || code > static_cast<int>(t.size()))
    throw CodecError("party code " + std::to_string(code) + " out of range for size " + std::to_string(size));
  return t[static_cast<std::size_t>(code - 1)];
}

inline int encode_vote(PlayerSet approvers) {
  if ((approvers.mask() >> kPlayers) != 0) throw CodecError("approver outside players 1..6");
  if (approvers.size() * 2 <= kPlayers)
    throw CodecError("only majority approvals (4..6 players) are encoded, got " + std::to_string(approvers.size()));
  return codec_detail::index_of(codec_detail::vote_table(), approvers);
}

inline PlayerSet decode_vote(int code) {
  const auto& t = codec_detail::vote_table();
  if (code < 1 || code > static_cast<int>(t.size())) throw CodecError("vote code out of range: " + std::to_string(code));
  return t[static_cast<std::size_t>(code - 1)];
}

inline int encode_outcome(QuestOutcome o) {
  switch (o) {
    case QuestOutcome::Unplayed: return 0;
    case QuestOutcome::Fail: return 1;
    case QuestOutcome::Success: return 2;
  }
  return 0;
}

inline QuestOutcome decode_outcome(int code) {
  switch (code) {
    case 0: return QuestOutcome::Unplayed;
    case 1: return QuestOutcome::Fail;
    case 2: return QuestOutcome::Success;
    default: throw CodecError("outcome code out of range: " + std::to_string(code));
  }
}

struct VariableSpec {
  std::string name;
  int cardinality = 0;  // includes the 0 = unseen category
};

/// The 15 state variables in network input order: P1, V1, O1, ..., P5, V5, O5.
inline const std::vector<VariableSpec>& variable_specs() {
  static const std::vector<VariableSpec> specs = [] {
    std::vector<VariableSpec> v;
    for (int q = 1; q <= kQuests; ++q) {
      v.push_back({"P" + std::to_string(q), party_code_count(kPartySizes[static_cast<std::size_t>(q - 1)]) + 1});
      v.push_back({"V" + std::to_string(q), vote_code_count() + 1});
      v.push_back({"O" + std::to_string(q), 3});
    }
    return v;
  }();
  return specs;
}

struct EncodedState {
  std::array<int, kQuests> party{};
  std::array<int, kQuests> vote{};
  std::array<int, kQuests> outcome{};

  bool operator==(const EncodedState&) const = default;

  /// Flat view in variable_specs() order.
  std::array<int, kStateVariables> flat() const {
    std::array<int, kStateVariables> f{};
    for (std::size_t q = 0; q < kQuests; ++q) {
      f[3 * q] = party[q];
      f[3 * q + 1] = vote[q];
      f[3 * q + 2] = outcome[q];
    }
    return f;
  }

  int observed_quests() const {
    int n = 0;
    for (std::size_t q = 0; q < kQuests; ++q) n += party[q] != 0;
    return n;
  }

  /// Throws CodecError when a code is outside its variable's range or a quest is partially seen.
  void validate() const {
    const auto& specs = variable_specs();
    auto f = flat();
    for (std::size_t i = 0; i < f.size(); ++i)
      if (f[i] < 0 || f[i] >= specs[i].cardinality)
        throw CodecError("code " + std::to_string(f[i]) + " out of range for " + specs[i].name);
    for (std::size_t q = 0; q < kQuests; ++q) {
      bool p = party[q] != 0, v = vote[q] != 0, o = outcome[q] != 0;
      if (p != v || v != o) throw CodecError("quest " + std::to_string(q + 1) + " is partially observed");
    }
  }
};

inline EncodedState encode_quests(const std::vector<QuestRecord>& quests, int up_to_quest = kQuests) {
  EncodedState e;
  for (const auto& q : quests) {
    if (!q.played() || q.index > up_to_quest) continue;
    auto i = static_cast<std::size_t>(q.index - 1);
    PlayerSet approvers;
    for (Seat s = 0; s < kPlayers; ++s)
      if (q.approvals[static_cast<std::size_t>(s)]) approvers.insert(s);
    e.party[i] = encode_party(q.party, kPartySizes[i]);
    e.vote[i] = encode_vote(approvers);
    e.outcome[i] = encode_outcome(q.outcome);
  }
  return e;
}

inline EncodedState encode_state(const PublicState& s) {
  std::vector<QuestRecord> played;
  for (const auto& q : s.quests)
    if (q.played()) played.push_back(q);
  return encode_quests(played);
}

/// Zeroes every quest after `rounds` (the future-masking used for training prefixes).
inline EncodedState mask_after(EncodedState e, int rounds) {
  for (int q = rounds; q < kQuests; ++q) {
    auto i = static_cast<std::size_t>(q);
    e.party[i] = e.vote[i] = e.outcome[i] = 0;
  }
  return e;
}

/// Applies a seat relabeling to every set inside the encoding.
template <typename Relabel>
EncodedState relabel(const EncodedState& e, Relabel&& map_seat) {
  auto map_set = [&](PlayerSet s) {
    PlayerSet out;
    for (Seat seat : s.seats()) out.insert(map_seat(seat));
    return out;
  };
  EncodedState out = e;
  for (std::size_t q = 0; q < kQuests; ++q) {
    if (e.party[q] == 0) continue;
    out.party[q] = encode_party(map_set(decode_party(e.party[q], kPartySizes[q])), kPartySizes[q]);
    out.vote[q] = encode_vote(map_set(decode_vote(e.vote[q])));
  }
  return out;
}

/// Relabels ids so `ego` (1-based) becomes player 1: i -> ((i - ego) mod 6) + 1.
inline EncodedState ego_transform(const EncodedState& e, int ego) {
  if (ego < 1 || ego > kPlayers) throw CodecError("ego id out of range 1..6: " + std::to_string(ego));
  const int shift = ego - 1;
  return relabel(e, [shift](Seat s) { return ((s - shift) % kPlayers + kPlayers) % kPlayers; });
}

inline Seat rotate_seat(Seat s, int k) { return ((s + k) % kPlayers + kPlayers) % kPlayers; }

inline PlayerSet rotate_set(PlayerSet s, int k) {
  PlayerSet out;
  for (Seat seat : s.seats()) out.insert(rotate_seat(seat, k));
  return out;
}

/// Rotates every seat reference in a game record: id i -> ((i - 1 + k) mod 6) + 1.
inline GameRecord rotate_record(const GameRecord& r, int k) {
  auto rot_ballots = [k](const std::array<bool, kPlayers>& a) {
    std::array<bool, kPlayers> out{};
    for (Seat s = 0; s < kPlayers; ++s) out[static_cast<std::size_t>(rotate_seat(s, k))] = a[static_cast<std::size_t>(s)];
    return out;
  };
  GameRecord o = r;
  for (Seat s = 0; s < kPlayers; ++s) {
    o.roles[static_cast<std::size_t>(rotate_seat(s, k))] = r.roles[static_cast<std::size_t>(s)];
    o.players[static_cast<std::size_t>(rotate_seat(s, k))] = r.players[static_cast<std::size_t>(s)];
  }
  if (r.agents.size() == kPlayers)
    for (Seat s = 0; s < kPlayers; ++s)
      o.agents[static_cast<std::size_t>(rotate_seat(s, k))] = r.agents[static_cast<std::size_t>(s)];
  for (auto& q : o.quests) {
    q.party = rotate_set(q.party, k);
    q.approvals = rot_ballots(q.approvals);
    q.leader = rotate_seat(q.leader, k);
  }
  for (auto& p : o.proposals) {
    p.party = rotate_set(p.party, k);
    p.approvals = rot_ballots(p.approvals);
    p.leader = rotate_seat(p.leader, k);
  }
  for (auto& c : o.chat) c.speaker = rotate_seat(c.speaker, k);
  // Events and belief traces are tied to the original seating; the rotated
  // record is a training view, not a replayable log.
  o.events.clear();
  o.beliefs.clear();
  o.usage.clear();
  return o;
}

inline std::vector<GameRecord> circular_augment(const GameRecord& r) {
  std::vector<GameRecord> out;
  out.reserve(kPlayers);
  for (int k = 0; k < kPlayers; ++k) out.push_back(rotate_record(r, k));
  return out;
}

/// Debug artifact: every party and vote code with its members.
inline void write_enumeration_csv(std::ostream& out) {
  out << "kind,code,size,members\n";
  auto members = [](PlayerSet s) {
    std::string m;
    for (int id : to_ids(s)) m += (m.empty() ? "" : " ") + std::to_string(id);
    return m;
  };
  for (int size : {2, 3, 4}) {
    const auto& t = codec_detail::party_table(size);
    for (std::size_t i = 0; i < t.size(); ++i)
      out << "party," << i + 1 << ',' << size << ',' << members(t[i]) << '\n';
  }
  const auto& v = codec_detail::vote_table();
  for (std::size_t i = 0; i < v.size(); ++i) out << "vote," << i + 1 << ',' << v[i].size() << ',' << members(v[i]) << '\n';
}

}  // namespace grail

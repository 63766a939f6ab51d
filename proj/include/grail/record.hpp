// GameRecord: the JSON Lines interchange format for game logs.
//
// One object per line:
//   {seed, players, roles, agents, quests:[{quest, party, party_votes, outcome, fail_votes, leader}],
//    proposals:[...], chat:[{speaker, text, quest, turn}], events:[...], beliefs:[...], usage:[...], winner}
// Seats are 0-based indices into `players`. A corpus file may start with a
// {"header": {...}} line describing the generator.
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "grail/game.hpp"

namespace grail {

using json = nlohmann::json;

struct BeliefSnapshot {
  Seat observer = 0;
  int quest = 0;
  std::vector<double> with_prior;
  std::vector<double> without_prior;
};

struct UsageRecord {
  Seat seat = 0;
  int quest = 0;
  std::string purpose;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency_s = 0.0;
};

struct GameRecord {
  std::uint64_t seed = 0;
  std::array<std::string, kPlayers> players = default_player_names();
  Roles roles{};
  std::vector<std::string> agents;
  bool discussion = true;
  std::vector<QuestRecord> quests;  // played quests only, in order
  std::vector<ProposalRecord> proposals;
  std::vector<ChatLine> chat;
  std::vector<Event> events;
  std::vector<BeliefSnapshot> beliefs;
  std::vector<UsageRecord> usage;
  std::optional<Alignment> winner;
  json params = json::object();

  PlayerSet evil() const {
    PlayerSet e;
    for (Seat s = 0; s < kPlayers; ++s)
      if (roles[static_cast<std::size_t>(s)] == Alignment::Evil) e.insert(s);
    return e;
  }
  int rounds() const { return static_cast<int>(quests.size()); }
};

inline GameRecord make_record(const GameState& final_state, std::vector<Event> events) {
  GameRecord r;
  r.seed = final_state.seed;
  r.players = final_state.players;
  r.roles = final_state.roles;
  r.discussion = final_state.discussion;
  for (const auto& q : final_state.quests)
    if (q.played()) r.quests.push_back(q);
  r.proposals = final_state.proposals;
  r.chat = final_state.chat;
  r.events = std::move(events);
  r.winner = final_state.winner;
  return r;
}

/// Re-applies the logged events from a fresh game with the logged roles.
inline GameState replay(const GameRecord& r) {
  GameState g = new_game(r.seed, r.roles, GameOptions{r.discussion});
  g.players = r.players;
  for (const auto& e : r.events) g = apply_event(g, e);
  return g;
}

// JSON ----------------------------------------------------------------------

inline json seats_json(PlayerSet s) { return json(s.seats()); }

inline PlayerSet seats_from_json(const json& j) {
  PlayerSet s;
  for (const auto& v : j) {
    int seat = v.get<int>();
    if (seat < 0 || seat >= kPlayers) throw std::invalid_argument("seat out of range in log");
    s.insert(seat);
  }
  return s;
}

inline json ballots_json(const std::array<bool, kPlayers>& a) {
  json out = json::array();
  for (bool b : a) out.push_back(b ? "approve" : "reject");
  return out;
}

inline std::array<bool, kPlayers> ballots_from_json(const json& j) {
  if (!j.is_array() || j.size() != kPlayers) throw std::invalid_argument("party_votes must list 6 ballots");
  std::array<bool, kPlayers> a{};
  for (std::size_t i = 0; i < kPlayers; ++i) {
    auto v = j[i].get<std::string>();
    if (v != "approve" && v != "reject") throw std::invalid_argument("bad ballot: " + v);
    a[i] = v == "approve";
  }
  return a;
}

inline json event_to_json(const Event& e) {
  return std::visit(
      [](const auto& ev) -> json {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, Propose>) {
          return {{"type", "propose"}, {"party", seats_json(ev.party)}};
        } else if constexpr (std::is_same_v<T, Say>) {
          return {{"type", "say"}, {"speaker", ev.speaker}, {"text", ev.text}};
        } else if constexpr (std::is_same_v<T, PartyVote>) {
          return {{"type", "party_vote"}, {"ballots", ballots_json(ev.approve)}};
        } else {
          json b = json::object();
          for (const auto& [seat, ok] : ev.success) b[std::to_string(seat)] = ok ? "success" : "fail";
          return {{"type", "quest_vote"}, {"ballots", b}};
        }
      },
      e);
}

inline Event event_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "propose") return Propose{seats_from_json(j.at("party"))};
  if (type == "say") return Say{j.at("speaker").get<int>(), j.at("text").get<std::string>()};
  if (type == "party_vote") return PartyVote{ballots_from_json(j.at("ballots"))};
  if (type == "quest_vote") {
    QuestVote q;
    for (const auto& [k, v] : j.at("ballots").items()) q.success[std::stoi(k)] = v.get<std::string>() == "success";
    return q;
  }
  throw std::invalid_argument("unknown event type: " + type);
}

inline json to_json(const GameRecord& r) {
  json j;
  j["seed"] = r.seed;
  j["players"] = r.players;
  json roles = json::array();
  for (auto a : r.roles) roles.push_back(to_string(a));
  j["roles"] = roles;
  j["agents"] = r.agents;
  j["discussion"] = r.discussion;
  json quests = json::array();
  for (const auto& q : r.quests)
    quests.push_back({{"quest", q.index},
                      {"leader", q.leader},
                      {"party", seats_json(q.party)},
                      {"party_votes", ballots_json(q.approvals)},
                      {"outcome", to_string(q.outcome)},
                      {"fail_votes", q.fail_votes}});
  j["quests"] = quests;
  json props = json::array();
  for (const auto& p : r.proposals)
    props.push_back({{"quest", p.quest},
                     {"leader", p.leader},
                     {"party", seats_json(p.party)},
                     {"party_votes", ballots_json(p.approvals)},
                     {"approved", p.approved},
                     {"revised", p.revised}});
  j["proposals"] = props;
  json chat = json::array();
  for (const auto& c : r.chat)
    chat.push_back({{"speaker", c.speaker}, {"text", c.text}, {"quest", c.quest}, {"turn", c.turn}});
  j["chat"] = chat;
  json events = json::array();
  for (const auto& e : r.events) events.push_back(event_to_json(e));
  j["events"] = events;
  json beliefs = json::array();
  for (const auto& b : r.beliefs)
    beliefs.push_back({{"observer", b.observer},
                       {"quest", b.quest},
                       {"with_prior", b.with_prior},
                       {"without_prior", b.without_prior}});
  j["beliefs"] = beliefs;
  json usage = json::array();
  for (const auto& u : r.usage)
    usage.push_back({{"seat", u.seat},
                     {"quest", u.quest},
                     {"purpose", u.purpose},
                     {"input_tokens", u.input_tokens},
                     {"output_tokens", u.output_tokens},
                     {"latency_s", u.latency_s}});
  j["usage"] = usage;
  j["winner"] = r.winner ? json(to_string(*r.winner)) : json(nullptr);
  j["params"] = r.params;
  return j;
}

inline Alignment alignment_from_string(const std::string& s) {
  if (s == "evil") return Alignment::Evil;
  if (s == "good") return Alignment::Good;
  throw std::invalid_argument("bad alignment: " + s);
}

inline QuestOutcome outcome_from_string(const std::string& s) {
  if (s == "success") return QuestOutcome::Success;
  if (s == "fail") return QuestOutcome::Fail;
  if (s == "unplayed") return QuestOutcome::Unplayed;
  throw std::invalid_argument("bad outcome: " + s);
}

inline GameRecord record_from_json(const json& j) {
  GameRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  auto players = j.at("players").get<std::vector<std::string>>();
  if (players.size() != kPlayers) throw std::invalid_argument("players must list 6 names");
  std::copy(players.begin(), players.end(), r.players.begin());
  const auto& roles = j.at("roles");
  if (!roles.is_array() || roles.size() != kPlayers) throw std::invalid_argument("roles must list 6 alignments");
  int evil = 0;
  for (std::size_t i = 0; i < kPlayers; ++i) {
    r.roles[i] = alignment_from_string(roles[i].get<std::string>());
    evil += r.roles[i] == Alignment::Evil;
  }
  if (evil != kEvilCount) throw std::invalid_argument("log role assignment must have exactly 2 Evil players");
  if (j.contains("agents")) r.agents = j["agents"].get<std::vector<std::string>>();
  r.discussion = j.value("discussion", true);
  for (const auto& q : j.at("quests")) {
    QuestRecord rec;
    rec.index = q.at("quest").get<int>();
    if (rec.index < 1 || rec.index > kQuests) throw std::invalid_argument("quest index out of range");
    rec.leader = q.value("leader", 0);
    rec.party = seats_from_json(q.at("party"));
    if (rec.party.size() != kPartySizes[static_cast<std::size_t>(rec.index - 1)])
      throw std::invalid_argument("party size does not match the schedule");
    rec.approvals = ballots_from_json(q.at("party_votes"));
    rec.outcome = outcome_from_string(q.at("outcome").get<std::string>());
    rec.fail_votes = q.value("fail_votes", rec.outcome == QuestOutcome::Fail ? 1 : 0);
    r.quests.push_back(rec);
  }
  if (j.contains("proposals"))
    for (const auto& p : j["proposals"]) {
      ProposalRecord rec;
      rec.quest = p.at("quest").get<int>();
      rec.leader = p.at("leader").get<int>();
      rec.party = seats_from_json(p.at("party"));
      rec.approvals = ballots_from_json(p.at("party_votes"));
      rec.approved = p.at("approved").get<bool>();
      rec.revised = p.value("revised", false);
      r.proposals.push_back(rec);
    }
  if (j.contains("chat"))
    for (const auto& c : j["chat"])
      r.chat.push_back(ChatLine{c.at("speaker").get<int>(), c.at("text").get<std::string>(), c.value("quest", 0),
                                c.value("turn", 0)});
  if (j.contains("events"))
    for (const auto& e : j["events"]) r.events.push_back(event_from_json(e));
  if (j.contains("beliefs"))
    for (const auto& b : j["beliefs"])
      r.beliefs.push_back(BeliefSnapshot{b.at("observer").get<int>(), b.at("quest").get<int>(),
                                         b.at("with_prior").get<std::vector<double>>(),
                                         b.at("without_prior").get<std::vector<double>>()});
  if (j.contains("usage"))
    for (const auto& u : j["usage"])
      r.usage.push_back(UsageRecord{u.at("seat").get<int>(), u.value("quest", 0), u.value("purpose", ""),
                                    u.at("input_tokens").get<std::int64_t>(),
                                    u.at("output_tokens").get<std::int64_t>(), u.value("latency_s", 0.0)});
  const auto& w = j.at("winner");
  if (!w.is_null()) r.winner = alignment_from_string(w.get<std::string>());
  if (j.contains("params")) r.params = j["params"];
  return r;
}

inline std::string to_jsonl_line(const GameRecord& r) { return to_json(r).dump(); }

struct LogReadStats {
  std::size_t games = 0;
  std::size_t skipped = 0;
  std::optional<json> header;
};

/// Streams records from a JSON Lines file. Malformed lines are skipped and counted.
inline LogReadStats for_each_record(std::istream& in, const std::function<void(GameRecord&&)>& visit) {
  LogReadStats stats;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      if (j.contains("header")) {
        stats.header = j["header"];
        continue;
      }
      visit(record_from_json(j));
      ++stats.games;
    } catch (const std::exception&) {
      ++stats.skipped;
    }
  }
  return stats;
}

inline std::vector<GameRecord> read_records(const std::string& path, LogReadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open log file: " + path);
  std::vector<GameRecord> out;
  auto s = for_each_record(in, [&out](GameRecord&& r) { out.push_back(std::move(r)); });
  if (stats) *stats = s;
  return out;
}

inline void write_records(const std::string& path, const std::vector<GameRecord>& records,
                          const std::optional<json>& header = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log file: " + path);
  if (header) out << json{{"header", *header}}.dump() << '\n';
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
}

}  // namespace grail

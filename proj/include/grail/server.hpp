// Play server: authoritative sessions mixing human and agent seats, a
// per-seat visibility projection, typing-delay relay of agent chat, and an
// HTTP long-poll transport.
#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "grail/agents.hpp"
#include "grail/harness.hpp"
#include "grail/record.hpp"

namespace grail {

inline constexpr int kWireVersion = 1;

/// Typed protocol error returned to the client that caused it.
class WireError : public std::runtime_error {
 public:
  WireError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Splits at sentence boundaries: a run of . ! ? followed by whitespace.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur += text[i];
    const bool end = text[i] == '.' || text[i] == '!' || text[i] == '?';
    if (end && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) flush();
  }
  flush();
  return out;
}

/// Independent uniform delays for agent chat fragments.
class TypingDelays {
 public:
  TypingDelays(std::uint64_t seed, double lo, double hi) : rng_(seed), dist_(lo, hi) {
    if (!(lo >= 0.0 && hi >= lo)) throw std::invalid_argument("typing delay bounds must satisfy 0 <= lo <= hi");
  }
  double next() { return dist_(rng_); }

 private:
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> dist_;
};

struct SeatConfig {
  bool human = false;
  nlohmann::json agent = "grail";
};

struct SessionConfig {
  std::array<SeatConfig, kPlayers> seats;
  std::optional<PlayerSet> evil;  // seeded random when absent
  std::uint64_t seed = 0;
  bool discussion = true;
  bool typing_delay = true;
  double min_delay_s = 5.0;
  double max_delay_s = 7.0;
  double ballot_timeout_s = 60.0;
  double turn_timeout_s = 180.0;

  /// {"seats": [{"type": "human"} | {"type": "agent", "agent": spec}] x6, "evil": [seats], ...}
  static SessionConfig from_json(const nlohmann::json& j) {
    SessionConfig c;
    const auto& seats = j.at("seats");
    if (!seats.is_array() || seats.size() != static_cast<std::size_t>(kPlayers))
      throw WireError("bad_config", "a session needs exactly 6 seats, got " + std::to_string(seats.is_array() ? seats.size() : 0));
    for (std::size_t i = 0; i < kPlayers; ++i) {
      const auto& s = seats[i];
      const std::string type = s.value("type", "agent");
      if (type != "human" && type != "agent") throw WireError("bad_config", "seat type must be human or agent");
      c.seats[i].human = type == "human";
      if (s.contains("agent")) c.seats[i].agent = s["agent"];
    }
    if (j.contains("evil")) {
      PlayerSet e;
      for (const auto& x : j["evil"]) e.insert(x.get<Seat>());
      if (e.size() != kEvilCount || (e.mask() >> kPlayers) != 0) throw WireError("bad_config", "evil must name two seats in 0..5");
      c.evil = e;
    }
    c.seed = j.value("seed", c.seed);
    c.discussion = j.value("discussion", c.discussion);
    c.typing_delay = j.value("typing_delay", c.typing_delay);
    c.min_delay_s = j.value("min_delay_s", c.min_delay_s);
    c.max_delay_s = j.value("max_delay_s", c.max_delay_s);
    c.ballot_timeout_s = j.value("ballot_timeout_s", c.ballot_timeout_s);
    c.turn_timeout_s = j.value("turn_timeout_s", c.turn_timeout_s);
    return c;
  }

  int humans() const {
    return static_cast<int>(std::count_if(seats.begin(), seats.end(), [](const SeatConfig& s) { return s.human; }));
  }
};

struct WireMessage {
  std::uint64_t seq = 0;
  double time = 0.0;
  std::string type;
  nlohmann::json payload;

  nlohmann::json to_json() const { return {{"seq", seq}, {"time", time}, {"type", type}, {"payload", payload}}; }
};

/// True if `j` carries any hidden-role field: a key naming the Evil team or a
/// role value of "evil".
inline bool carries_hidden_roles(const nlohmann::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "evil" || it.key() == "roles") return true;
      if (it.key() == "role" && it.value() == "evil") return true;
      if (carries_hidden_roles(it.value())) return true;
    }
  } else if (j.is_array()) {
    for (const auto& x : j)
      if (carries_hidden_roles(x)) return true;
  }
  return false;
}

/// One game. Time is supplied by the caller, so the whole session is
/// deterministic under a virtual clock. Not thread-safe; the server serializes access.
class Session {
 public:
  Session(std::string id, SessionConfig cfg, AgentResources resources)
      : id_(std::move(id)), cfg_(std::move(cfg)), res_(std::move(resources)),
        delays_(derive_seed(cfg_.seed, 0x7E11), cfg_.min_delay_s, cfg_.max_delay_s), rng_(derive_seed(cfg_.seed, 0xA070)) {
    PlayerSet evil;
    if (cfg_.evil) evil = *cfg_.evil;
    else {
      std::array<Seat, kPlayers> s{0, 1, 2, 3, 4, 5};
      std::shuffle(s.begin(), s.end(), rng_);
      evil = PlayerSet{s[0], s[1]};
    }
    game_ = new_game(cfg_.seed, roles_from_evil(evil), GameOptions{cfg_.discussion});
    for (Seat s = 0; s < kPlayers; ++s) {
      const auto& sc = cfg_.seats[static_cast<std::size_t>(s)];
      if (sc.human) continue;
      agents_[static_cast<std::size_t>(s)] = make_agent(sc.agent, s, derive_seed(cfg_.seed, 1, static_cast<std::uint64_t>(s)), 0, res_);
    }
    std::random_device rd;
    for (Seat s = 0; s < kPlayers; ++s)
      if (cfg_.seats[static_cast<std::size_t>(s)].human) {
        std::ostringstream t;
        t << std::hex << rd() << rd();
        tokens_[s] = t.str();
      }
    pump();
  }

  const std::string& id() const { return id_; }
  const SessionConfig& config() const { return cfg_; }
  const GameState& game() const { return game_; }
  bool finished() const { return game_.phase == Phase::Finished; }
  double now() const { return now_; }
  const std::map<Seat, std::string>& tokens() const { return tokens_; }
  std::vector<Seat> open_seats() const {
    std::vector<Seat> out;
    for (const auto& [s, _] : tokens_)
      if (!joined_.count(s)) out.push_back(s);
    return out;
  }

  void check_token(Seat seat, const std::string& token) const {
    auto it = tokens_.find(seat);
    if (it == tokens_.end() || it->second != token) throw WireError("unauthorized", "bad seat or token");
  }

  void join(Seat seat, const std::string& token) {
    check_token(seat, token);
    const bool first = joined_.insert(seat).second;
    send(seat, "join", {{"seat", seat}, {"session", id_}, {"version", kWireVersion}});
    send(seat, "state", project_state(seat));
    if (first && open_seats().empty()) pump();
    else if (auto req = pending_request(seat)) send(seat, req->first, req->second);
  }

  /// Applies a client action: {"type": "chat" | "propose" | "party_ballot" | "quest_ballot", ...}.
  void submit(Seat seat, const nlohmann::json& action) {
    if (seat < 0 || seat >= kPlayers || !cfg_.seats[static_cast<std::size_t>(seat)].human)
      throw WireError("bad_seat", "seat is not a human seat");
    if (!joined_.count(seat)) throw WireError("not_joined", "join before acting");
    if (finished()) throw WireError("finished", "game is over");
    const std::string type = action.value("type", "");
    try {
      if (type == "propose") {
        PlayerSet party;
        for (const auto& x : action.at("party")) party.insert(x.get<Seat>());
        const bool leader_turn = (game_.phase == Phase::Proposal && game_.leader == seat) ||
                                 (game_.phase == Phase::Discussion && game_.active_speaker() == seat && game_.leader == seat);
        if (!leader_turn || fragments_pending()) throw WireError("out_of_turn", "not your turn to propose");
        apply(Propose{party});
      } else if (type == "chat") {
        if (game_.phase != Phase::Discussion || game_.active_speaker() != seat || fragments_pending())
          throw WireError("out_of_turn", "not your turn to speak");
        const std::string text = action.at("text").get<std::string>();
        if (text.empty()) throw WireError("bad_action", "empty message");
        broadcast("chat", {{"seat", seat}, {"text", text}, {"quest", game_.quest_index}});
        apply(Say{seat, text});
      } else if (type == "party_ballot") {
        if (game_.phase != Phase::PartyVote || party_ballots_.count(seat)) throw WireError("out_of_turn", "no party vote pending");
        party_ballots_[seat] = action.at("approve").get<bool>();
        maybe_close_votes();
      } else if (type == "quest_ballot") {
        if (game_.phase != Phase::QuestVote || !game_.proposed->contains(seat) || quest_ballots_.count(seat))
          throw WireError("out_of_turn", "no quest vote pending");
        bool success = action.at("success").get<bool>();
        if (game_.roles[static_cast<std::size_t>(seat)] == Alignment::Good) success = true;
        quest_ballots_[seat] = success;
        maybe_close_votes();
      } else {
        throw WireError("bad_action", "unknown action type '" + type + "'");
      }
    } catch (const RuleError& e) {
      throw WireError("illegal", e.what());
    } catch (const nlohmann::json::exception& e) {
      throw WireError("bad_action", e.what());
    }
    pump();
  }

  /// Moves the clock forward: delivers due chat fragments and fires timeouts.
  void advance_to(double t) {
    while (!finished()) {
      const auto due = next_event_time();
      if (!due || *due > t) break;
      now_ = std::max(now_, *due);
      if (!fragments_.empty() && fragments_.front().due <= now_) deliver_fragment();
      else fire_timeout();
      pump();
    }
    now_ = std::max(now_, t);
  }

  /// Next time something is scheduled, if anything.
  std::optional<double> next_event_time() const {
    std::optional<double> t;
    if (!fragments_.empty()) t = fragments_.front().due;
    if (deadline_) t = t ? std::min(*t, *deadline_) : *deadline_;
    return t;
  }

  std::vector<WireMessage> messages(Seat seat, std::uint64_t after) const {
    std::vector<WireMessage> out;
    for (const auto& m : outbox_[static_cast<std::size_t>(seat)])
      if (m.seq > after) out.push_back(m);
    return out;
  }
  std::uint64_t last_seq(Seat seat) const { return seq_[static_cast<std::size_t>(seat)]; }

  /// State payload as seen from `seat`.
  nlohmann::json project_state(Seat seat) const {
    const auto& g = game_;
    nlohmann::json j;
    j["version"] = kWireVersion;
    j["players"] = g.players;
    j["you"] = seat;
    j["role"] = to_string(g.roles[static_cast<std::size_t>(seat)]);
    if (g.roles[static_cast<std::size_t>(seat)] == Alignment::Evil) j["evil"] = g.evil().seats();
    j["phase"] = to_string(g.phase);
    j["quest"] = g.quest_index;
    j["party_size"] = g.phase == Phase::Finished ? 0 : g.party_size();
    j["leader"] = g.leader;
    j["rejections"] = g.consecutive_rejections;
    j["active_speaker"] = g.active_speaker() ? nlohmann::json(*g.active_speaker()) : nlohmann::json(nullptr);
    j["proposed"] = g.proposed ? nlohmann::json(g.proposed->seats()) : nlohmann::json(nullptr);
    j["revision_used"] = g.revision_used;
    nlohmann::json coins = nlohmann::json::array();
    for (const auto& q : g.quests)
      coins.push_back(q.played() ? nlohmann::json(q.outcome == QuestOutcome::Success ? "success" : "fail") : nlohmann::json(nullptr));
    j["coins"] = coins;
    nlohmann::json history = nlohmann::json::array();
    for (const auto& q : g.quests)
      if (q.played()) history.push_back({{"quest", q.index}, {"party", q.party.seats()}, {"fail_votes", q.fail_votes}});
    j["history"] = history;
    j["winner"] = g.winner ? nlohmann::json(to_string(*g.winner)) : nlohmann::json(nullptr);
    j["agents"] = nlohmann::json::array();
    for (Seat s = 0; s < kPlayers; ++s) j["agents"].push_back(!cfg_.seats[static_cast<std::size_t>(s)].human);
    return j;
  }

  /// Game log in the usual schema plus the wire-event annex.
  GameRecord record() const {
    GameRecord r = make_record(game_, events_);
    for (Seat s = 0; s < kPlayers; ++s) {
      const auto& a = agents_[static_cast<std::size_t>(s)];
      r.agents.push_back(a ? a->kind() : "human");
      if (!a) continue;
      for (auto& b : a->belief_snapshots()) r.beliefs.push_back(b);
      for (auto& u : a->usage()) r.usage.push_back(u);
    }
    r.params = {{"session", id_}, {"auto_actions", auto_actions_}, {"wire", wire_log_}};
    return r;
  }

 private:
  struct Fragment {
    Seat seat;
    std::string text;
    double due;
    bool last;
  };

  bool fragments_pending() const { return !fragments_.empty() || pending_say_.has_value(); }

  void send(Seat seat, const std::string& type, nlohmann::json payload) {
    auto& q = outbox_[static_cast<std::size_t>(seat)];
    q.push_back({++seq_[static_cast<std::size_t>(seat)], now_, type, std::move(payload)});
  }
  void broadcast(const std::string& type, const nlohmann::json& payload) {
    wire_log_.push_back({{"time", now_}, {"type", type}, {"payload", payload}});
    for (Seat s = 0; s < kPlayers; ++s)
      if (cfg_.seats[static_cast<std::size_t>(s)].human) send(s, type, payload);
  }
  void broadcast_state() {
    for (Seat s = 0; s < kPlayers; ++s)
      if (cfg_.seats[static_cast<std::size_t>(s)].human) send(s, "state", project_state(s));
  }

  void apply(const Event& e) {
    game_ = apply_event(game_, e);
    events_.push_back(e);
    requested_ = false;
    deadline_.reset();
    broadcast_state();
    if (finished()) broadcast("result", {{"winner", to_string(*game_.winner)}});
  }

  bool is_human(Seat s) const { return cfg_.seats[static_cast<std::size_t>(s)].human; }

  /// The request a human seat is currently expected to answer, if any.
  std::optional<std::pair<std::string, nlohmann::json>> pending_request(Seat seat) const {
    const auto& g = game_;
    if (!is_human(seat) || fragments_pending() || !open_seats().empty()) return std::nullopt;
    switch (g.phase) {
      case Phase::Proposal:
        if (g.leader == seat) return std::make_pair(std::string("your_turn"), nlohmann::json{{"action", "propose"}, {"party_size", g.party_size()}});
        break;
      case Phase::Discussion:
        if (g.active_speaker() == seat)
          return std::make_pair(std::string("your_turn"),
                                nlohmann::json{{"action", "speak"}, {"may_revise", g.closing_turn() && g.leader == seat && !g.revision_used}});
        break;
      case Phase::PartyVote:
        if (!party_ballots_.count(seat)) return std::make_pair(std::string("party_vote_request"), nlohmann::json{{"party", g.proposed->seats()}});
        break;
      case Phase::QuestVote:
        if (g.proposed->contains(seat) && !quest_ballots_.count(seat))
          return std::make_pair(std::string("quest_vote_request"), nlohmann::json{{"party", g.proposed->seats()}});
        break;
      case Phase::Finished: break;
    }
    return std::nullopt;
  }

  void request_humans(double timeout) {
    if (requested_) return;
    requested_ = true;
    bool any = false;
    for (Seat s = 0; s < kPlayers; ++s)
      if (auto r = pending_request(s)) {
        send(s, r->first, r->second);
        any = true;
      }
    if (any) deadline_ = now_ + timeout;
  }

  void schedule_message(Seat seat, const std::string& text) {
    auto parts = split_sentences(text);
    if (parts.empty()) parts.push_back(text.empty() ? "..." : text);
    double t = now_;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (cfg_.typing_delay) t += delays_.next();
      fragments_.push_back({seat, parts[i], t, i + 1 == parts.size()});
    }
    pending_say_ = Say{seat, text};
  }

  void deliver_fragment() {
    Fragment f = fragments_.front();
    fragments_.pop_front();
    broadcast("chat", {{"seat", f.seat}, {"text", f.text}, {"quest", game_.quest_index}, {"fragment", true}});
    if (f.last) {
      Say s = *pending_say_;
      pending_say_.reset();
      apply(s);
    }
  }

  void fire_timeout() {
    deadline_.reset();
    const auto& g = game_;
    switch (g.phase) {
      case Phase::Proposal: {
        PlayerSet p = decode_party(std::uniform_int_distribution<int>(1, party_code_count(g.party_size()))(rng_), g.party_size());
        auto_actions_.push_back({{"time", now_}, {"seat", g.leader}, {"action", "propose"}, {"party", p.seats()}});
        apply(Propose{p});
        break;
      }
      case Phase::Discussion: {
        const Seat s = *g.active_speaker();
        auto_actions_.push_back({{"time", now_}, {"seat", s}, {"action", "chat"}});
        broadcast("chat", {{"seat", s}, {"text", "(no message)"}, {"quest", g.quest_index}});
        apply(Say{s, "(no message)"});
        break;
      }
      case Phase::PartyVote:
        for (Seat s = 0; s < kPlayers; ++s)
          if (!party_ballots_.count(s)) {
            party_ballots_[s] = true;
            auto_actions_.push_back({{"time", now_}, {"seat", s}, {"action", "party_ballot"}, {"approve", true}});
          }
        maybe_close_votes();
        break;
      case Phase::QuestVote:
        for (Seat s : g.proposed->seats())
          if (!quest_ballots_.count(s)) {
            quest_ballots_[s] = true;
            auto_actions_.push_back({{"time", now_}, {"seat", s}, {"action", "quest_ballot"}, {"success", true}});
          }
        maybe_close_votes();
        break;
      case Phase::Finished: break;
    }
  }

  void maybe_close_votes() {
    if (game_.phase == Phase::PartyVote && party_ballots_.size() == static_cast<std::size_t>(kPlayers)) {
      PartyVote v;
      int yes = 0;
      for (const auto& [s, a] : party_ballots_) {
        v.approve[static_cast<std::size_t>(s)] = a;
        yes += a;
      }
      party_ballots_.clear();
      broadcast("party_ballot", {{"party", game_.proposed->seats()}, {"votes", v.approve}, {"approved", yes * 2 > kPlayers}});
      apply(v);
    } else if (game_.phase == Phase::QuestVote && quest_ballots_.size() == static_cast<std::size_t>(game_.proposed->size())) {
      QuestVote v;
      v.success = quest_ballots_;
      quest_ballots_.clear();
      const auto fails = std::count_if(v.success.begin(), v.success.end(), [](const auto& kv) { return !kv.second; });
      broadcast("quest_ballot", {{"quest", game_.quest_index}, {"fail_votes", fails}, {"outcome", fails == 0 ? "success" : "fail"}});
      apply(v);
    }
  }

  /// Runs agent turns until a human must act, a fragment is in flight, or the game ends.
  void pump() {
    if (!open_seats().empty()) return;  // play starts once every human seat is taken
    while (!finished() && !fragments_pending()) {
      const auto& g = game_;
      switch (g.phase) {
        case Phase::Proposal:
          if (is_human(g.leader)) return request_humans(cfg_.turn_timeout_s);
          apply(std::get<Propose>(agent_decide(g.leader)));
          break;
        case Phase::Discussion: {
          const Seat s = *g.active_speaker();
          if (is_human(s)) return request_humans(cfg_.turn_timeout_s);
          auto d = agent_decide(s);
          if (auto* p = std::get_if<Propose>(&d)) {
            apply(*p);
          } else {
            schedule_message(s, std::get<Message>(d).text);
            if (!cfg_.typing_delay) {
              while (!fragments_.empty()) deliver_fragment();
            }
          }
          break;
        }
        case Phase::PartyVote: {
          for (Seat s = 0; s < kPlayers; ++s)
            if (!is_human(s) && !party_ballots_.count(s)) party_ballots_[s] = std::get<PartyBallot>(agent_decide(s)).approve;
          const auto before = game_.proposals.size();
          maybe_close_votes();
          if (game_.proposals.size() == before) return request_humans(cfg_.ballot_timeout_s);
          break;
        }
        case Phase::QuestVote: {
          for (Seat s : g.proposed->seats())
            if (!is_human(s) && !quest_ballots_.count(s)) quest_ballots_[s] = std::get<QuestBallot>(agent_decide(s)).success;
          const int quest = game_.quest_index;
          maybe_close_votes();
          if (game_.quest_index == quest && !finished()) return request_humans(cfg_.ballot_timeout_s);
          break;
        }
        case Phase::Finished: return;
      }
    }
  }

  AgentDecision agent_decide(Seat s) { return decide(*agents_[static_cast<std::size_t>(s)], make_view(game_, s)); }

  std::string id_;
  SessionConfig cfg_;
  AgentResources res_;
  TypingDelays delays_;
  std::mt19937_64 rng_;
  GameState game_;
  std::vector<Event> events_;
  std::array<std::unique_ptr<Agent>, kPlayers> agents_;
  std::map<Seat, std::string> tokens_;
  std::set<Seat> joined_;
  std::array<std::deque<WireMessage>, kPlayers> outbox_;
  std::array<std::uint64_t, kPlayers> seq_{};
  std::map<Seat, bool> party_ballots_;
  std::map<Seat, bool> quest_ballots_;
  std::deque<Fragment> fragments_;
  std::optional<Say> pending_say_;
  std::optional<double> deadline_;
  bool requested_ = false;
  double now_ = 0.0;
  nlohmann::json auto_actions_ = nlohmann::json::array();
  nlohmann::json wire_log_ = nlohmann::json::array();
};

// ---------------------------------------------------------------- HTTP transport

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir = "web/dist";
  double tick_s = 0.05;
  double max_wait_s = 25.0;
};

/// Long-poll HTTP front end. Each session is guarded by one mutex; a ticker
/// thread advances session clocks in real time.
///
///   POST /api/sessions                      config -> {session, seats, tokens}
///   POST /api/sessions/:id/join             {seat, token}
///   POST /api/sessions/:id/action           {seat, token, type, ...}
///   GET  /api/sessions/:id/events?seat=&token=&after=&wait=
///   GET  /api/sessions/:id/log
///   GET  /                                  static client
class PlayServer {
 public:
  PlayServer(ServerConfig cfg, AgentResources res) : cfg_(std::move(cfg)), res_(std::move(res)) { routes(); }
  ~PlayServer() { stop(); }

  /// Binds and serves on a background thread; returns the bound port.
  int start() {
    port_ = cfg_.port == 0 ? http_.bind_to_any_port(cfg_.host) : (http_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    running_ = true;
    epoch_ = std::chrono::steady_clock::now();
    ticker_ = std::thread([this] { tick_loop(); });
    listener_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return port_;
  }
  void stop() {
    if (!running_.exchange(false)) return;
    http_.stop();
    if (listener_.joinable()) listener_.join();
    if (ticker_.joinable()) ticker_.join();
    std::lock_guard<std::mutex> lock(sessions_mu_);
    for (auto& [_, h] : sessions_) h->cv.notify_all();
  }
  int port() const { return port_; }

  std::string create_session(const nlohmann::json& config) {
    auto cfg = SessionConfig::from_json(config);
    std::lock_guard<std::mutex> lock(sessions_mu_);
    const std::string id = "s" + std::to_string(++next_id_);
    auto h = std::make_shared<Handle>();
    h->session = std::make_unique<Session>(id, cfg, res_);
    h->offset = elapsed();
    sessions_[id] = h;
    return id;
  }

 private:
  struct Handle {
    std::mutex mu;
    std::condition_variable cv;
    std::unique_ptr<Session> session;
    double offset = 0.0;  // server time at creation; session clocks start at 0
  };

  double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count(); }

  std::shared_ptr<Handle> find(const std::string& id) {
    std::lock_guard<std::mutex> lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw WireError("no_session", "unknown session " + id);
    return it->second;
  }

  void tick_loop() {
    while (running_) {
      std::vector<std::shared_ptr<Handle>> all;
      {
        std::lock_guard<std::mutex> lock(sessions_mu_);
        for (auto& [_, h] : sessions_) all.push_back(h);
      }
      const double t = elapsed();
      for (auto& h : all) {
        std::lock_guard<std::mutex> lock(h->mu);
        h->session->advance_to(t - h->offset);
        h->cv.notify_all();
      }
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.tick_s));
    }
  }

  static void reply(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void reply_error(httplib::Response& res, const std::string& code, const std::string& what, int status = 400) {
    reply(res, {{"type", "error"}, {"payload", {{"code", code}, {"message", what}}}}, status);
  }

  template <typename F>
  static auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const WireError& e) {
        reply_error(res, e.code(), e.what(), e.code() == "no_session" ? 404 : e.code() == "unauthorized" ? 403 : 400);
      } catch (const std::exception& e) {
        reply_error(res, "bad_request", e.what());
      }
    };
  }

  void routes() {
    http_.Post("/api/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = create_session(nlohmann::json::parse(req.body));
      auto h = find(id);
      std::lock_guard<std::mutex> lock(h->mu);
      nlohmann::json tokens = nlohmann::json::object();
      for (const auto& [s, t] : h->session->tokens()) tokens[std::to_string(s)] = t;
      reply(res, {{"session", id}, {"open_seats", h->session->open_seats()}, {"tokens", tokens}});
    }));
    http_.Post(R"(/api/sessions/([^/]+)/join)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto h = find(req.matches[1]);
      const auto body = nlohmann::json::parse(req.body);
      std::lock_guard<std::mutex> lock(h->mu);
      h->session->join(body.at("seat").get<Seat>(), body.at("token").get<std::string>());
      h->cv.notify_all();
      reply(res, {{"ok", true}});
    }));
    http_.Post(R"(/api/sessions/([^/]+)/action)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto h = find(req.matches[1]);
      const auto body = nlohmann::json::parse(req.body);
      std::lock_guard<std::mutex> lock(h->mu);
      const Seat seat = body.at("seat").get<Seat>();
      h->session->check_token(seat, body.at("token").get<std::string>());
      h->session->submit(seat, body);
      h->cv.notify_all();
      reply(res, {{"ok", true}});
    }));
    http_.Get(R"(/api/sessions/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto h = find(req.matches[1]);
      const Seat seat = std::stoi(req.get_param_value("seat"));
      const std::uint64_t after = req.has_param("after") ? std::stoull(req.get_param_value("after")) : 0;
      const double wait = std::min(cfg_.max_wait_s, req.has_param("wait") ? std::stod(req.get_param_value("wait")) : 0.0);
      std::unique_lock<std::mutex> lock(h->mu);
      h->session->check_token(seat, req.get_param_value("token"));
      h->cv.wait_for(lock, std::chrono::duration<double>(wait),
                     [&] { return !running_ || h->session->last_seq(seat) > after; });
      nlohmann::json out = nlohmann::json::array();
      for (const auto& m : h->session->messages(seat, after)) out.push_back(m.to_json());
      reply(res, {{"messages", out}});
    }));
    http_.Get(R"(/api/sessions/([^/]+)/log)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto h = find(req.matches[1]);
      std::lock_guard<std::mutex> lock(h->mu);
      if (!h->session->finished()) throw WireError("in_progress", "log is available once the game ends");
      reply(res, to_json(h->session->record()));
    }));
    if (std::filesystem::is_directory(cfg_.static_dir)) http_.set_mount_point("/", cfg_.static_dir.string());
    else
      http_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("<!doctype html><title>grail</title><p>client assets not built</p>", "text/html");
      });
  }

  ServerConfig cfg_;
  AgentResources res_;
  httplib::Server http_;
  std::thread listener_, ticker_;
  std::atomic<bool> running_{false};
  std::chrono::steady_clock::time_point epoch_ = std::chrono::steady_clock::now();
  int port_ = -1;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Handle>> sessions_;
  int next_id_ = 0;
};

}  // namespace grail

// Language priors: prompt assembly, judgment parsing, the 0.5 +/- beta mapping,
// and chat-message generation.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grail/game.hpp"
#include "grail/inference.hpp"
#include "grail/provider.hpp"

namespace grail {

enum class Delta { Higher, Lower, Same };

inline const char* to_string(Delta d) {
  switch (d) {
    case Delta::Higher: return "higher";
    case Delta::Lower: return "lower";
    case Delta::Same: return "same";
  }
  return "?";
}

struct PriorJudgment {
  std::array<Delta, kPlayers> deltas{Delta::Same, Delta::Same, Delta::Same, Delta::Same, Delta::Same, Delta::Same};
  bool parse_failed = false;
  std::vector<std::string> dropped;  // names that matched no player
};

struct BetaSchedule {
  std::array<double, kQuests> beta{0.05, 0.05, 0.10, 0.15, 0.15};

  static BetaSchedule zero() { return BetaSchedule{{0, 0, 0, 0, 0}}; }
  static BetaSchedule constant(double b) { return BetaSchedule{{b, b, b, b, b}}; }

  void validate() const {
    for (std::size_t i = 0; i < beta.size(); ++i) {
      if (!(beta[i] >= 0.0 && beta[i] < 0.5)) throw std::invalid_argument("beta must be in [0, 0.5)");
      if (i > 0 && beta[i] < beta[i - 1]) throw std::invalid_argument("beta schedule must be non-decreasing");
    }
  }
  double at(int quest) const {
    if (quest < 1 || quest > kQuests) throw std::out_of_range("quest index out of range");
    return beta[static_cast<std::size_t>(quest - 1)];
  }
};

inline PriorVector to_prior(const PriorJudgment& j, double beta) {
  if (!(beta >= 0.0 && beta < 0.5)) throw std::invalid_argument("beta must be in [0, 0.5)");
  PriorVector p;
  for (Delta d : j.deltas) p.p.push_back(d == Delta::Higher ? 0.5 + beta : d == Delta::Lower ? 0.5 - beta : 0.5);
  return p;
}

namespace prior_detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline std::optional<Delta> token(const std::string& raw) {
  const auto t = lower(raw);
  if (t == "increase" || t == "higher") return Delta::Higher;
  if (t == "decrease" || t == "lower") return Delta::Lower;
  if (t == "same") return Delta::Same;
  return std::nullopt;
}

/// First balanced {...} span, ignoring braces inside quotes.
inline std::optional<std::string> first_object(const std::string& s) {
  const auto open = s.find('{');
  if (open == std::string::npos) return std::nullopt;
  int depth = 0;
  char quote = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (quote) {
      if (c == '\\') ++i;
      else if (c == quote) quote = 0;
      continue;
    }
    if (c == '"' || c == '\'') quote = c;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return s.substr(open, i - open + 1);
  }
  return std::nullopt;
}

}  // namespace prior_detail

/// Extracts a name -> increase/decrease/same map from free-form model output.
/// Accepts JSON or Python-style single-quoted dicts, with prose around them.
/// Never throws; on failure every player is "same" and parse_failed is set.
inline PriorJudgment parse_judgment(const std::string& raw, const std::array<std::string, kPlayers>& names) {
  PriorJudgment out;
  static const std::regex pair(R"re(["']([^"'{}:,]+)["']\s*:\s*["']([A-Za-z]+)["'])re");
  int matched = 0;
  bool well_formed = false;  // an object that parses, even if empty
  try {
    const auto obj = prior_detail::first_object(raw);
    if (obj) {
      auto relaxed = *obj;
      std::replace(relaxed.begin(), relaxed.end(), '\'', '"');
      well_formed = nlohmann::json::parse(relaxed, nullptr, false).is_object();
    }
    const auto body = obj.value_or(raw);
    for (auto it = std::sregex_iterator(body.begin(), body.end(), pair); it != std::sregex_iterator(); ++it) {
      const auto name = prior_detail::lower((*it)[1].str());
      const auto tok = prior_detail::token((*it)[2].str());
      if (!tok) continue;
      auto seat = std::find_if(names.begin(), names.end(), [&](const std::string& n) { return prior_detail::lower(n) == name; });
      if (seat == names.end()) {
        out.dropped.push_back((*it)[1].str());
        continue;
      }
      out.deltas[static_cast<std::size_t>(seat - names.begin())] = *tok;
      ++matched;
    }
  } catch (const std::exception&) {
    matched = 0;
  }
  out.parse_failed = matched == 0 && out.dropped.empty() && !well_formed;
  if (out.parse_failed) out.deltas.fill(Delta::Same);
  return out;
}

/// The 'message' field of a JSON reply, tolerating prose and single quotes.
inline std::optional<std::string> parse_message(const std::string& raw) {
  auto obj = prior_detail::first_object(raw);
  if (!obj) return std::nullopt;
  auto j = nlohmann::json::parse(*obj, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("message") && j["message"].is_string()) {
    auto m = j["message"].get<std::string>();
    if (!m.empty()) return m;
  }
  static const std::regex single(R"re(['"]message['"]\s*:\s*'((?:[^'\\]|\\.)*)')re");
  std::smatch m;
  if (std::regex_search(*obj, m, single) && m[1].length() > 0) return m[1].str();
  return std::nullopt;
}

// ---------------------------------------------------------------- prompts

/// Everything a prompt needs, from one player's point of view.
struct PromptView {
  std::array<std::string, kPlayers> names = default_player_names();
  Seat self = 0;
  Alignment role = Alignment::Good;
  PlayerSet known_evil;                // filled for Evil players only
  std::vector<double> beliefs;         // b_j, empty if the agent keeps none
  int quest = 1;
  Seat leader = 0;
  std::optional<PlayerSet> proposed;
  int party_size = 2;
  int rejections = 0;
  std::vector<QuestRecord> history;    // played quests
  std::vector<ProposalRecord> proposals;
  std::vector<ChatLine> chat;          // whole game; prompts filter by quest
  int turn = 0;
};

inline PromptView prompt_view(const PublicState& s, Seat self, Alignment role = Alignment::Good, PlayerSet known_evil = {}) {
  PromptView v;
  v.names = s.players;
  v.self = self;
  v.role = role;
  v.known_evil = known_evil;
  v.quest = s.quest_index;
  v.leader = s.leader;
  v.proposed = s.proposed;
  v.party_size = s.party_size();
  v.rejections = s.consecutive_rejections;
  for (const auto& q : s.quests)
    if (q.played()) v.history.push_back(q);
  v.proposals = s.proposals;
  v.chat = s.chat;
  v.turn = s.turn;
  return v;
}

namespace prompts {

inline std::string name_list(const PromptView& v, PlayerSet s) {
  std::string out = "[";
  bool first = true;
  for (Seat x : s.seats()) {
    if (!first) out += ", ";
    out += v.names[static_cast<std::size_t>(x)];
    first = false;
  }
  return out + "]";
}

inline std::string rules() {
  return "You are playing a social deduction game, The Resistance: Avalon. The game consists of 6 total players: 4 Loyal "
         "Servants of Arthur (good players) and 2 Minions of Mordred (evil players) -- there are no special roles. The game "
         "consists of up to 5 Rounds, each consisting of a Team Building phase and a Quest phase. Good players win the game by "
         "successfully completing 3 Quests. Evil players win if 3 Quests end in failure.\n\n"
         "In the Team Building phase the Leader proposes a Team (a party) to complete a Quest (a mission) -- a majority of "
         "players will either approve the proposed Team and move to the Quest phase, or reject the proposed Team passing "
         "leadership to the next player and repeating the process until a Team is approved. If 5 Team proposals are "
         "consecutively rejected (for the same quest), the game will end and the evil side will win. In the Quest phase those "
         "players selected to be on the Team will determine if the quest is successful through a hidden vote. For a Quest to "
         "succeed, all Team members must vote for success -- a single failure vote will cause the Quest to fail.\n\n";
}

inline std::string role(const PromptView& v) {
  const auto& me = v.names[static_cast<std::size_t>(v.self)];
  if (v.role == Alignment::Good)
    return "Your name in this game is " + me +
           ", and you are a loyal Servant of Arthur (a good player). The evil players know who each other are, but you and "
           "other good players have no special knowledge of anyone's role. Therefore, evil players will use deception and "
           "pretend to be good so they can participate in Quests and cause them to fail. As a good player, your goal is to "
           "ensure that Quests succeed by selecting other good players to participate in Quests. Approve only Teams where you "
           "trust everyone. Even a single evil player on the team is enough for failure.\n\n";
  std::string evil;
  for (Seat e : v.known_evil.seats()) evil += (evil.empty() ? "" : ", ") + v.names[static_cast<std::size_t>(e)] + ": evil";
  return "Your name in this game is " + me +
         ", and you are a Minion of Mordred (an evil player). The good players have no special knowledge of anyone's role, "
         "including yours, and your strategy is to pretend to be a good player such that you are selected for Quests and can "
         "vote for them to fail. Your subtle misdirections should aim to create confusion and prevent 3 missions from "
         "succeeding. In discussions, maintain your disguise as a good player, but during voting you should vote to fail "
         "Quests. Remember, as an evil player you win the game by causing 3 Quests to fail.\n\n"
         "Your special information, just for you, is:\n" +
         evil +
         "\n\nNote: You have received special information which you need to keep private. Keep the information confidential "
         "and use it wisely. Furthermore try to not make general statements which could indicate that you are hiding "
         "something.\n\n";
}

inline std::string chat_lines(const PromptView& v, bool this_quest_only) {
  std::string out;
  for (const auto& c : v.chat) {
    if (this_quest_only && c.quest != v.quest) continue;
    out += v.names[static_cast<std::size_t>(c.speaker)] + ": " + c.text + "\n";
  }
  return out;
}

inline std::string belief_dict(const PromptView& v) {
  std::string out = "{";
  for (std::size_t j = 0; j < kPlayers; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", j < v.beliefs.size() ? v.beliefs[j] : 0.5);
    out += (j ? ", '" : "'") + v.names[j] + "': " + buf;
  }
  return out + "}";
}

inline std::string beliefs(const PromptView& v) {
  std::string out =
      "At the start of this round, your current beliefs about each player's alignment are given as a probability "
      "dictionary, where 0 means definitely good, 1 means definitely evil, and values in between indicate uncertainty:\n\n" +
      belief_dict(v) +
      "\n\nThese probabilities represent your current beliefs based on prior rounds but do not account for new messages or "
      "actions this round. You can use them to reason about the game, but do not explicitly mention the values or refer to "
      "them as externally provided -- these should represent your internally held beliefs.\n\n"
      "The following messages have already been exchanged this round. This consists of both player chat messages and game "
      "system messages, with the most recent being last:\n"
      "START CHAT MESSAGES\n" +
      chat_lines(v, true) + "END CHAT MESSAGES\n\n" + "The current Round is " + std::to_string(v.quest) +
      ". The previous Rounds consisted of the following Quest Teams and outcomes:\n";
  for (const auto& q : v.history)
    out += "- Quest " + std::to_string(q.index) + " party: " + name_list(v, q.party) + " Outcome: " +
           (q.outcome == QuestOutcome::Success ? "success" : "fail") + "\n";
  return out + "\n";
}

inline std::string style() {
  return "Now, respond in the game chat as if you are a college student, typing informally (e.g., using abbreviations, casual "
         "language, and minimal punctuation). Do not use overly formal or structured responses and do not use emojis. Make "
         "your response detailed enough to persuade other players but do not be overly verbose. Shorter messages are more "
         "effective; don't use more than a few sentences and prefer fewer when possible.\n\n";
}

inline std::string proposal_task(const PromptView& v, PlayerSet party) {
  return "You are the party leader this round, and you must propose a team for the mission. The team you have chosen: " +
         name_list(v, party) + ". Keep in mind that the party size is fixed in each Round and the party this Round must consist of " +
         std::to_string(v.party_size) + " players.\n\n" + style() +
         "Explain why you picked this team. Convince the other players that this is the best choice. If there are any doubts "
         "from other players, acknowledge them but defend your reasoning. If your belief in the team is strong, argue "
         "confidently; if you are uncertain, express that but still justify your choice.\n"
         "Please respond with a JSON object with one key named 'message' containing your chat message.";
}

inline std::string discussion_task(const PromptView& v) {
  const PlayerSet party = v.proposed.value_or(PlayerSet{});
  return "The current mission proposal: " + v.names[static_cast<std::size_t>(v.leader)] +
         " has proposed the following players for this mission: " + name_list(v, party) +
         ". Keep in mind that the party size is fixed in each Round and the party this Round must consist of " +
         std::to_string(v.party_size) + " players.\n\n" + style() +
         "React to the proposed party. If you agree, say why you think it's a good choice. If you disagree, make an argument "
         "against it and suggest who you think should go instead. Take into account how strongly you hold your beliefs (if the "
         "probabilities are closer to 0.5 than 0 or 1, you should express uncertainty rather than strong opinions).\n"
         "Respond to chat messages sent by other players. If someone says something you agree with, acknowledge it; if someone "
         "accuses you, defend yourself logically. Unless you have a strongly held belief about a player, it is not always worth "
         "arguing for or against specific players, especially early in the game such as on Quest 1.\n"
         "Please respond with a JSON object with one key named 'message' containing your chat message.";
}

inline std::string prior_task(const PromptView& v) {
  std::string example = "{";
  const char* tokens[] = {"increase", "increase", "same", "decrease", "same", "decrease"};
  for (std::size_t j = 0; j < kPlayers; ++j) example += (j ? ", '" : "'") + v.names[j] + "': '" + tokens[j] + "'";
  example += "}";
  return "Now, analyze how the new chat messages and game actions affect your beliefs about each player's alignment. For each "
         "player, decide if their probability of being evil should:\n"
         "- Increase (if their behavior suggests they might be evil)\n"
         "- Decrease (if their behavior suggests they might be good)\n"
         "- Stay the same (if there is no strong evidence to change your belief)\n\n"
         "Consider whether they are behaving suspiciously or illogically with respect to chat messages or party votes, e.g. "
         "always rejecting party votes unless they or another specific player is in it, or making assertions without evidence "
         "(especially early in the game such as on Quest 1 where evidence is limited) as these may be signs a player is evil.\n"
         "Also consider whether their beliefs align with your own, or if their beliefs seem contrary to the group consensus as "
         "there are more Servants than Minions and could also suggest a player is evil.\n"
         "Provide your updated belief adjustments as a JSON message, mapping player names to 'increase', 'decrease', or 'same'. "
         "Do not explain your reasoning - just return the JSON message.\n"
         "If there isn't sufficient evidence to update a belief about a player, then it is safer to indicate 'same'.\n"
         "Example output:\n" +
         example;
}

}  // namespace prompts

inline std::string build_prior_prompt(const PromptView& v) {
  return prompts::rules() + prompts::role(v) + prompts::beliefs(v) + prompts::prior_task(v);
}

enum class MessageKind { ProposalPitch, Discussion, Revision };

inline std::string build_message_prompt(MessageKind kind, const PromptView& v, std::optional<PlayerSet> party = std::nullopt) {
  const std::string head = prompts::rules() + prompts::role(v) + prompts::beliefs(v);
  switch (kind) {
    case MessageKind::ProposalPitch:
    case MessageKind::Revision:
      return head + prompts::proposal_task(v, party.value_or(v.proposed.value_or(PlayerSet{})));
    case MessageKind::Discussion: return head + prompts::discussion_task(v);
  }
  return head;
}

struct GeneratedMessage {
  std::string text;
  ProviderUsage usage;
  bool fallback = false;
  std::string error;
};

inline std::string fallback_message(MessageKind kind, const PromptView& v, std::optional<PlayerSet> party = std::nullopt) {
  switch (kind) {
    case MessageKind::ProposalPitch: return "going with " + prompts::name_list(v, party.value_or(v.proposed.value_or(PlayerSet{}))) + ".";
    case MessageKind::Revision: return "changed my mind, going with " + prompts::name_list(v, party.value_or(PlayerSet{})) + ".";
    case MessageKind::Discussion: return "ok with this for now.";
  }
  return "ok.";
}

/// Asks the provider for a chat message; any failure yields the canned fallback.
inline GeneratedMessage generate_message(Provider& provider, MessageKind kind, const PromptView& v,
                                         std::optional<PlayerSet> party = std::nullopt) {
  GeneratedMessage out;
  try {
    auto r = provider.call(build_message_prompt(kind, v, party), CallParams{"message"});
    out.usage = r.usage;
    if (auto m = parse_message(r.text)) {
      out.text = *m;
      return out;
    }
    out.error = "reply had no 'message' field";
  } catch (const ProviderError& e) {
    out.error = e.what();
  }
  out.fallback = true;
  out.text = fallback_message(kind, v, party);
  return out;
}

struct ExtractedPrior {
  PriorJudgment judgment;
  ProviderUsage usage;
  std::string error;
};

inline ExtractedPrior extract_prior(Provider& provider, const PromptView& v) {
  ExtractedPrior out;
  try {
    auto r = provider.call(build_prior_prompt(v), CallParams{"prior"});
    out.usage = r.usage;
    out.judgment = parse_judgment(r.text, v.names);
    if (out.judgment.parse_failed) out.error = "unparseable judgment";
  } catch (const ProviderError& e) {
    out.judgment.parse_failed = true;
    out.error = e.what();
  }
  return out;
}

}  // namespace grail

#include <gtest/gtest.h>

#include <random>

#include "grail/prior.hpp"

namespace grail {
namespace {

const auto& kNames = default_player_names();

TEST(ToPrior, MappingIsExact) {
  PriorJudgment j;
  j.deltas = {Delta::Higher, Delta::Lower, Delta::Same, Delta::Higher, Delta::Lower, Delta::Same};
  for (double beta : {0.0, 0.05, 0.10, 0.15, 0.20, 0.25}) {
    auto p = to_prior(j, beta);
    ASSERT_EQ(p.p.size(), 6u);
    EXPECT_EQ(p.p[0], 0.5 + beta);
    EXPECT_EQ(p.p[1], 0.5 - beta);
    EXPECT_EQ(p.p[2], 0.5);
  }
  EXPECT_EQ(to_prior(j, 0.1).p[0], 0.6);
  EXPECT_EQ(to_prior(j, 0.25).p[1], 0.25);
  EXPECT_THROW(to_prior(j, 0.5), std::invalid_argument);
  EXPECT_THROW(to_prior(j, -0.01), std::invalid_argument);
}

TEST(BetaSchedule, DefaultsAndValidation) {
  BetaSchedule s;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.at(1), 0.05);
  EXPECT_EQ(s.at(5), 0.15);
  EXPECT_THROW(s.at(0), std::out_of_range);
  EXPECT_THROW((BetaSchedule{{0.2, 0.1, 0.1, 0.1, 0.1}}.validate()), std::invalid_argument);
  EXPECT_THROW(BetaSchedule::constant(0.5).validate(), std::invalid_argument);
}

TEST(ParseJudgment, ExampleOutput) {
  auto j = parse_judgment(
      "{'Sam': 'increase', 'Paul': 'increase', 'Luca': 'same', 'Jane': 'decrease', 'Kira': 'same', 'Mia': 'decrease'}", kNames);
  EXPECT_FALSE(j.parse_failed);
  EXPECT_EQ(j.deltas, (std::array<Delta, 6>{Delta::Higher, Delta::Higher, Delta::Same, Delta::Lower, Delta::Same, Delta::Lower}));
}

TEST(ParseJudgment, FallbacksAndTolerance) {
  auto empty = parse_judgment("", kNames);
  EXPECT_TRUE(empty.parse_failed);
  for (auto d : empty.deltas) EXPECT_EQ(d, Delta::Same);

  auto wrapped = parse_judgment("Sure! Here you go:\n```json\n{\"Sam\": \"Increase\", \"mia\": \"decrease\"}\n```\nhope it helps", kNames);
  EXPECT_FALSE(wrapped.parse_failed);
  EXPECT_EQ(wrapped.deltas[0], Delta::Higher);
  EXPECT_EQ(wrapped.deltas[5], Delta::Lower);
  EXPECT_EQ(wrapped.deltas[1], Delta::Same);

  auto unknown = parse_judgment("{'Bob': 'increase', 'Jane': 'decrease'}", kNames);
  EXPECT_EQ(unknown.dropped, std::vector<std::string>{"Bob"});
  EXPECT_EQ(unknown.deltas[3], Delta::Lower);

  EXPECT_FALSE(parse_judgment("{}", kNames).parse_failed);
}

TEST(ParseJudgment, NeverThrowsOnArbitraryInput) {
  std::mt19937_64 rng(42);
  const std::string alphabet = "{}[]'\":, abcSamMiaincreasedecrease\n\\";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 200);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (std::size_t k = len(rng); k > 0; --k) s += alphabet[pick(rng)];
    PriorJudgment j;
    ASSERT_NO_THROW(j = parse_judgment(s, kNames));
    for (auto d : j.deltas) EXPECT_TRUE(d == Delta::Higher || d == Delta::Lower || d == Delta::Same);
  }
}

TEST(ParseMessage, JsonAndFallback) {
  EXPECT_EQ(parse_message(R"({"message": "lets go"})"), "lets go");
  EXPECT_EQ(parse_message("ok here {'message': 'i trust jane'} done"), "i trust jane");
  EXPECT_FALSE(parse_message("just text"));
  EXPECT_FALSE(parse_message(R"({"msg": "x"})"));
}

PromptView sample_view() {
  auto g = new_game(1, roles_from_evil(PlayerSet{4, 5}));
  g = apply_event(g, Propose{PlayerSet{0, 1}});
  g = apply_event(g, Say{0, "i picked me and paul"});
  auto v = prompt_view(g, 2);
  v.beliefs = {0.5, 0.333333, 0, 0.5, 0.61, 0.7};
  return v;
}

TEST(Prompts, PriorPromptModules) {
  auto v = sample_view();
  auto p = build_prior_prompt(v);
  const auto rules = p.find("You are playing a social deduction game");
  const auto role = p.find("Your name in this game is Luca");
  const auto state = p.find("START CHAT MESSAGES\nSam: i picked me and paul\nEND CHAT MESSAGES");
  const auto task = p.find("mapping player names to 'increase', 'decrease', or 'same'");
  ASSERT_NE(rules, std::string::npos);
  ASSERT_NE(role, std::string::npos);
  ASSERT_NE(state, std::string::npos);
  ASSERT_NE(task, std::string::npos);
  EXPECT_LT(rules, role);
  EXPECT_LT(role, state);
  EXPECT_LT(state, task);
  EXPECT_NE(p.find("{'Sam': 0.50, 'Paul': 0.33, 'Luca': 0.00, 'Jane': 0.50, 'Kira': 0.61, 'Mia': 0.70}"), std::string::npos);
  EXPECT_NE(p.find("The current Round is 1."), std::string::npos);
}

TEST(Prompts, ChatFromEarlierQuestsStaysOut) {
  auto v = sample_view();
  v.quest = 2;
  for (int i = 0; i < 5; ++i) v.chat.push_back({static_cast<Seat>(i), "round two line " + std::to_string(i), 2, i});
  auto p = build_prior_prompt(v);
  EXPECT_EQ(p.find("i picked me and paul"), std::string::npos);
  for (int i = 0; i < 5; ++i) EXPECT_NE(p.find("round two line " + std::to_string(i)), std::string::npos);
}

TEST(Prompts, ProposalAndDiscussion) {
  auto v = sample_view();
  auto pitch = build_message_prompt(MessageKind::ProposalPitch, v, PlayerSet{2, 3});
  EXPECT_NE(pitch.find("The team you have chosen: [Luca, Jane]"), std::string::npos);
  EXPECT_NE(pitch.find("must consist of 2 players"), std::string::npos);
  auto talk = build_message_prompt(MessageKind::Discussion, v);
  EXPECT_NE(talk.find("Sam has proposed the following players for this mission: [Sam, Paul]"), std::string::npos);

  v.role = Alignment::Evil;
  v.known_evil = PlayerSet{2, 5};
  EXPECT_NE(build_prior_prompt(v).find("Luca: evil, Mia: evil"), std::string::npos);
}

TEST(GenerateMessage, ProviderOutputsAndFallbacks) {
  auto v = sample_view();
  ScriptedProvider good(std::vector<std::string>{R"({"message": "sam and paul look fine"})"});
  auto m = generate_message(good, MessageKind::Discussion, v);
  EXPECT_EQ(m.text, "sam and paul look fine");
  EXPECT_FALSE(m.fallback);
  EXPECT_GT(m.usage.input_tokens, 0);

  ScriptedProvider prose(std::vector<std::string>{"I think this is fine."});
  auto f = generate_message(prose, MessageKind::Discussion, v);
  EXPECT_TRUE(f.fallback);
  EXPECT_EQ(f.text, fallback_message(MessageKind::Discussion, v));

  ScriptedProvider echo;
  EXPECT_EQ(generate_message(echo, MessageKind::Discussion, v).text, generate_message(echo, MessageKind::Discussion, v).text);
}

TEST(ExtractPrior, UsesProviderAndNeverAborts) {
  auto v = sample_view();
  ScriptedProvider p(std::vector<std::string>{"{'Kira': 'increase'}"});
  auto e = extract_prior(p, v);
  EXPECT_EQ(e.judgment.deltas[4], Delta::Higher);
  EXPECT_TRUE(e.error.empty());

  ScriptedProvider failing([](const std::string&, const CallParams&) -> std::string {
    throw ProviderError(ProviderError::Kind::Exhausted, "down");
  });
  auto f = extract_prior(failing, v);
  EXPECT_TRUE(f.judgment.parse_failed);
  EXPECT_EQ(f.error, "down");
}

}  // namespace
}  // namespace grail

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "grail/codec.hpp"
#include "test_support.hpp"

namespace grail {
namespace {

// Independent enumeration with nested loops, 1-based ids.
std::vector<std::vector<int>> nested_subsets(int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i <= kPlayers; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(1);
  return out;
}

PlayerSet from_ids(const std::vector<int>& v) {
  PlayerSet s;
  for (int id : v) s.insert(id - 1);
  return s;
}

TEST(Codec, PartyExamples) {
  EXPECT_EQ(encode_party(ids({1, 2}), 2), 1);
  EXPECT_EQ(encode_party(ids({1, 3}), 2), 2);
  EXPECT_EQ(encode_party(ids({5, 6}), 2), 15);
  EXPECT_EQ(decode_party(1, 2), ids({1, 2}));
  EXPECT_EQ(decode_party(15, 2), ids({5, 6}));
}

TEST(Codec, PartyMatchesNestedLoopEnumeration) {
  for (int k : {2, 3, 4}) {
    auto subsets = nested_subsets(k);
    ASSERT_EQ(static_cast<int>(subsets.size()), party_code_count(k));
    for (std::size_t i = 0; i < subsets.size(); ++i) {
      EXPECT_EQ(encode_party(from_ids(subsets[i]), k), static_cast<int>(i) + 1);
      EXPECT_EQ(decode_party(static_cast<int>(i) + 1, k), from_ids(subsets[i]));
    }
  }
}

TEST(Codec, PartyErrors) {
  EXPECT_THROW(encode_party(ids({1, 2, 3}), 2), CodecError);
  EXPECT_THROW(encode_party(PlayerSet{0, 6}, 2), CodecError);
  EXPECT_THROW(ids({0, 1}), CodecError);
  EXPECT_THROW(decode_party(0, 2), CodecError);
  EXPECT_THROW(decode_party(16, 2), CodecError);
  EXPECT_THROW(decode_party(21, 3), CodecError);
}

TEST(Codec, VoteOrderingSizeThenLex) {
  std::vector<std::vector<int>> expected;
  for (int k : {4, 5, 6})
    for (auto& s : nested_subsets(k)) expected.push_back(s);
  ASSERT_EQ(expected.size(), 22u);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(encode_vote(from_ids(expected[i])), static_cast<int>(i) + 1);
    EXPECT_EQ(decode_vote(static_cast<int>(i) + 1), from_ids(expected[i]));
  }
  EXPECT_EQ(encode_vote(ids({1, 2, 3, 4})), 1);
  EXPECT_EQ(encode_vote(ids({1, 2, 3, 4, 5, 6})), 22);
  EXPECT_THROW(encode_vote(ids({1, 2, 3})), CodecError);
  EXPECT_THROW(decode_vote(0), CodecError);
}

TEST(Codec, Outcomes) {
  EXPECT_EQ(encode_outcome(QuestOutcome::Success), 2);
  EXPECT_EQ(encode_outcome(QuestOutcome::Fail), 1);
  EXPECT_EQ(encode_outcome(QuestOutcome::Unplayed), 0);
}

TEST(Codec, Cardinalities) {
  const auto& v = variable_specs();
  ASSERT_EQ(v.size(), 15u);
  std::vector<int> card;
  for (const auto& s : v) card.push_back(s.cardinality);
  EXPECT_EQ(card, (std::vector<int>{16, 23, 3, 21, 23, 3, 16, 23, 3, 21, 23, 3, 16, 23, 3}));
}

TEST(Codec, EgoTransformExamples) {
  EncodedState e;
  e.party[0] = encode_party(ids({3, 4}), 2);
  e.vote[0] = encode_vote(ids({1, 2, 3, 4, 5, 6}));
  e.outcome[0] = 2;
  EXPECT_EQ(ego_transform(e, 1), e);
  EXPECT_EQ(ego_transform(e, 3).party[0], 1);
  EXPECT_EQ(ego_transform(ego_transform(e, 3), 5), e);  // offset 2 then offset 6 - 2
  EXPECT_THROW(ego_transform(e, 0), CodecError);
  EXPECT_THROW(ego_transform(e, 7), CodecError);
}

TEST(Codec, EgoTransformCompositionFuzz) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = test::random_encoded_state(rng);
    for (int a = 1; a <= kPlayers; ++a) {
      const int inverse = ((kPlayers - (a - 1)) % kPlayers) + 1;
      EXPECT_EQ(ego_transform(ego_transform(s, a), inverse), s);
      for (int b = 1; b <= kPlayers; ++b) {
        const int combined = ((a - 1 + b - 1) % kPlayers) + 1;
        EXPECT_EQ(ego_transform(ego_transform(s, a), b), ego_transform(s, combined));
      }
    }
  }
}

TEST(Codec, EgoTransformPreservesEvilMembership) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = test::random_encoded_state(rng);
    auto evil = test::random_evil(rng);
    for (int ego = 1; ego <= kPlayers; ++ego) {
      auto t = ego_transform(s, ego);
      PlayerSet relabeled;
      for (Seat x : evil.seats()) relabeled.insert(((x - (ego - 1)) % kPlayers + kPlayers) % kPlayers);
      for (std::size_t q = 0; q < kQuests; ++q) {
        if (s.party[q] == 0) continue;
        auto before = decode_party(s.party[q], kPartySizes[q]);
        auto after = decode_party(t.party[q], kPartySizes[q]);
        EXPECT_EQ(PlayerSet::from_mask(before.mask() & evil.mask()).size(),
                  PlayerSet::from_mask(after.mask() & relabeled.mask()).size());
      }
    }
  }
}

TEST(Codec, CircularAugmentRotatesRoles) {
  GameRecord r;
  r.roles = roles_from_evil(ids({2, 5}));
  QuestRecord q;
  q.index = 1;
  q.party = ids({1, 2});
  q.approvals = {true, true, true, true, false, false};
  q.outcome = QuestOutcome::Fail;
  r.quests.push_back(q);
  auto rots = circular_augment(r);
  ASSERT_EQ(rots.size(), 6u);
  EXPECT_EQ(to_jsonl_line(rots[0]), to_jsonl_line(r));
  EXPECT_EQ(rots[1].evil(), ids({3, 6}));
  EXPECT_EQ(rots[1].quests[0].party, ids({2, 3}));
  EXPECT_EQ(rots[1].quests[0].approvals, (std::array<bool, 6>{false, true, true, true, true, false}));

  // Closure: rotating every rotation again yields the same multiset of records.
  std::vector<std::string> once, twice;
  for (const auto& x : rots) once.push_back(to_jsonl_line(x));
  for (const auto& x : rots) twice.push_back(to_jsonl_line(rotate_record(x, 1)));
  std::sort(once.begin(), once.end());
  std::sort(twice.begin(), twice.end());
  EXPECT_EQ(once, twice);
}

TEST(Codec, ValidateRejectsPartialQuests) {
  EncodedState e;
  e.party[0] = 1;
  EXPECT_THROW(e.validate(), CodecError);
  e.vote[0] = 1;
  e.outcome[0] = 2;
  EXPECT_NO_THROW(e.validate());
  e.vote[0] = 23;
  EXPECT_THROW(e.validate(), CodecError);
}

TEST(Codec, EnumerationCsv) {
  std::ostringstream out;
  write_enumeration_csv(out);
  auto text = out.str();
  EXPECT_NE(text.find("party,1,2,1 2\n"), std::string::npos);
  EXPECT_NE(text.find("vote,22,6,1 2 3 4 5 6\n"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 15 + 20 + 15 + 22);
}

}  // namespace
}  // namespace grail

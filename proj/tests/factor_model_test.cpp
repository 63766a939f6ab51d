#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "grail/factor_model.hpp"
#include "test_support.hpp"

namespace grail {
namespace {

std::vector<GameRecord> random_corpus(std::size_t n, std::uint64_t seed0 = 1000) {
  std::vector<GameRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(test::random_record(seed0 + i));
  return out;
}

GameRecord game_with_rounds(int rounds) {
  for (std::uint64_t seed = 0;; ++seed) {
    auto r = test::random_record(seed);
    if (static_cast<int>(r.quests.size()) == rounds) return r;
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("grail_" + name)).string();
}

TEST(FactorModel, EmbeddingWidths) {
  EXPECT_EQ(embedding_width(16), 4);
  EXPECT_EQ(embedding_width(21), 5);
  EXPECT_EQ(embedding_width(23), 5);
  EXPECT_EQ(embedding_width(3), 2);
  FactorModel m(1);
  EXPECT_EQ(m.input_width(), 57);
  const auto& specs = variable_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(m.params().embedding(i).rows(), specs[i].cardinality);
    EXPECT_TRUE(m.params().embedding(i).row(0).isZero(0.0));
  }
}

TEST(FactorModel, PreGameOutputIsTheSameForEveryEgo) {
  FactorModel m(3);
  EncodedState zero;
  const double base = m.evil_probability(zero, 0);
  for (Seat j = 1; j < kPlayers; ++j) EXPECT_EQ(m.evil_probability(zero, j), base);
  EXPECT_GT(base, 0.0);
  EXPECT_LT(base, 1.0);
}

TEST(FactorModel, LargeTemperatureTendsToHalf) {
  FactorModel m(3);
  std::mt19937_64 rng(4);
  auto s = test::random_encoded_state(rng, 3);
  m.set_temperature(1e12);
  EXPECT_NEAR(m.forward(s), 0.5, 1e-9);
  EXPECT_THROW(m.set_temperature(0.0), FactorModelError);
}

TEST(FactorModel, OutOfRangeCodeRejected) {
  FactorModel m(3);
  EncodedState bad;
  bad.vote[0] = 23;
  EXPECT_THROW(m.forward(bad), CodecError);
}

TEST(FactorModel, FutureFieldsNeverChangeOutput) {
  FactorModel m(5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto r = test::random_record(seed);
    for (int t = 1; t <= static_cast<int>(r.quests.size()); ++t) {
      auto prefix = encode_quests(r.quests, t);
      auto full = encode_quests(r.quests);
      EXPECT_EQ(mask_after(full, t), prefix);
      EXPECT_EQ(m.forward(mask_after(full, t)), m.forward(prefix));
    }
  }
}

TEST(Dataset, ThreeRoundGameGives108Samples) {
  auto g = game_with_rounds(3);
  auto d = build_dataset({g});
  EXPECT_EQ(d.size(), 108u);
  int evil = 0;
  for (const auto& s : d) evil += s.label;
  EXPECT_EQ(evil, 36);  // 2 of 6 per (prefix, rotation)
  for (std::size_t i = 0; i < 36; ++i) {
    const auto& f = d[i].features;
    EXPECT_NE(f.party[0], 0);
    for (std::size_t q = 1; q < kQuests; ++q) EXPECT_EQ(f.party[q] + f.vote[q] + f.outcome[q], 0);
  }
}

TEST(Dataset, LabelsFollowEgo) {
  auto g = game_with_rounds(3);
  auto d = build_dataset({g}, {.rotations = false});
  ASSERT_EQ(d.size(), 18u);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(d[i].label, g.roles[i] == Alignment::Evil ? 1 : 0);
  EXPECT_EQ(d[2].features, ego_transform(encode_quests(g.quests, 1), 3));
}

TEST(Dataset, RotationsOnlyRepeatTheEgoSamples) {
  auto key = [](const TrainingSample& s) {
    auto f = s.features.flat();
    return std::make_pair(std::vector<int>(f.begin(), f.end()), s.label);
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = test::random_record(seed);
    std::map<std::pair<std::vector<int>, int>, int> with, without;
    for (const auto& s : build_dataset({g})) ++with[key(s)];
    for (const auto& s : build_dataset({g}, {.rotations = false})) ++without[key(s)];
    ASSERT_EQ(with.size(), without.size());
    for (const auto& [k, n] : without) EXPECT_EQ(with[k], 6 * n);
  }
}

TEST(Dataset, SplitIsDisjointByGame) {
  auto s = split_games(1000, 7);
  EXPECT_EQ(s.train.size(), 800u);
  EXPECT_EQ(s.validation.size(), 100u);
  EXPECT_EQ(s.test.size(), 100u);
  std::vector<int> seen(1000, 0);
  for (auto* part : {&s.train, &s.validation, &s.test})
    for (auto g : *part) ++seen[g];
  for (int c : seen) EXPECT_EQ(c, 1);

  auto corpus = random_corpus(20);
  auto all = build_dataset(corpus, {.rotations = false});
  auto sp = split_games(corpus.size(), 1);
  auto tr = select_games(all, sp.train), te = select_games(all, sp.test);
  for (const auto& a : tr)
    for (const auto& b : te) ASSERT_NE(a.game, b.game);
}

TEST(Training, GradientCheck) {
  auto corpus = random_corpus(10);
  auto d = build_dataset(corpus, {.rotations = false});
  std::vector<EncodedState> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < 10; ++i) {
    x.push_back(d[i * 7 % d.size()].features);
    y.push_back(d[i * 7 % d.size()].label);
  }
  FactorModel m(11);
  EXPECT_LT(gradient_check(m, x, y), 1e-4);
}

TEST(Training, SameSeedSameWeights) {
  auto d = build_dataset(random_corpus(40), {.rotations = false});
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 32;
  auto a = train(d, {}, cfg);
  auto b = train(d, {}, cfg);
  for (std::size_t i = 0; i < a.model.params().tensors.size(); ++i)
    EXPECT_EQ(a.model.params().tensors[i], b.model.params().tensors[i]);
  EXPECT_EQ(a.history.size(), 3u);
}

TEST(Training, EmptyOrDivergentTrainingFails) {
  EXPECT_THROW(train({}, {}, TrainConfig{}), TrainingError);
  auto d = build_dataset(random_corpus(5), {.rotations = false});
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.max_epochs = 5;
  EXPECT_THROW(train(d, {}, cfg), TrainingError);
}

TEST(Training, LearnsThatFailedPartiesImplicateTheEgo) {
  auto corpus = random_corpus(600);
  auto all = build_dataset(corpus, {.rotations = false});
  auto sp = split_games(corpus.size(), 3);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 25;
  cfg.patience = 5;
  auto res = train(select_games(all, sp.train), select_games(all, sp.validation), cfg);
  EXPECT_GT(res.val_f1, 0.5);

  // Ego is player 1 after the transform; count failed parties it sat on.
  double hi = 0, lo = 0;
  int n_hi = 0, n_lo = 0;
  for (const auto& s : select_games(all, sp.test)) {
    int failed = 0;
    for (std::size_t q = 0; q < kQuests; ++q)
      if (s.features.outcome[q] == 1 && decode_party(s.features.party[q], kPartySizes[q]).contains(0)) ++failed;
    const double p = res.model.forward(s.features);
    if (failed >= 2) hi += p, ++n_hi;
    if (failed == 0) lo += p, ++n_lo;
  }
  ASSERT_GT(n_hi, 0);
  ASSERT_GT(n_lo, 0);
  EXPECT_GT(hi / n_hi, lo / n_lo);
}

TEST(Calibration, PerfectlyCalibratedLogitsGiveUnitTemperature) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> logits;
  std::vector<int> labels;
  for (int i = 0; i < 200000; ++i) {
    const double l = z(rng);
    logits.push_back(l);
    labels.push_back(u(rng) < FactorModel::sigmoid(l) ? 1 : 0);
  }
  EXPECT_NEAR(fit_temperature(logits, labels), 1.0, 0.05);
  for (auto& l : logits) l *= 3.0;
  EXPECT_NEAR(fit_temperature(logits, labels), 3.0, 0.3);
}

TEST(Calibration, EceExamples) {
  // Ten predictions at 0.9, nine right: the bin's accuracy equals its confidence.
  std::vector<double> p(10, 0.9);
  std::vector<int> y{1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
  EXPECT_NEAR(expected_calibration_error(p, y), 0.0, 1e-12);
  // All wrong at confidence 0.8.
  std::vector<double> q(4, 0.2);
  std::vector<int> z(4, 1);
  EXPECT_NEAR(expected_calibration_error(q, z), 0.8, 1e-12);
  EXPECT_THROW(expected_calibration_error({}, {}), std::invalid_argument);
}

TEST(Calibration, CalibrateLeavesWeightsAlone) {
  auto d = build_dataset(random_corpus(30), {.rotations = false});
  FactorModel m(2);
  auto before = m.params().tensors;
  auto report = calibrate(m, d);
  EXPECT_EQ(m.params().tensors, before);
  EXPECT_EQ(m.temperature(), report.temperature);
  EXPECT_LE(report.nll_after, report.nll_before + 1e-12);
  EXPECT_THROW(calibrate(m, {}), FactorModelError);
}

TEST(Weights, RoundTripPreservesForward) {
  FactorModel m(9);
  m.set_temperature(1.7);
  m.metadata()["note"] = "x";
  auto path = temp_path("weights.json");
  save_weights(m, path);
  auto back = load_weights(path);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    auto s = test::random_encoded_state(rng);
    EXPECT_NEAR(back.forward(s), m.forward(s), 1e-12);
  }
  EXPECT_EQ(back.metadata()["note"], "x");
  std::filesystem::remove(path);
}

TEST(Weights, GuardedMetadataAndTruncation) {
  FactorModel m(9);
  auto j = to_json(m);
  j["vote_ordering"] = "lex-only";
  EXPECT_THROW(factor_model_from_json(j), FactorModelError);
  j = to_json(m);
  j["version"] = 99;
  EXPECT_THROW(factor_model_from_json(j), FactorModelError);
  j = to_json(m);
  j["variables"][1]["cardinality"] = 22;
  EXPECT_THROW(factor_model_from_json(j), FactorModelError);

  auto text = to_json(m).dump();
  auto path = temp_path("truncated.json");
  std::ofstream(path) << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_weights(path), FactorModelError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_weights(temp_path("does_not_exist.json")), FactorModelError);
}

}  // namespace
}  // namespace grail

// Command-line front end: matchups, corpus generation, training, calibration,
// benchmarks, reports and the play server.
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "grail/codec.hpp"
#include "grail/factor_model.hpp"
#include "grail/harness.hpp"
#include "grail/server.hpp"

namespace {

using grail::AgentResources;
using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

/// {"type": "none" | "scripted" | "fixture" | "http" | "record", ...}
std::function<std::shared_ptr<grail::Provider>(std::uint64_t, grail::Seat)> provider_factory(const json& cfg) {
  const std::string type = cfg.value("type", "none");
  if (type == "none") return nullptr;
  if (type == "scripted") return [](std::uint64_t, grail::Seat) { return std::make_shared<grail::ScriptedProvider>(); };
  if (type == "fixture") {
    auto p = std::make_shared<grail::FixtureProvider>(cfg.at("dir").get<std::string>());
    return [p](std::uint64_t, grail::Seat) { return p; };
  }
  auto http_config = [](const json& c) {
    grail::HttpProviderConfig h;
    h.base_url = c.value("base_url", h.base_url);
    h.path = c.value("path", h.path);
    h.model = c.value("model", h.model);
    h.api_key_env = c.value("api_key_env", h.api_key_env);
    h.timeout_s = c.value("timeout_s", h.timeout_s);
    h.max_retries = c.value("max_retries", h.max_retries);
    return h;
  };
  auto logger = [](const std::string& line) { std::cerr << "[provider] " << line << "\n"; };
  if (type == "http") {
    auto p = std::make_shared<grail::HttpProvider>(http_config(cfg), nullptr, logger);
    return [p](std::uint64_t, grail::Seat) { return p; };
  }
  if (type == "record") {
    std::shared_ptr<grail::Provider> inner = cfg.value("inner", "http") == "scripted"
                                                 ? std::shared_ptr<grail::Provider>(std::make_shared<grail::ScriptedProvider>())
                                                 : std::make_shared<grail::HttpProvider>(http_config(cfg), nullptr, logger);
    auto p = std::make_shared<grail::RecordingProvider>(inner, cfg.at("dir").get<std::string>());
    return [p](std::uint64_t, grail::Seat) { return p; };
  }
  throw std::invalid_argument("unknown provider type: " + type);
}

AgentResources resources(const std::string& weights, const json& provider) {
  AgentResources r;
  if (!weights.empty()) r.factors = std::make_shared<grail::FactorModel>(grail::load_weights(weights));
  r.provider = provider_factory(provider);
  return r;
}

std::vector<grail::GameRecord> read_logs(const std::string& path) {
  grail::LogReadStats stats;
  auto games = grail::read_records(path, &stats);
  if (stats.skipped) std::cerr << "skipped " << stats.skipped << " malformed lines in " << path << "\n";
  return games;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRAIL: belief-propagation agents for six-player Avalon"};
  app.require_subcommand(1);

  // play
  std::string play_config, play_out = "games.jsonl", play_report;
  auto* play = app.add_subcommand("play", "Run a matchup described by a JSON config file");
  play->add_option("config", play_config, "Config file")->required()->check(CLI::ExistingFile);
  play->add_option("--out", play_out, "Game log (JSON Lines)");
  play->add_option("--report", play_report, "Metrics report (JSON); stdout when omitted");

  // gen-data
  int gen_games = 5000;
  grail::CorpusConfig gen_cfg;
  std::string gen_out = "corpus.jsonl";
  auto* gen = app.add_subcommand("gen-data", "Generate a scripted self-play corpus");
  gen->add_option("--games", gen_games, "Number of games")->check(CLI::PositiveNumber);
  gen->add_option("--fail-probability", gen_cfg.evil.fail_probability, "Evil quest fail probability")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--reject-all-good", gen_cfg.evil.reject_all_good, "Evil rejection rate for all-Good parties")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--vote-noise", gen_cfg.good.vote_noise, "Good ballot flip rate")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", gen_cfg.seed, "Master seed");
  gen->add_option("--out", gen_out, "Output file");

  // train
  std::string train_data, train_out = "weights.json";
  grail::TrainConfig train_cfg;
  int train_limit = 0;
  bool train_no_rotations = false;
  std::uint64_t split_seed = 0;
  auto* tr = app.add_subcommand("train", "Train the conditional factor network");
  tr->add_option("data", train_data, "Corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", train_out, "Weights file");
  tr->add_option("--games", train_limit, "Use only the first N games (0 = all)");
  tr->add_option("--lr", train_cfg.learning_rate, "Learning rate");
  tr->add_option("--weight-decay", train_cfg.weight_decay, "L2 weight decay");
  tr->add_option("--batch", train_cfg.batch_size, "Batch size");
  tr->add_option("--patience", train_cfg.patience, "Early-stopping patience (epochs)");
  tr->add_option("--max-epochs", train_cfg.max_epochs, "Epoch cap");
  tr->add_option("--time-budget", train_cfg.time_budget_s, "Wall-clock budget in seconds (0 = none)");
  tr->add_option("--seed", train_cfg.seed, "Initialization seed");
  tr->add_option("--split-seed", split_seed, "Train/validation/test split seed");
  tr->add_flag("--no-rotations", train_no_rotations, "Skip circular augmentation");

  // calibrate
  std::string cal_weights, cal_data, cal_out;
  auto* cal = app.add_subcommand("calibrate", "Fit the logit temperature on held-out games");
  cal->add_option("weights", cal_weights, "Weights file")->required()->check(CLI::ExistingFile);
  cal->add_option("data", cal_data, "Corpus (JSON Lines)")->required()->check(CLI::ExistingFile);
  cal->add_option("--out", cal_out, "Calibrated weights (defaults to overwriting the input)");
  cal->add_option("--split-seed", split_seed, "Split seed used at training time");

  // bench-bp
  std::string bench_roles = "6,8,12,20";
  int bench_trials = 20, bench_repeats = 200;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench-bp", "Time belief propagation for growing role counts");
  bench->add_option("--roles", bench_roles, "Comma-separated role counts");
  bench->add_option("--trials", bench_trials, "Random states per count");
  bench->add_option("--repeats", bench_repeats, "Solves per state");
  bench->add_option("--seed", bench_seed, "Seed");

  // metrics
  std::string metrics_logs, metrics_out;
  auto* met = app.add_subcommand("metrics", "Recompute a report from game logs");
  met->add_option("logs", metrics_logs, "Game log")->required()->check(CLI::ExistingFile);
  met->add_option("--out", metrics_out, "Report file (stdout when omitted)");

  // export-beliefs
  std::string eb_logs, eb_out;
  auto* eb = app.add_subcommand("export-beliefs", "Write per-round belief traces as CSV");
  eb->add_option("logs", eb_logs, "Game log")->required()->check(CLI::ExistingFile);
  eb->add_option("--out", eb_out, "CSV file (stdout when omitted)");

  // serve
  grail::ServerConfig serve_cfg;
  std::string serve_weights, serve_provider;
  auto* serve = app.add_subcommand("serve", "Run the play server");
  serve->add_option("--host", serve_cfg.host, "Listen address");
  serve->add_option("--port", serve_cfg.port, "Listen port");
  serve->add_option("--static", serve_cfg.static_dir, "Client asset directory");
  serve->add_option("--weights", serve_weights, "Factor network weights")->check(CLI::ExistingFile);
  serve->add_option("--provider", serve_provider, "Provider config (JSON file)")->check(CLI::ExistingFile);

  // enum-csv
  std::string enum_out;
  auto* en = app.add_subcommand("enum-csv", "Write the party and vote code tables");
  en->add_option("--out", enum_out, "CSV file (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*play) {
      const json cfg = read_json(play_config);
      auto m = grail::Matchup::from_json(cfg.at("matchup"));
      auto res = resources(cfg.value("weights", ""), cfg.value("provider", json::object()));
      auto result = grail::run_matchup(m, res);
      grail::write_records(play_out, result.games);
      auto report = grail::metrics_report(result.games, result.invalid, &result.timing);
      for (const auto& e : result.errors) std::cerr << "invalid " << e << "\n";
      write_json(play_report, report);
    } else if (*gen) {
      std::ofstream out(gen_out);
      if (!out) throw std::runtime_error("cannot write " + gen_out);
      grail::generate_synthetic_corpus(gen_games, gen_cfg, out);
      std::cerr << "wrote " << gen_games << " games to " << gen_out << "\n";
    } else if (*tr) {
      auto games = read_logs(train_data);
      if (train_limit > 0 && static_cast<std::size_t>(train_limit) < games.size()) games.resize(static_cast<std::size_t>(train_limit));
      const auto split = grail::split_games(games.size(), split_seed);
      const auto all = grail::build_dataset(games, grail::DatasetOptions{!train_no_rotations});
      const auto tr_set = grail::select_games(all, split.train);
      const auto va_set = grail::select_games(all, split.validation);
      const auto te_set = grail::select_games(all, split.test);
      auto result = grail::train(tr_set, va_set, train_cfg, &std::cerr);
      if (!te_set.empty()) {
        const auto test = grail::evaluate(result.model, te_set);
        result.model.metadata()["training"]["test_f1"] = test.f1();
        std::cerr << "test_f1 " << test.f1() << "\n";
      }
      result.model.metadata()["training"]["games"] = games.size();
      result.model.metadata()["training"]["split_seed"] = split_seed;
      grail::save_weights(result.model, train_out);
      std::cerr << "best epoch " << result.best_epoch << " (" << result.stop_reason << "), val_f1 " << result.val_f1 << "\n";
    } else if (*cal) {
      auto model = grail::load_weights(cal_weights);
      auto games = read_logs(cal_data);
      if (model.metadata().contains("training") && model.metadata()["training"].contains("games")) {
        const auto n = model.metadata()["training"]["games"].get<std::size_t>();
        if (n < games.size()) games.resize(n);
      }
      const auto split = grail::split_games(games.size(), split_seed);
      const auto heldout = grail::select_games(grail::build_dataset(games), split.validation);
      auto r = grail::calibrate(model, heldout);
      grail::save_weights(model, cal_out.empty() ? cal_weights : cal_out);
      std::cout << json{{"temperature", r.temperature}, {"ece_before", r.ece_before}, {"ece_after", r.ece_after},
                        {"nll_before", r.nll_before}, {"nll_after", r.nll_after}}.dump(2)
                << "\n";
    } else if (*bench) {
      auto rows = grail::scalability_bench(parse_int_list(bench_roles), bench_trials, bench_seed, bench_repeats);
      std::vector<double> x, y;
      std::cout << "roles,evil,mean_seconds,mean_iterations\n";
      for (const auto& r : rows) {
        std::cout << r.roles << ',' << r.evil << ',' << std::setprecision(6) << r.mean_seconds << ',' << r.mean_iterations << "\n";
        x.push_back(r.roles);
        y.push_back(r.mean_seconds);
      }
      if (rows.size() >= 2)
        std::cerr << "ratio " << rows.back().mean_seconds / rows.front().mean_seconds << ", linear r2 " << grail::linear_r2(x, y) << "\n";
    } else if (*met) {
      auto games = read_logs(metrics_logs);
      write_json(metrics_out, grail::metrics_report(games));
    } else if (*eb) {
      auto games = read_logs(eb_logs);
      if (eb_out.empty()) grail::export_belief_traces(games, std::cout);
      else {
        std::ofstream out(eb_out);
        grail::export_belief_traces(games, out);
      }
    } else if (*serve) {
      auto res = resources(serve_weights, serve_provider.empty() ? json::object() : read_json(serve_provider));
      // Block the stop signals before any thread starts so only sigwait sees them.
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      grail::PlayServer server(serve_cfg, res);
      const int port = server.start();
      std::cerr << "listening on " << serve_cfg.host << ":" << port << "\n";
      int sig = 0;
      sigwait(&set, &sig);
      server.stop();
    } else if (*en) {
      if (enum_out.empty()) grail::write_enumeration_csv(std::cout);
      else {
        std::ofstream out(enum_out);
        grail::write_enumeration_csv(out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

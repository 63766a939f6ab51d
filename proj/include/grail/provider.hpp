// Language-model providers: a remote chat-completions client, prompt-hash
// fixtures for deterministic replays, a recorder, and a scripted stand-in.
#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace grail {

struct ProviderUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency_s = 0.0;
};

struct ProviderResponse {
  std::string text;
  ProviderUsage usage;
};

struct CallParams {
  std::string purpose;  // "prior", "message", "vote", ...
  double temperature = 0.0;
  int max_tokens = 512;
};

class ProviderError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Http, Exhausted, MissingFixture, BadResponse };
  ProviderError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderResponse call(const std::string& prompt, const CallParams& params) = 0;
  virtual std::string name() const = 0;
};

/// Rough token count used where the endpoint does not report one.
inline std::int64_t estimate_tokens(const std::string& text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

/// Thread-safe running totals.
class UsageCounter {
 public:
  void add(const ProviderUsage& u) {
    input_ += u.input_tokens;
    output_ += u.output_tokens;
    ++calls_;
  }
  std::int64_t input_tokens() const { return input_; }
  std::int64_t output_tokens() const { return output_; }
  std::int64_t calls() const { return calls_; }

 private:
  std::atomic<std::int64_t> input_{0}, output_{0}, calls_{0};
};

/// Deterministic provider. With no script it answers from the prompt alone: prior
/// prompts get an all-"same" judgment, everything else a short fixed message.
class ScriptedProvider final : public Provider {
 public:
  using Responder = std::function<std::string(const std::string& prompt, const CallParams&)>;

  ScriptedProvider() = default;
  explicit ScriptedProvider(Responder r) : responder_(std::move(r)) {}
  explicit ScriptedProvider(std::vector<std::string> queue) : queue_(queue.begin(), queue.end()) {}

  ProviderResponse call(const std::string& prompt, const CallParams& params) override {
    std::string text;
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (!queue_.empty()) {
        text = queue_.front();
        queue_.pop_front();
      } else if (responder_) {
        text = responder_(prompt, params);
      } else {
        text = echo(prompt, params);
      }
    }
    return {text, {estimate_tokens(prompt), estimate_tokens(text), 0.0}};
  }
  std::string name() const override { return "scripted"; }

  static std::string echo(const std::string& prompt, const CallParams& params) {
    if (params.purpose == "prior") return "{}";
    return R"({"message": "ok ")" + sha256_hex(prompt).substr(0, 8) + "\"}";
  }

 private:
  std::mutex mu_;
  Responder responder_;
  std::deque<std::string> queue_;
};

/// Replays responses stored as <dir>/<sha256(prompt)>.txt.
class FixtureProvider final : public Provider {
 public:
  explicit FixtureProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

  ProviderResponse call(const std::string& prompt, const CallParams&) override {
    const auto path = dir_ / (sha256_hex(prompt) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProviderError(ProviderError::Kind::MissingFixture, "no fixture for prompt: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return {text, {estimate_tokens(prompt), estimate_tokens(text), 0.0}};
  }
  std::string name() const override { return "fixture"; }

 private:
  std::filesystem::path dir_;
};

/// Passes calls through and writes each response as a fixture.
class RecordingProvider final : public Provider {
 public:
  RecordingProvider(std::shared_ptr<Provider> inner, std::filesystem::path dir) : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  ProviderResponse call(const std::string& prompt, const CallParams& params) override {
    auto r = inner_->call(prompt, params);
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream(dir_ / (sha256_hex(prompt) + ".txt"), std::ios::binary) << r.text;
    return r;
  }
  std::string name() const override { return "recording(" + inner_->name() + ")"; }

 private:
  std::shared_ptr<Provider> inner_;
  std::filesystem::path dir_;
  std::mutex mu_;
};

struct HttpProviderConfig {
  std::string base_url = "http://127.0.0.1:8000";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model = "llama-3.1-70b-instruct";
  std::string api_key_env = "GRAIL_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 4;
  double backoff_initial_s = 1.0;
  double backoff_factor = 2.0;
};

/// OpenAI-style chat-completions client. Retries 429, 5xx and transport errors
/// with exponential backoff; a read timeout is reported as its own kind.
class HttpProvider final : public Provider {
 public:
  using Sleeper = std::function<void(double seconds)>;
  using Logger = std::function<void(const std::string& line)>;

  explicit HttpProvider(HttpProviderConfig cfg, Sleeper sleeper = nullptr, Logger logger = nullptr)
      : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)), logger_(std::move(logger)) {
    if (!sleeper_) sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  ProviderResponse call(const std::string& prompt, const CallParams& params) override {
    nlohmann::json body = {{"model", cfg_.model},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                           {"temperature", params.temperature},
                           {"max_tokens", params.max_tokens}};
    httplib::Client cli(cfg_.base_url);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    double delay = cfg_.backoff_initial_s;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        sleeper_(delay);
        delay *= cfg_.backoff_factor;
      }
      const auto start = std::chrono::steady_clock::now();
      auto res = cli.Post(cfg_.path, headers, body.dump(), "application/json");
      const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (!res) {
        if (res.error() == httplib::Error::Read || res.error() == httplib::Error::Write) {
          log("timeout after " + std::to_string(latency) + "s");
          throw ProviderError(ProviderError::Kind::Timeout, "provider request timed out");
        }
        last_error = "transport error: " + httplib::to_string(res.error());
        log(last_error);
        continue;
      }
      log("POST " + cfg_.base_url + cfg_.path + " -> " + std::to_string(res->status) + " auth=" + redacted());
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw ProviderError(ProviderError::Kind::Http, "HTTP " + std::to_string(res->status) + ": " + res->body);
      try {
        auto j = nlohmann::json::parse(res->body);
        ProviderResponse out;
        out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        out.usage.latency_s = latency;
        if (j.contains("usage")) {
          out.usage.input_tokens = j["usage"].value("prompt_tokens", estimate_tokens(prompt));
          out.usage.output_tokens = j["usage"].value("completion_tokens", estimate_tokens(out.text));
        } else {
          out.usage.input_tokens = estimate_tokens(prompt);
          out.usage.output_tokens = estimate_tokens(out.text);
        }
        return out;
      } catch (const nlohmann::json::exception& e) {
        throw ProviderError(ProviderError::Kind::BadResponse, std::string("malformed completion: ") + e.what());
      }
    }
    throw ProviderError(ProviderError::Kind::Exhausted,
                        "gave up after " + std::to_string(cfg_.max_retries + 1) + " attempts (" + last_error + ")");
  }

  std::string name() const override { return "http(" + cfg_.model + ")"; }
  std::string redacted() const { return api_key_.empty() ? "none" : "<redacted>"; }

 private:
  void log(const std::string& line) const {
    if (logger_) logger_(line);
  }

  HttpProviderConfig cfg_;
  Sleeper sleeper_;
  Logger logger_;
  std::string api_key_;
};

}  // namespace grail

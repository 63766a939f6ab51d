// Learned conditional factor p(r_ego = Evil | ego-centric encoded state).
//
// Each of the 15 categorical inputs has its own embedding table (width
// ceil(log2 C)); code 0 means "unseen" and maps to a fixed zero row. The
// concatenated embeddings feed 57 -> 16 -> 16 -> 1 with ReLU, and the logit is
// divided by a calibration temperature before the sigmoid.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grail/codec.hpp"
#include "grail/inference.hpp"
#include "grail/record.hpp"

namespace grail {

inline constexpr int kWeightsFormatVersion = 1;
inline constexpr int kHiddenWidth = 16;

class FactorModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int embedding_width(int cardinality) {
  return std::max(1, static_cast<int>(std::ceil(std::log2(static_cast<double>(cardinality)))));
}

struct TrainingSample {
  EncodedState features;  // ego-transformed, future-masked
  int label = 0;          // 1 = Evil
  std::size_t game = 0;   // index of the source game, for game-level splits
};

struct DatasetOptions {
  // The six circular rotations. Under the ego transform each rotation
  // reproduces the same six samples, so turning this off only drops exact
  // duplicates.
  bool rotations = true;
};

/// Per game of T played quests: T masked prefixes x rotations x 6 egos.
inline std::vector<TrainingSample> build_dataset(const std::vector<GameRecord>& games, DatasetOptions opt = {}) {
  std::vector<TrainingSample> out;
  for (std::size_t g = 0; g < games.size(); ++g) {
    const auto& rec = games[g];
    const int rounds = static_cast<int>(rec.quests.size());
    const int n_rot = opt.rotations ? kPlayers : 1;
    for (int t = 1; t <= rounds; ++t) {
      const EncodedState prefix = encode_quests(rec.quests, t);
      for (int k = 0; k < n_rot; ++k) {
        const EncodedState rotated = relabel(prefix, [k](Seat s) { return rotate_seat(s, k); });
        for (Seat ego = 0; ego < kPlayers; ++ego) {
          const Seat original = rotate_seat(ego, -k);
          TrainingSample s;
          s.features = ego_transform(rotated, ego + 1);
          s.label = rec.roles[static_cast<std::size_t>(original)] == Alignment::Evil ? 1 : 0;
          s.game = g;
          out.push_back(s);
        }
      }
    }
  }
  return out;
}

struct GameSplit {
  std::vector<std::size_t> train, validation, test;
};

/// Shuffles game indices and cuts them 80/10/10 (by default).
inline GameSplit split_games(std::size_t n_games, std::uint64_t seed, double train_frac = 0.8, double val_frac = 0.1) {
  std::vector<std::size_t> idx(n_games);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n_games)));
  const auto n_val = std::min(n_games - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n_games))));
  GameSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

inline std::vector<TrainingSample> select_games(const std::vector<TrainingSample>& all, const std::vector<std::size_t>& games) {
  std::vector<char> keep;
  for (std::size_t g : games) {
    if (g >= keep.size()) keep.resize(g + 1, 0);
    keep[g] = 1;
  }
  std::vector<TrainingSample> out;
  for (const auto& s : all)
    if (s.game < keep.size() && keep[s.game]) out.push_back(s);
  return out;
}

/// All trainable tensors, in a fixed order: 15 embeddings, W1, b1, W2, b2, W3, b3.
struct FactorParams {
  std::vector<Eigen::MatrixXd> tensors;

  static constexpr std::size_t kEmbeddings = kStateVariables;
  Eigen::MatrixXd& embedding(std::size_t i) { return tensors[i]; }
  const Eigen::MatrixXd& embedding(std::size_t i) const { return tensors[i]; }
  Eigen::MatrixXd& layer(std::size_t i) { return tensors[kEmbeddings + i]; }
  const Eigen::MatrixXd& layer(std::size_t i) const { return tensors[kEmbeddings + i]; }

  FactorParams zeros_like() const {
    FactorParams z;
    for (const auto& t : tensors) z.tensors.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    return z;
  }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }
};

struct BatchLoss {
  double loss = 0.0;
  FactorParams grad;
};

class FactorModel final : public ConditionalFactorProvider {
 public:
  explicit FactorModel(std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    int input = 0;
    for (const auto& v : variable_specs()) {
      const int w = embedding_width(v.cardinality);
      Eigen::MatrixXd e(v.cardinality, w);
      for (Eigen::Index r = 0; r < e.rows(); ++r)
        for (Eigen::Index c = 0; c < e.cols(); ++c) e(r, c) = r == 0 ? 0.0 : normal(rng);
      params_.tensors.push_back(e);
      offsets_.push_back(input);
      input += w;
    }
    input_width_ = input;
    auto linear = [&](int out, int in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      Eigen::MatrixXd w(out, in);
      Eigen::MatrixXd b(out, 1);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
      for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
      params_.tensors.push_back(w);
      params_.tensors.push_back(b);
    };
    linear(kHiddenWidth, input_width_);
    linear(kHiddenWidth, kHiddenWidth);
    linear(1, kHiddenWidth);
  }

  int input_width() const { return input_width_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw FactorModelError("temperature must be positive and finite");
    temperature_ = t;
  }
  FactorParams& params() { return params_; }
  const FactorParams& params() const { return params_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  /// Raw (uncalibrated) logits for a batch.
  Eigen::RowVectorXd logits(const std::vector<EncodedState>& batch) const {
    Cache c;
    forward_batch(batch, c);
    return c.z;
  }

  double logit(const EncodedState& s) const { return logits({s})(0); }

  /// sigmoid(logit / T), for an already ego-transformed state.
  double forward(const EncodedState& s) const { return sigmoid(logit(s) / temperature_); }

  /// Factor value for 0-based `seat`: the state is re-expressed from that seat's
  /// point of view, then clipped away from 0 and 1.
  double evil_probability(const EncodedState& state, Seat seat) const override {
    const double p = forward(ego_transform(state, seat + 1));
    return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  }

  /// Mean weighted binary cross-entropy (positive class weighted by
  /// `pos_weight`) and its gradient, without weight decay.
  BatchLoss loss_and_gradient(const std::vector<EncodedState>& x, const std::vector<int>& y, double pos_weight) const {
    Cache c;
    forward_batch(x, c);
    const auto n = static_cast<Eigen::Index>(x.size());
    BatchLoss out;
    out.grad = params_.zeros_like();
    Eigen::RowVectorXd dz(n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = c.z(i);
      const double label = y[static_cast<std::size_t>(i)];
      // log sigmoid(z) and log(1 - sigmoid(z)) in a stable form.
      const double log_p = -softplus(-z), log_q = -softplus(z);
      total += -(pos_weight * label * log_p + (1.0 - label) * log_q);
      const double p = sigmoid(z);
      dz(i) = (pos_weight * label * (p - 1.0) + (1.0 - label) * p) / static_cast<double>(n);
    }
    out.loss = total / static_cast<double>(n);

    const auto& W2 = params_.layer(2);
    const auto& W3 = params_.layer(4);
    out.grad.layer(4) = dz * c.h2.transpose();
    out.grad.layer(5)(0, 0) = dz.sum();
    Eigen::MatrixXd d2 = (W3.transpose() * dz).cwiseProduct(relu_mask(c.h2));
    out.grad.layer(2) = d2 * c.h1.transpose();
    out.grad.layer(3) = d2.rowwise().sum();
    Eigen::MatrixXd d1 = (W2.transpose() * d2).cwiseProduct(relu_mask(c.h1));
    out.grad.layer(0) = d1 * c.x.transpose();
    out.grad.layer(1) = d1.rowwise().sum();
    Eigen::MatrixXd dx = params_.layer(0).transpose() * d1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto f = x[static_cast<std::size_t>(i)].flat();
      for (std::size_t v = 0; v < f.size(); ++v) {
        if (f[v] == 0) continue;  // the unseen row stays zero
        auto& g = out.grad.embedding(v);
        g.row(f[v]) += dx.block(offsets_[v], i, g.cols(), 1).transpose();
      }
    }
    return out;
  }

  static double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
  static double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

 private:
  struct Cache {
    Eigen::MatrixXd x, h1, h2;
    Eigen::RowVectorXd z;
  };

  static Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& h) { return (h.array() > 0.0).cast<double>().matrix(); }

  void forward_batch(const std::vector<EncodedState>& batch, Cache& c) const {
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto& specs = variable_specs();
    c.x.setZero(input_width_, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto f = batch[static_cast<std::size_t>(i)].flat();
      for (std::size_t v = 0; v < f.size(); ++v) {
        if (f[v] < 0 || f[v] >= specs[v].cardinality)
          throw CodecError("code " + std::to_string(f[v]) + " out of range for " + specs[v].name);
        if (f[v] == 0) continue;
        const auto& e = params_.embedding(v);
        c.x.block(offsets_[v], i, e.cols(), 1) = e.row(f[v]).transpose();
      }
    }
    c.h1 = ((params_.layer(0) * c.x).colwise() + params_.layer(1).col(0)).cwiseMax(0.0);
    c.h2 = ((params_.layer(2) * c.h1).colwise() + params_.layer(3).col(0)).cwiseMax(0.0);
    c.z = (params_.layer(4) * c.h2).array() + params_.layer(5)(0, 0);
  }

  FactorParams params_;
  std::vector<int> offsets_;
  int input_width_ = 0;
  double temperature_ = 1.0;
  nlohmann::json metadata_ = nlohmann::json::object();
};

// ---------------------------------------------------------------- metrics

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  }
  double accuracy() const {
    const std::size_t n = tp + fp + fn + tn;
    return n ? static_cast<double>(tp + tn) / static_cast<double>(n) : 0.0;
  }
};

struct EvalResult {
  double loss = 0.0;  // weighted BCE, calibrated logits
  Confusion confusion;
  double f1() const { return confusion.f1(); }
};

inline Eigen::RowVectorXd batched_logits(const FactorModel& m, const std::vector<TrainingSample>& samples,
                                         std::size_t chunk = 4096) {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(samples.size()));
  std::vector<EncodedState> buf;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    buf.clear();
    for (std::size_t i = start; i < end; ++i) buf.push_back(samples[i].features);
    out.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = m.logits(buf);
  }
  return out;
}

inline EvalResult evaluate(const FactorModel& m, const std::vector<TrainingSample>& samples, double pos_weight = 2.0) {
  EvalResult r;
  if (samples.empty()) return r;
  const Eigen::RowVectorXd z = batched_logits(m, samples);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double zt = z(static_cast<Eigen::Index>(i)) / m.temperature();
    const double y = samples[i].label;
    total += pos_weight * y * FactorModel::softplus(-zt) + (1.0 - y) * FactorModel::softplus(zt);
    r.confusion.add(zt > 0.0, samples[i].label == 1);
  }
  r.loss = total / static_cast<double>(samples.size());
  return r;
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 256;
  int patience = 10;
  int max_epochs = 200;
  double pos_weight = 2.0;  // Good:Evil
  std::uint64_t seed = 0;
  double time_budget_s = 0.0;  // 0 = unlimited

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay}, {"batch_size", batch_size},
            {"patience", patience},           {"max_epochs", max_epochs},     {"pos_weight", pos_weight},
            {"seed", seed}};
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
};

struct TrainResult {
  FactorModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  std::string stop_reason;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
};

/// Adam with L2 decay folded into the gradient.
class Adam {
 public:
  Adam(const FactorParams& like, double lr, double weight_decay)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), wd_(weight_decay) {}

  void step(FactorParams& p, FactorParams& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      auto& grad = g.tensors[i];
      if (wd_ != 0.0) grad += wd_ * p.tensors[i];
      m_.tensors[i] = kBeta1 * m_.tensors[i] + (1.0 - kBeta1) * grad;
      v_.tensors[i] = kBeta2 * v_.tensors[i] + (1.0 - kBeta2) * grad.cwiseAbs2();
      p.tensors[i].array() -=
          lr_ * (m_.tensors[i].array() / c1) / ((v_.tensors[i].array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  FactorParams m_, v_;
  double lr_, wd_;
  int t_ = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mini-batch training with early stopping on validation loss; the returned
/// model holds the best-validation weights.
inline TrainResult train(const std::vector<TrainingSample>& train_set, const std::vector<TrainingSample>& val_set,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  if (train_set.empty()) throw TrainingError("empty training set");
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1) throw std::invalid_argument("bad training config");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{FactorModel(cfg.seed), {}, 0, "epoch cap", 0.0, 0.0};
  FactorModel& model = result.model;
  FactorParams best = model.params();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Adam opt(model.params(), cfg.learning_rate, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& monitor = val_set.empty() ? train_set : val_set;

  std::vector<EncodedState> xb;
  std::vector<int> yb;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      xb.clear();
      yb.clear();
      for (std::size_t i = b; i < e; ++i) {
        xb.push_back(train_set[order[i]].features);
        yb.push_back(train_set[order[i]].label);
      }
      auto lg = model.loss_and_gradient(xb, yb, cfg.pos_weight);
      if (!std::isfinite(lg.loss))
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                            " (learning rate " + std::to_string(cfg.learning_rate) + ")");
      opt.step(model.params(), lg.grad);
      sum += lg.loss;
      ++batches;
    }
    const auto val = evaluate(model, monitor, cfg.pos_weight);
    result.history.push_back({epoch, sum / static_cast<double>(batches), val.loss, val.f1()});
    if (log)
      *log << "epoch " << epoch << " train_loss " << sum / static_cast<double>(batches) << " val_loss " << val.loss
           << " val_f1 " << val.f1() << "\n";
    if (val.loss < best_val) {
      best_val = val.loss;
      best = model.params();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stop_reason = "early stop";
      break;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.time_budget_s > 0.0 && elapsed > cfg.time_budget_s) {
      result.stop_reason = "time budget";
      break;
    }
  }
  model.params() = best;
  result.train_f1 = evaluate(model, train_set, cfg.pos_weight).f1();
  result.val_f1 = val_set.empty() ? result.train_f1 : evaluate(model, val_set, cfg.pos_weight).f1();
  model.metadata()["training"] = cfg.to_json();
  model.metadata()["training"]["best_epoch"] = result.best_epoch;
  model.metadata()["training"]["epochs_run"] = result.history.size();
  model.metadata()["training"]["stop_reason"] = result.stop_reason;
  model.metadata()["training"]["train_samples"] = train_set.size();
  model.metadata()["training"]["train_f1"] = result.train_f1;
  model.metadata()["training"]["val_f1"] = result.val_f1;
  return result;
}

/// Largest relative error between analytic and central-difference gradients
/// (weight decay off), checked on every parameter that the batch touches.
inline double gradient_check(const FactorModel& model, const std::vector<EncodedState>& x, const std::vector<int>& y,
                             double pos_weight = 2.0, double h = 1e-5) {
  const auto analytic = model.loss_and_gradient(x, y, pos_weight).grad;
  FactorModel probe = model;
  double worst = 0.0;
  for (std::size_t t = 0; t < probe.params().tensors.size(); ++t) {
    auto& tensor = probe.params().tensors[t];
    for (Eigen::Index k = 0; k < tensor.size(); ++k) {
      if (t < FactorParams::kEmbeddings && k % tensor.rows() == 0) continue;  // fixed zero rows
      const double a = analytic.tensors[t].data()[k];
      const double saved = tensor.data()[k];
      tensor.data()[k] = saved + h;
      const double up = probe.loss_and_gradient(x, y, pos_weight).loss;
      tensor.data()[k] = saved - h;
      const double down = probe.loss_and_gradient(x, y, pos_weight).loss;
      tensor.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

// ---------------------------------------------------------------- calibration

/// Mean NLL of labels under sigmoid(z / T).
inline double temperature_nll(const std::vector<double>& logits, const std::vector<int>& labels, double t) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i] / t;
    total += labels[i] ? FactorModel::softplus(-z) : FactorModel::softplus(z);
  }
  return total / static_cast<double>(logits.size());
}

/// Minimizes the NLL over log T by golden-section search on [1/100, 100].
inline double fit_temperature(const std::vector<double>& logits, const std::vector<int>& labels) {
  if (logits.empty() || logits.size() != labels.size()) throw FactorModelError("calibration set is empty or mismatched");
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(1e-2), b = std::log(1e2);
  auto f = [&](double u) { return temperature_nll(logits, labels, std::exp(u)); };
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-7) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return std::exp(0.5 * (a + b));
}

/// Expected calibration error over `bins` equal-width confidence bins, where
/// confidence is max(p, 1 - p) and a hit means the thresholded prediction is right.
inline double expected_calibration_error(const std::vector<double>& probs, const std::vector<int>& labels, int bins = 15) {
  if (probs.empty() || probs.size() != labels.size()) throw std::invalid_argument("ece: empty or mismatched inputs");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins)), hit_sum(static_cast<std::size_t>(bins));
  std::vector<std::size_t> count(static_cast<std::size_t>(bins));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double conf = std::max(p, 1.0 - p);
    const bool predicted = p > 0.5;
    auto bin = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(conf * bins)));
    conf_sum[bin] += conf;
    hit_sum[bin] += predicted == (labels[i] == 1) ? 1.0 : 0.0;
    ++count[bin];
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b)
    if (count[b]) ece += std::abs(hit_sum[b] - conf_sum[b]) / static_cast<double>(probs.size());
  return ece;
}

struct CalibrationReport {
  double temperature = 1.0;
  double ece_before = 0.0;
  double ece_after = 0.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
};

/// Fits the temperature on held-out samples; every other weight is left alone.
inline CalibrationReport calibrate(FactorModel& model, const std::vector<TrainingSample>& heldout) {
  if (heldout.empty()) throw FactorModelError("calibration needs a non-empty held-out set");
  const Eigen::RowVectorXd z = batched_logits(model, heldout);
  std::vector<double> logits(z.data(), z.data() + z.size());
  std::vector<int> labels;
  for (const auto& s : heldout) labels.push_back(s.label);
  auto probs_at = [&](double t) {
    std::vector<double> p;
    for (double l : logits) p.push_back(FactorModel::sigmoid(l / t));
    return p;
  };
  CalibrationReport r;
  r.ece_before = expected_calibration_error(probs_at(model.temperature()), labels);
  r.nll_before = temperature_nll(logits, labels, model.temperature());
  r.temperature = fit_temperature(logits, labels);
  model.set_temperature(r.temperature);
  r.ece_after = expected_calibration_error(probs_at(r.temperature), labels);
  r.nll_after = temperature_nll(logits, labels, r.temperature);
  model.metadata()["calibration"] = {{"temperature", r.temperature}, {"ece_before", r.ece_before},
                                     {"ece_after", r.ece_after},     {"heldout_samples", heldout.size()}};
  return r;
}

// ---------------------------------------------------------------- persistence

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw FactorModelError(what + ": expected " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw FactorModelError(what + ": expected " + std::to_string(cols) + " columns");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const FactorModel& m) {
  nlohmann::json vars = nlohmann::json::array(), emb = nlohmann::json::array(), layers = nlohmann::json::array();
  const auto& specs = variable_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    vars.push_back({{"name", specs[i].name}, {"cardinality", specs[i].cardinality},
                    {"width", embedding_width(specs[i].cardinality)}});
    emb.push_back(matrix_json(m.params().embedding(i)));
  }
  for (std::size_t l = 0; l < 6; ++l) layers.push_back(matrix_json(m.params().layer(l)));
  // Doubles are written in shortest round-trip form, so forward outputs survive exactly.
  return {{"format", "grail-factor-model"},
          {"version", kWeightsFormatVersion},
          {"vote_ordering", kVoteOrderingTag},
          {"hidden", kHiddenWidth},
          {"variables", vars},
          {"embeddings", emb},
          {"layers", layers},
          {"temperature", m.temperature()},
          {"metadata", m.metadata()}};
}

inline FactorModel factor_model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "grail-factor-model") throw FactorModelError("not a factor-model weights file");
    if (j.at("version").get<int>() != kWeightsFormatVersion)
      throw FactorModelError("unsupported weights version " + j.at("version").dump());
    if (j.at("vote_ordering").get<std::string>() != kVoteOrderingTag)
      throw FactorModelError("vote ordering mismatch: file has " + j.at("vote_ordering").get<std::string>() +
                             ", codec uses " + kVoteOrderingTag);
    if (j.at("hidden").get<int>() != kHiddenWidth) throw FactorModelError("hidden width mismatch");
    const auto& specs = variable_specs();
    const auto& vars = j.at("variables");
    if (vars.size() != specs.size()) throw FactorModelError("variable count mismatch");
    FactorModel m;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (vars[i].at("name").get<std::string>() != specs[i].name ||
          vars[i].at("cardinality").get<int>() != specs[i].cardinality)
        throw FactorModelError("cardinality mismatch for " + specs[i].name);
      auto& e = m.params().embedding(i);
      e = matrix_from_json(j.at("embeddings").at(i), e.rows(), e.cols(), "embedding " + specs[i].name);
      if (!e.row(0).isZero(0.0)) throw FactorModelError("unseen row of " + specs[i].name + " must be zero");
    }
    for (std::size_t l = 0; l < 6; ++l) {
      auto& t = m.params().layer(l);
      t = matrix_from_json(j.at("layers").at(l), t.rows(), t.cols(), "layer " + std::to_string(l));
    }
    m.set_temperature(j.at("temperature").get<double>());
    m.metadata() = j.value("metadata", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FactorModelError(std::string("malformed weights file: ") + e.what());
  }
}

inline void save_weights(const FactorModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FactorModelError("cannot write " + path);
  out << to_json(m).dump(1) << "\n";
  if (!out) throw FactorModelError("write failed: " + path);
}

inline FactorModel load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FactorModelError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FactorModelError("malformed weights file " + path + ": " + e.what());
  }
  return factor_model_from_json(j);
}

}  // namespace grail

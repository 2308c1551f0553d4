#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "codepoison/error.hpp"
#include "codepoison/metrics.hpp"
#include "codepoison/model.hpp"
#include "codepoison/rng.hpp"

namespace codepoison {
namespace {

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& config, const Weights& shape) : config_(config) {
    if (config.optimizer == Optimizer::kAdam) {
      m_ = shape.zeros_like();
      v_ = shape.zeros_like();
    }
  }

  void apply(Weights& w, Weights& grad) {
    const double norm = std::sqrt(grad.squared_norm());
    if (config_.clip_norm > 0.0 && norm > config_.clip_norm) grad.scale(config_.clip_norm / norm);
    auto params = w.tensors();
    auto grads = grad.tensors();
    if (config_.optimizer == Optimizer::kSgd) {
      for (std::size_t k = 0; k < params.size(); ++k) *params[k] -= config_.learning_rate * *grads[k];
      return;
    }
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++step_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      *ms[k] = kBeta1 * *ms[k] + (1.0 - kBeta1) * *grads[k];
      *vs[k] = kBeta2 * *vs[k] + (1.0 - kBeta2) * grads[k]->cwiseAbs2();
      params[k]->array() -=
          config_.learning_rate * (ms[k]->array() / c1) / ((vs[k]->array() / c2).sqrt() + kEps);
    }
  }

 private:
  const TrainConfig& config_;
  Weights m_;
  Weights v_;
  std::size_t step_ = 0;
};

// Shuffled batches of similar input length: shuffle, sort windows of 16
// batches by length, then shuffle the batch order.
template <typename LengthOf>
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                   LengthOf length_of) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t window = batch_size * 16;
  for (std::size_t start = 0; start < n; start += window) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + window));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return length_of(a) < length_of(b); });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

void round_to_float(Weights& w) {
  for (Eigen::MatrixXd* m : w.tensors()) *m = m->cast<float>().cast<double>();
}

double dev_loss(const Seq2SeqParams& params, std::span<const SeqPair> dev) {
  double total = 0.0;
  double tokens = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < dev.size(); start += kChunk) {
    const auto chunk = dev.subspan(start, std::min(kChunk, dev.size() - start));
    double count = 0.0;
    for (const SeqPair& p : chunk) count += p.target.empty() ? 0.0 : static_cast<double>(p.target.size() + 1);
    total += loss_and_gradient(params, chunk, nullptr) * count;
    tokens += count;
  }
  return tokens > 0.0 ? total / tokens : 0.0;
}

std::vector<std::string> as_words(const std::vector<std::int32_t>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) out.push_back(std::to_string(id));
  return out;
}

double dev_bleu(const Seq2SeqParams& params, std::span<const SeqPair> dev, std::size_t max_len) {
  std::vector<std::vector<std::int32_t>> inputs;
  std::vector<std::vector<std::string>> refs;
  for (const SeqPair& p : dev) {
    inputs.push_back(p.input);
    refs.push_back(as_words(p.target));
  }
  std::vector<std::vector<std::string>> hyps;
  for (const auto& out : decode_greedy_batch(params, inputs, max_len)) hyps.push_back(as_words(out));
  return smoothed_bleu4(refs, hyps);
}

double lm_dev_loss(const Seq2SeqParams& lm, std::span<const std::vector<std::int32_t>> dev) {
  double total = 0.0;
  double tokens = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < dev.size(); start += kChunk) {
    const auto chunk = dev.subspan(start, std::min(kChunk, dev.size() - start));
    double count = 0.0;
    for (const auto& s : chunk) count += static_cast<double>(s.size());
    total += lm_loss_and_gradient(lm, chunk, nullptr) * count;
    tokens += count;
  }
  return tokens > 0.0 ? total / tokens : 0.0;
}

}  // namespace

Seq2SeqParams train(ModelRole role, ModelDims dims, std::span<const SeqPair> train_set,
                    std::span<const SeqPair> dev_set, const TrainConfig& config, TrainReport* report,
                    const EpochCallback& on_epoch) {
  if (train_set.empty() || dev_set.empty()) throw Error(ErrorCode::kEmptyCorpus, "training needs train and dev data");
  if (config.patience < 1 || config.batch_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "patience and batch size must be positive");
  }
  Seq2SeqParams params = Seq2SeqParams::random(role, dims, derive_seed(config.seed, "init"));
  Seq2SeqParams best = params;
  OptimizerState opt(config, params.weights);
  Rng rng(derive_seed(config.seed, "batches"));
  double best_bleu = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t bleu_stall = 0;
  std::size_t loss_stall = 0;
  TrainReport local;
  TrainReport& rep = report != nullptr ? *report : local;
  rep = TrainReport{};

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = make_batches(train_set.size(), config.batch_size, rng,
                                      [&](std::size_t i) { return train_set[i].input.size(); });
    double loss_sum = 0.0;
    std::vector<SeqPair> batch;
    for (const auto& idx : batches) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(train_set[i]);
      Weights grad = params.weights.zeros_like();
      loss_sum += loss_and_gradient(params, batch, &grad);
      opt.apply(params.weights, grad);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches.size());
    stats.dev_loss = dev_loss(params, dev_set);
    stats.dev_bleu = dev_bleu(params, dev_set, config.max_output_len);
    rep.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats, params);

    if (stats.dev_bleu > best_bleu) {
      best_bleu = stats.dev_bleu;
      best = params;
      rep.best_epoch = epoch;
      bleu_stall = 0;
    } else {
      ++bleu_stall;
    }
    if (stats.dev_loss < best_loss) {
      best_loss = stats.dev_loss;
      loss_stall = 0;
    } else {
      ++loss_stall;
    }
    if (bleu_stall >= config.patience && loss_stall >= config.patience) break;
  }
  round_to_float(best.weights);
  return best;
}

Seq2SeqParams train_lm(ModelDims dims, std::span<const std::vector<std::int32_t>> train_set,
                       std::span<const std::vector<std::int32_t>> dev_set, const TrainConfig& config,
                       TrainReport* report, const EpochCallback& on_epoch) {
  if (train_set.empty() || dev_set.empty()) throw Error(ErrorCode::kEmptyCorpus, "training needs train and dev data");
  if (config.patience < 1 || config.batch_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "patience and batch size must be positive");
  }
  Seq2SeqParams params = Seq2SeqParams::random(ModelRole::kLanguageModel, dims, derive_seed(config.seed, "init"));
  Seq2SeqParams best = params;
  OptimizerState opt(config, params.weights);
  Rng rng(derive_seed(config.seed, "batches"));
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  TrainReport local;
  TrainReport& rep = report != nullptr ? *report : local;
  rep = TrainReport{};

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches =
        make_batches(train_set.size(), config.batch_size, rng, [&](std::size_t i) { return train_set[i].size(); });
    double loss_sum = 0.0;
    std::vector<std::vector<std::int32_t>> batch;
    for (const auto& idx : batches) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(train_set[i]);
      Weights grad = params.weights.zeros_like();
      loss_sum += lm_loss_and_gradient(params, batch, &grad);
      opt.apply(params.weights, grad);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches.size());
    stats.dev_loss = lm_dev_loss(params, dev_set);
    rep.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats, params);
    if (stats.dev_loss < best_loss) {
      best_loss = stats.dev_loss;
      best = params;
      rep.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }
  round_to_float(best.weights);
  return best;
}

}  // namespace codepoison

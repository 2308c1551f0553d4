#pragma once

// Two-layer LSTM encoder-decoder with hand-written backpropagation. The same
// parameter family serves as crafting model, victim, purified victim and
// (decoder only) causal language model.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace codepoison {

enum class ModelRole { kCrafting, kVictim, kPurified, kLanguageModel };

std::string_view model_role_name(ModelRole role);
ModelRole parse_model_role(std::string_view name);

struct ModelDims {
  std::size_t vocab = 2000;
  std::size_t d_emb = 128;
  std::size_t d_hidden = 128;

  bool operator==(const ModelDims&) const = default;
};

inline constexpr std::size_t kLayers = 2;

// Gate rows are stacked as input, forget, cell, output.
struct LstmLayer {
  Eigen::MatrixXd wx;  // 4h x d_in
  Eigen::MatrixXd wh;  // 4h x h
  Eigen::MatrixXd b;   // 4h x 1
};

// All trainable tensors. Gradients use the same type.
struct Weights {
  Eigen::MatrixXd embedding;  // vocab x d_emb
  std::array<LstmLayer, kLayers> encoder;
  std::array<LstmLayer, kLayers> decoder;
  Eigen::MatrixXd w_out;  // d_hidden x vocab
  Eigen::MatrixXd b_out;  // vocab x 1

  // Fixed order used by optimizers and checkpoints: embedding, encoder
  // layers (wx, wh, b), decoder layers (wx, wh, b), w_out, b_out.
  std::vector<Eigen::MatrixXd*> tensors();
  std::vector<const Eigen::MatrixXd*> tensors() const;

  Weights zeros_like() const;
  double squared_norm() const;
  void scale(double factor);
};

class Seq2SeqParams {
 public:
  // All-zero weights; language models get empty encoder tensors.
  static Seq2SeqParams zeros(ModelRole role, ModelDims dims);
  // Uniform in +-1/sqrt(d_hidden).
  static Seq2SeqParams random(ModelRole role, ModelDims dims, std::uint64_t seed);

  Seq2SeqParams(ModelRole role, ModelDims dims, Weights weights);

  ModelRole role() const { return role_; }
  const ModelDims& dims() const { return dims_; }
  std::size_t parameter_count() const;

  Weights weights;

 private:
  ModelRole role_;
  ModelDims dims_;
};

// Token ids without BOS/EOS; the model adds them.
struct SeqPair {
  std::vector<std::int32_t> input;
  std::vector<std::int32_t> target;
};

struct ForwardResult {
  Eigen::MatrixXd logits;  // vocab x (|target| + 1), last column predicts EOS
  double loss = 0.0;       // mean token negative log-likelihood
  bool empty_target = false;
};

ForwardResult forward(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                      std::span<const std::int32_t> target);

// Gradient of loss_scale * mean loss. Examples with an empty target are
// skipped. Returns the mean loss over all target tokens of the batch.
double loss_and_gradient(const Seq2SeqParams& params, std::span<const SeqPair> batch, Weights* grad,
                         double loss_scale = 1.0);

Weights backward(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                 std::span<const std::int32_t> target);

// Row t holds dL/d(one-hot input at t) = E * dL/d(embedding at t).
using GradientField = Eigen::MatrixXd;  // |input| x vocab

GradientField input_gradients(const Seq2SeqParams& params, std::span<const std::int32_t> sketch_ids,
                              std::span<const std::int32_t> target);

// Same quantity through the embedding vectors directly, for testing.
double loss_from_embeddings(const Seq2SeqParams& params, const Eigen::MatrixXd& embedded,
                            std::span<const std::int32_t> target);

inline constexpr std::size_t kMethodNameOutputCap = 16;
inline constexpr std::size_t kSummaryOutputCap = 128;

std::vector<std::int32_t> decode_greedy(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                                        std::size_t max_len);
std::vector<std::vector<std::int32_t>> decode_greedy_batch(const Seq2SeqParams& params,
                                                           std::span<const std::vector<std::int32_t>> inputs,
                                                           std::size_t max_len);

// Top-layer encoder states for reading steps 0..length-1, zero beyond the
// input. The encoder reads the input last token first.
Eigen::VectorXd encode(const Seq2SeqParams& params, std::span<const std::int32_t> input, std::size_t length);
// One row per input.
Eigen::MatrixXd encode_batch(const Seq2SeqParams& params, std::span<const std::vector<std::int32_t>> inputs,
                             std::size_t length);

// Causal language model over BOS + tokens (no EOS).
double lm_perplexity(const Seq2SeqParams& lm, std::span<const std::int32_t> tokens);
std::vector<double> lm_perplexities(const Seq2SeqParams& lm, std::span<const std::vector<std::int32_t>> sequences);
double lm_loss_and_gradient(const Seq2SeqParams& lm, std::span<const std::vector<std::int32_t>> batch, Weights* grad);

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 15;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  Optimizer optimizer = Optimizer::kSgd;
  std::size_t max_output_len = kMethodNameOutputCap;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_bleu = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
};

// Receives the parameters as they stand after the epoch.
using EpochCallback = std::function<void(const EpochStats&, const Seq2SeqParams&)>;

// Early stopping: halts once validation BLEU has not improved for `patience`
// epochs and validation loss has not decreased for `patience` epochs.
// Returns the best-BLEU parameters rounded to float32.
Seq2SeqParams train(ModelRole role, ModelDims dims, std::span<const SeqPair> train_set,
                    std::span<const SeqPair> dev_set, const TrainConfig& config, TrainReport* report = nullptr,
                    const EpochCallback& on_epoch = {});

// Same loop for the language model, driven by validation loss only.
Seq2SeqParams train_lm(ModelDims dims, std::span<const std::vector<std::int32_t>> train_set,
                       std::span<const std::vector<std::int32_t>> dev_set, const TrainConfig& config,
                       TrainReport* report = nullptr, const EpochCallback& on_epoch = {});

// Binary checkpoint, see README for the layout.
void save_checkpoint(const Seq2SeqParams& params, const std::filesystem::path& path);
Seq2SeqParams load_checkpoint(const std::filesystem::path& path);

}  // namespace codepoison

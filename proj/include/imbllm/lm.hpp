#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "imbllm/rng.hpp"
#include "imbllm/textcodec.hpp"

namespace imbllm::lm {

using text::TokenId;
using text::TokenSeq;

class LMError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LMConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_k = 16;
  std::size_t d_ff = 128;
  std::size_t max_len = 256;

  void validate() const;
  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  /// When positive, training stops after exactly this many optimizer steps
  /// and `epochs` is ignored; epochs continue to reshuffle as usual.
  std::size_t steps = 0;

  void validate() const;
  /// Number of epochs started for a corpus of `corpus_size` sequences.
  std::size_t effective_epochs(std::size_t corpus_size) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct SamplerConfig {
  double temperature = 0.7;
  std::optional<std::vector<TokenId>> allowed_mask;
};

struct TensorSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // in elements
};

struct LayerSlots {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Flat parameter layout: element offsets of every tensor, in manifest order.
struct ParamLayout {
  explicit ParamLayout(const LMConfig& config);

  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<LayerSlots> layers;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;
  std::size_t head = 0;
  std::size_t total = 0;
  std::vector<TensorSpec> manifest;
};

/// All weights of the decoder in one flat buffer (see ParamLayout). The same
/// type carries gradients.
template <class T>
struct BasicParams {
  LMConfig config;
  std::vector<T> values;

  BasicParams() = default;
  explicit BasicParams(const LMConfig& cfg) : config(cfg), values(ParamLayout(cfg).total, T(0)) {}

  template <class U>
  BasicParams<U> cast() const {
    BasicParams<U> out;
    out.config = config;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

using LMParams = BasicParams<float>;

/// Matrices ~ N(0, 1/d_model); the output head uses N(0, 1/d_model^2) so initial
/// logits are near-uniform. Layer-norm scales 1, offsets and biases 0.
LMParams init_params(const LMConfig& config, std::uint64_t seed);

/// Incremental causal decoder. `push` appends one token and returns the logits
/// at that position; keys, values and all activations are retained for the
/// backward pass, so the full-sequence forward and cached sampling share one path.
template <class T>
class Decoder {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// `capacity` bounds the sequence length (0 means config.max_len).
  explicit Decoder(const BasicParams<T>& params, std::size_t capacity = 0);

  void reset() { len_ = 0; tokens_.clear(); }
  std::size_t length() const { return len_; }
  std::span<const T> push(TokenId token);
  std::span<const T> logits(std::size_t pos) const;
  /// Attention weights of one head at query position `pos` (length pos + 1).
  std::span<const T> attention(std::size_t layer, std::size_t head, std::size_t pos) const;

  /// Adds d(loss)/d(params) into `grads`, given d(loss)/d(logits) for the
  /// first length() positions.
  void backward(const Mat& dlogits, BasicParams<T>& grads) const;

 private:
  struct LayerCache {
    Mat x_in, hat1, a1, q, k, v, att_out, x_mid, hat2, a2, u, act;
    std::vector<T> rstd1, rstd2;
    std::vector<Mat> probs;  // per head, capacity x capacity lower triangle
  };

  const BasicParams<T>* params_;
  ParamLayout layout_;
  std::size_t capacity_ = 0;
  std::size_t len_ = 0;
  std::vector<TokenId> tokens_;
  std::vector<LayerCache> layers_;
  Mat x_final, hat_f, f_out, logits_;
  std::vector<T> rstd_f;
};

/// len x vocab_size logits; row k depends only on tokens[0..k].
template <class T>
typename Decoder<T>::Mat forward(const BasicParams<T>& params, std::span<const TokenId> tokens);

/// Mean next-token negative log-likelihood over every position of every sequence.
template <class T>
double nll_loss(const BasicParams<T>& params, std::span<const TokenSeq> batch);

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  BasicParams<T> grad;
};

template <class T>
LossAndGrad<T> grad(const BasicParams<T>& params, std::span<const TokenSeq> batch);

struct TrainReport {
  std::vector<double> epoch_loss;
};

/// Produces the training sequences for a given epoch (lets callers redraw
/// permutations every epoch).
using EpochCorpus = std::function<std::vector<TokenSeq>(std::size_t epoch)>;

/// Adam (beta 0.9/0.999, eps 1e-8, no weight decay) with global-norm clipping.
/// The corpus size must not change between epochs when `steps` is set.
LMParams train(LMParams params, const EpochCorpus& corpus, const TrainConfig& tcfg, TrainReport* report = nullptr,
               std::ostream* log = nullptr);
LMParams train(LMParams params, const std::vector<TokenSeq>& corpus, const TrainConfig& tcfg,
               TrainReport* report = nullptr, std::ostream* log = nullptr);

/// Temperature softmax restricted to `allowed` (all tokens when null).
std::vector<double> distribution_from_logits(std::span<const float> logits, double temperature,
                                             const std::vector<TokenId>* allowed);

std::vector<double> next_token_dist(const LMParams& params, std::span<const TokenId> prefix, const SamplerConfig& scfg);

/// Shannon entropy in nats.
double entropy(std::span<const double> probs);

using StepMaskFn = std::function<std::optional<std::vector<TokenId>>(std::span<const TokenId> sequence)>;
using StepObserver = std::function<void(std::span<const TokenId> sequence, std::span<const double> probs)>;

struct SampleResult {
  TokenSeq tokens;
  bool truncated = false;
};

SampleResult sample_sequence(const LMParams& params, const TokenSeq& prompt, const SamplerConfig& scfg,
                             const StepMaskFn& step_mask, Rng& rng, std::size_t max_steps,
                             const StepObserver& observer = {});

void save_checkpoint(const LMParams& params, const std::filesystem::path& path);
LMParams load_checkpoint(const std::filesystem::path& path);
/// Throws LMError when the stored config differs from `expected`.
LMParams load_checkpoint(const std::filesystem::path& path, const LMConfig& expected);

extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace imbllm::lm

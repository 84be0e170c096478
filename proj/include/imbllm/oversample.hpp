#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "imbllm/data.hpp"
#include "imbllm/lm.hpp"
#include "imbllm/rng.hpp"
#include "imbllm/textcodec.hpp"

namespace imbllm::oversample {

using data::Row;
using data::Schema;
using data::Table;
using text::TokenSeq;

class OversampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ConditionStrategy { condition_y, condition_yx };
enum class FinetuneSet { major_minor, minor_only, minor_interpolate };
enum class DecodeMode { constrained, free };

std::string_view to_string(ConditionStrategy c);
std::string_view to_string(FinetuneSet f);
std::string_view to_string(DecodeMode m);
ConditionStrategy parse_condition(std::string_view s);
FinetuneSet parse_finetune(std::string_view s);
DecodeMode parse_decode_mode(std::string_view s);

struct OversampleConfig {
  ConditionStrategy condition = ConditionStrategy::condition_yx;
  text::Permutation permutation = text::Permutation::fix_y;
  FinetuneSet finetune = FinetuneSet::minor_interpolate;
  double r = 1.0;
  double temperature = 0.7;
  DecodeMode decode_mode = DecodeMode::constrained;
  std::size_t max_retries = 16;
  lm::LMConfig lm;  // vocab_size is filled from the schema vocabulary
  lm::TrainConfig train;

  void validate() const;
};

/// Interpolated minority sample: continuous values only, in schema order of
/// the continuous features.
struct PartialRow {
  std::vector<double> continuous;
  std::string label;
};

struct InterpolationDraw {
  std::size_t i = 0;
  std::size_t j = 0;
  double eps = 0.0;
};

/// x_i + eps * (x_j - x_i) on every continuous feature; categorical features are dropped.
PartialRow interpolate(const Row& x_i, const Row& x_j, double eps, const Schema& schema);

std::vector<PartialRow> build_interpolation_set(const Table& minor, std::size_t target_count, Rng& rng,
                                                std::vector<InterpolationDraw>* draws = nullptr);

text::Sentence partial_to_sentence(const PartialRow& row, const Schema& schema, int sig_digits = 4);

/// Unpermuted training sentences; `draw` re-permutes and encodes them.
class FinetuneCorpus {
 public:
  FinetuneCorpus(const Table& major, const Table& minor, const std::vector<PartialRow>& inter, int sig_digits = 4);

  std::size_t size() const { return sentences_.size(); }
  /// Each sentence permuted independently, encoded, then the order shuffled.
  std::vector<TokenSeq> draw(text::Permutation permutation, const text::Vocab& vocab, Rng& rng) const;

 private:
  std::string target_name_;
  std::vector<text::Sentence> sentences_;
};

std::vector<TokenSeq> build_finetune_corpus(const Table& major, const Table& minor,
                                            const std::vector<PartialRow>& inter, text::Permutation permutation,
                                            const text::Vocab& vocab, Rng& rng, int sig_digits = 4);

/// condition_y: [Y is y_minor]. condition_yx: additionally one uniformly chosen
/// feature with a value drawn uniformly from its observed values in `minor`.
/// No EOS is appended.
TokenSeq build_prompt(ConditionStrategy condition, const Schema& schema, const Table& minor, const text::Vocab& vocab,
                      Rng& rng, int sig_digits = 4);

/// Effective LM config for a schema: vocab_size from the vocabulary.
lm::LMConfig resolve_lm_config(const OversampleConfig& cfg, const text::Vocab& vocab);

/// Assembles the fine-tune corpus for `cfg.finetune` and trains a fresh model.
lm::LMParams finetune(const OversampleConfig& cfg, const Schema& schema, const text::Vocab& vocab, const Table& major,
                      const Table& minor, std::uint64_t seed, lm::TrainReport* report = nullptr,
                      std::ostream* log = nullptr, int sig_digits = 4);

struct GenerationStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Generation mask for constrained decoding (see text::RowGrammar).
lm::StepMaskFn grammar_mask(const Schema& schema, const text::Vocab& vocab);

/// Exactly `need` minority rows. Each slot s samples from its own stream
/// derive_seed(seed, s); the prompt gets a trailing SEP so the seeded field
/// is treated as final.
Table generate_minority(const lm::LMParams& params, const OversampleConfig& cfg, const Schema& schema,
                        const text::Vocab& vocab, const Table& minor, std::size_t need, std::uint64_t seed,
                        GenerationStats* stats = nullptr, int sig_digits = 4);

/// Plain SMOTE. Categorical features are ordinal-encoded by declared index,
/// interpolated, and rounded back. Euclidean neighbours on the raw encoding.
Table smote(const Table& minor, std::size_t need, std::size_t k, Rng& rng);

/// SMOTE-NC: standardized continuous distance plus a per-mismatch penalty
/// (median of the continuous standard deviations); categorical values by
/// majority vote among the k neighbours (ties to the lowest category index).
Table smote_nc(const Table& minor, std::size_t need, std::size_t k, Rng& rng);

/// major ++ synthetic, shuffled by `seed`.
Table rebalance(const Table& major, const Table& synthetic_minor, std::uint64_t seed = 0);

/// Trained models keyed by a caller-defined string, so several evaluations
/// can share one fine-tuning run.
class ModelCache {
 public:
  std::shared_ptr<const lm::LMParams> find(const std::string& key) const;
  void put(const std::string& key, std::shared_ptr<const lm::LMParams> params);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const lm::LMParams>> models_;
};

/// Key identifying a fine-tuning run: config, seed, and a fingerprint of the data.
std::string finetune_key(const OversampleConfig& cfg, const Table& major, const Table& minor, std::uint64_t seed,
                         int sig_digits);

}  // namespace imbllm::oversample

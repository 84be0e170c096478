#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "imbllm/data.hpp"
#include "imbllm/lm.hpp"
#include "imbllm/textcodec.hpp"

namespace imbllm::eval {

using data::Row;
using data::Schema;
using data::Table;

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Min-max scaled continuous channels (clipped to [0, 1]) followed by one-hot
/// blocks for every categorical feature.
class MixedEncoder {
 public:
  MixedEncoder() = default;
  static MixedEncoder fit(const Table& reference);

  std::size_t width() const { return width_; }
  std::vector<double> encode(const Row& row) const;
  std::vector<std::vector<double>> encode(const Table& table) const;

 private:
  Schema schema_;
  std::vector<double> min_;
  std::vector<double> max_;
  std::size_t width_ = 0;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

// --------------------------------------------------------------- classifier

struct GBDTConfig {
  std::size_t n_rounds = 50;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_leaf = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gradient-boosted regression trees on the logistic loss. The positive class
/// is the schema's minority label.
class GBDTModel {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  double predict_proba(const Row& row) const;
  std::vector<double> predict_proba(const Table& table) const;
  std::vector<std::string> predict(const Table& table, double threshold = 0.5) const;

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  friend GBDTModel fit_gbdt(const Table&, const GBDTConfig&, const MixedEncoder&);

  double raw_score(std::span<const double> x) const;

  MixedEncoder encoder_;
  std::string minority_;
  std::string majority_;
  double base_score_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<Tree> trees_;
};

GBDTModel fit_gbdt(const Table& train, const GBDTConfig& cfg, const MixedEncoder& encoder);

// ------------------------------------------------------------------ metrics

std::vector<std::string> labels_of(const Table& table);

/// F1 with the minority label as the positive class; 0 when precision + recall = 0.
double f1_minority(std::span<const std::string> preds, std::span<const std::string> truth,
                   std::string_view minority_label);

/// Rank-based ROC AUC (Mann-Whitney U, ties count one half).
double auc(std::span<const double> scores, std::span<const std::string> truth, std::string_view minority_label);

/// Fraction of real rows whose nearest synthetic row lies within `alpha`,
/// with distance = encoded Euclidean / sqrt(encoded width).
double close_probability(const Table& minor_star, const Table& synth, double alpha, const MixedEncoder& encoder);

/// Fraction of real rows whose k-NN ball (radius = distance to the k-th
/// nearest other real row, closed) contains at least one synthetic row.
double coverage(const Table& minor_star, const Table& synth, std::size_t k, const MixedEncoder& encoder);

struct Histogram {
  std::vector<double> edges;  // bins + 1 values over [0, max distance]
  std::vector<std::size_t> counts;
  std::vector<double> distances;  // raw per-row DCR values
};

Histogram dcr_histogram(const Table& test_minor, const Table& synth, const MixedEncoder& encoder,
                        std::size_t bins = 20);

// ------------------------------------------------------------------ entropy

/// Maps rows to discrete symbols: categories as-is, continuous values into 10
/// equal-width bins fitted on a reference table (out-of-range values clip).
class Discretizer {
 public:
  static constexpr std::size_t kBins = 10;

  static Discretizer fit(const Table& reference);
  std::vector<std::size_t> symbol(const Row& row) const;

 private:
  Schema schema_;
  std::vector<double> min_;
  std::vector<double> max_;
};

/// Plug-in Shannon entropy (nats) of the joint discretized row symbols.
double sample_set_entropy(const Table& samples, const Discretizer& discretizer);

struct StepEntropy {
  double mean_per_step_entropy = 0.0;  // over every generated step of every prompt
  double first_field_entropy = 0.0;    // mean over prompts, at the first field-name step
  std::vector<Row> rows;               // the generated rows
};

/// Runs constrained generation from each prompt (prompts are extended with SEP
/// as in generation) and records the entropy of every masked,
/// temperature-scaled next-token distribution.
StepEntropy per_step_entropy(const lm::LMParams& params, std::span<const text::TokenSeq> prompts,
                             const lm::SamplerConfig& scfg, const Schema& schema, const text::Vocab& vocab,
                             std::uint64_t seed);

struct EntropyReport {
  std::string label;
  std::uint64_t seed = 0;
  double mean_per_step_entropy = 0.0;
  double first_field_entropy = 0.0;
  double sample_set_entropy = 0.0;
};

// --------------------------------------------------------------- evaluation

/// Returns synthetic minority rows, or nullopt for the no-oversampling method.
using Oversampler = std::function<std::optional<Table>(const Table& major, const Table& minor, std::size_t need,
                                                       std::uint64_t seed)>;

struct SeedScores {
  std::uint64_t seed = 0;
  double f1 = 0.0;
  double auc = 0.0;
  std::size_t synthetic_count = 0;
  std::optional<double> close_probability;
  std::optional<double> coverage;
  std::optional<double> sample_set_entropy;
  std::optional<Histogram> dcr;
};

struct EvalReport {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<SeedScores> per_seed;
  double f1 = 0.0;
  double f1_std = 0.0;
  double auc = 0.0;
  double auc_std = 0.0;
  std::optional<double> close_probability;
  std::optional<double> close_probability_std;
  std::optional<double> coverage;
  std::optional<double> coverage_std;
  std::optional<Histogram> dcr;  // first seed's histogram
};

struct EvalOptions {
  double alpha = 0.2;
  std::size_t coverage_k = 2;
  std::size_t dcr_bins = 20;
};

/// Per seed: oversample to |major|, rebalance, fit the classifier, score on
/// `test`, and compare the synthetic set to `minor_star`. The null method
/// trains on major + minor and reports no synthetic-set metrics.
EvalReport run_evaluation(const Table& major, const Table& minor, const Table& minor_star, const Table& test,
                          std::string method_name, const Oversampler& method, std::span<const std::uint64_t> seeds,
                          const GBDTConfig& gbdt, const EvalOptions& options = {});

/// Mean and (population) standard deviation.
std::pair<double, double> mean_std(std::span<const double> xs);

}  // namespace imbllm::eval

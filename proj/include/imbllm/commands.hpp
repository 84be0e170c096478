#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "imbllm/data.hpp"
#include "imbllm/eval.hpp"
#include "imbllm/oversample.hpp"

namespace imbllm::cli {

enum class Method { imbllm, imbllm_inter, great_equiv, smote, smote_nc, imbalance_null };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
bool is_llm_method(Method m);

struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path schema;
  std::filesystem::path out = "out";
  data::ImbalanceSpec imbalance;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  oversample::OversampleConfig oversample;
  eval::GBDTConfig gbdt;
  eval::EvalOptions metrics;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Method method = Method::imbllm;
  std::size_t smote_k = 5;
  int sig_digits = 4;
  std::size_t entropy_samples = 500;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Strategy axes implied by the method: imbllm keeps the configured axes,
/// imbllm_inter is imbllm with r = 0, great_equiv is condition_y / permute_xy /
/// major_minor.
oversample::OversampleConfig expand_method(Method method, const oversample::OversampleConfig& base);

struct PreparedData {
  data::Table major;
  data::Table minor;
  data::Table minor_star;
  data::Table test;
};

/// load -> split -> imbalance.
PreparedData prepare(const RunConfig& cfg);
PreparedData prepare(const RunConfig& cfg, const data::Table& full);

using ModelSink = std::function<void(std::uint64_t seed, const lm::LMParams& params)>;

eval::Oversampler make_oversampler(Method method, const RunConfig& cfg, oversample::ModelCache* cache = nullptr,
                                   std::ostream* log = nullptr, ModelSink on_model = {});
/// LLM oversampler for an explicit strategy configuration.
eval::Oversampler make_llm_oversampler(const oversample::OversampleConfig& ocfg, int sig_digits,
                                       oversample::ModelCache* cache = nullptr, std::ostream* log = nullptr,
                                       ModelSink on_model = {});

eval::EvalReport evaluate(const RunConfig& cfg, const PreparedData& data, oversample::ModelCache* cache = nullptr,
                          std::ostream* log = nullptr, ModelSink on_model = {});

struct GridRow {
  std::string label;
  oversample::ConditionStrategy condition;
  text::Permutation permutation;
  oversample::FinetuneSet finetune;
  bool ok = false;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  std::string error;
};

/// Every condition x permutation x fine-tune-set combination, in that nesting order.
std::vector<GridRow> ablation_grid(const RunConfig& cfg, const PreparedData& data,
                                   oversample::ModelCache* cache = nullptr, std::ostream* log = nullptr);

/// Fine-tunes (or fetches) the model for `ocfg` and seed, samples
/// cfg.entropy_samples rows from `condition` prompts, and reports per-step,
/// first-field and sample-set entropies.
eval::EntropyReport measure_entropy(const RunConfig& cfg, const PreparedData& data,
                                    const oversample::OversampleConfig& ocfg, oversample::ConditionStrategy condition,
                                    const std::string& label, std::uint64_t seed,
                                    oversample::ModelCache* cache = nullptr, std::ostream* log = nullptr);

/// Three comparison blocks (prop1, prop2, prop3) with per-seed entropy reports and means.
nlohmann::json entropy_lab(const RunConfig& cfg, const PreparedData& data, oversample::ModelCache* cache = nullptr,
                           std::ostream* log = nullptr);

enum class SweepParam { r, q };

struct SweepRow {
  double value = 0.0;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
};

std::vector<SweepRow> sweep(const RunConfig& cfg, SweepParam param, const std::vector<double>& values,
                            oversample::ModelCache* cache = nullptr, std::ostream* log = nullptr);

struct FixtureArgs {
  std::size_t n_major = 400;
  std::size_t n_minor = 100;
  std::size_t m_con = 4;
  std::size_t m_cat = 2;
  std::uint64_t seed = 0;
  std::filesystem::path out = "fixture";
};

// Subcommands: each returns the process exit code and writes its artifacts to
// the output directory. Errors are reported on `err`.
int cmd_fixture(const FixtureArgs& args, std::ostream& out, std::ostream& err);
int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache = nullptr);
int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache = nullptr);
int cmd_entropy(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache = nullptr);
int cmd_sweep(const RunConfig& cfg, SweepParam param, const std::vector<double>& values, std::ostream& out,
              std::ostream& err, oversample::ModelCache* cache = nullptr);

/// Writes serialized sentences ("X is v, ...") of a table, one per line.
void dump_sentences(const data::Table& table, text::Permutation permutation, std::uint64_t seed, int sig_digits,
                    std::ostream& out);

}  // namespace imbllm::cli

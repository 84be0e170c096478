#pragma once

// JSON forms of the configuration and report types.

#include "json.hpp"

#include "imbllm/eval.hpp"
#include "imbllm/lm.hpp"
#include "imbllm/oversample.hpp"

namespace imbllm::lm {
void to_json(nlohmann::json& j, const LMConfig& c);
void from_json(const nlohmann::json& j, LMConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
}  // namespace imbllm::lm

namespace imbllm::oversample {
/// Keys: condition, permutation, finetune, r, temperature, decode_mode,
/// max_retries, lm{...}, train{...}. Missing keys keep their defaults.
void to_json(nlohmann::json& j, const OversampleConfig& c);
void from_json(const nlohmann::json& j, OversampleConfig& c);
}  // namespace imbllm::oversample

namespace imbllm::eval {
void to_json(nlohmann::json& j, const GBDTConfig& c);
void from_json(const nlohmann::json& j, GBDTConfig& c);
void to_json(nlohmann::json& j, const Histogram& h);
void to_json(nlohmann::json& j, const SeedScores& s);
/// Keys: f1, auc, close_probability, coverage, per_seed, dcr{edges, counts};
/// synthetic-set metrics are omitted for the null method.
void to_json(nlohmann::json& j, const EvalReport& r);
void to_json(nlohmann::json& j, const EntropyReport& r);
}  // namespace imbllm::eval

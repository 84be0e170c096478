#include "imbllm/config_io.hpp"

namespace imbllm {

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

namespace lm {

void to_json(nlohmann::json& j, const LMConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
       {"d_k", c.d_k},           {"d_ff", c.d_ff},       {"max_len", c.max_len}};
}

void from_json(const nlohmann::json& j, LMConfig& c) {
  read_opt(j, "vocab_size", c.vocab_size);
  read_opt(j, "d_model", c.d_model);
  read_opt(j, "n_layers", c.n_layers);
  read_opt(j, "n_heads", c.n_heads);
  read_opt(j, "d_k", c.d_k);
  read_opt(j, "d_ff", c.d_ff);
  read_opt(j, "max_len", c.max_len);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"seed", c.seed},
       {"grad_clip", c.grad_clip},
       {"steps", c.steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "seed", c.seed);
  read_opt(j, "grad_clip", c.grad_clip);
  read_opt(j, "steps", c.steps);
}

}  // namespace lm

namespace oversample {

void to_json(nlohmann::json& j, const OversampleConfig& c) {
  j = {{"condition", to_string(c.condition)},
       {"permutation", text::to_string(c.permutation)},
       {"finetune", to_string(c.finetune)},
       {"r", c.r},
       {"temperature", c.temperature},
       {"decode_mode", to_string(c.decode_mode)},
       {"max_retries", c.max_retries},
       {"lm", c.lm},
       {"train", c.train}};
}

void from_json(const nlohmann::json& j, OversampleConfig& c) {
  if (j.contains("condition")) c.condition = parse_condition(j.at("condition").get<std::string>());
  if (j.contains("permutation")) c.permutation = text::parse_permutation(j.at("permutation").get<std::string>());
  if (j.contains("finetune")) c.finetune = parse_finetune(j.at("finetune").get<std::string>());
  read_opt(j, "r", c.r);
  read_opt(j, "temperature", c.temperature);
  if (j.contains("decode_mode")) c.decode_mode = parse_decode_mode(j.at("decode_mode").get<std::string>());
  read_opt(j, "max_retries", c.max_retries);
  if (j.contains("lm")) lm::from_json(j.at("lm"), c.lm);
  if (j.contains("train")) lm::from_json(j.at("train"), c.train);
}

}  // namespace oversample

namespace eval {

void to_json(nlohmann::json& j, const GBDTConfig& c) {
  j = {{"n_rounds", c.n_rounds},
       {"max_depth", c.max_depth},
       {"learning_rate", c.learning_rate},
       {"min_leaf", c.min_leaf},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GBDTConfig& c) {
  read_opt(j, "n_rounds", c.n_rounds);
  read_opt(j, "max_depth", c.max_depth);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "min_leaf", c.min_leaf);
  read_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const Histogram& h) { j = {{"edges", h.edges}, {"counts", h.counts}}; }

void to_json(nlohmann::json& j, const SeedScores& s) {
  j = {{"seed", s.seed}, {"f1", s.f1}, {"auc", s.auc}, {"synthetic_count", s.synthetic_count}};
  if (s.close_probability) j["close_probability"] = *s.close_probability;
  if (s.coverage) j["coverage"] = *s.coverage;
  if (s.sample_set_entropy) j["sample_set_entropy"] = *s.sample_set_entropy;
  if (s.dcr) j["dcr"] = *s.dcr;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"method", r.method}, {"seeds", r.seeds},     {"f1", r.f1},         {"f1_std", r.f1_std},
       {"auc", r.auc},       {"auc_std", r.auc_std}, {"per_seed", r.per_seed}};
  if (r.close_probability) {
    j["close_probability"] = *r.close_probability;
    j["close_probability_std"] = r.close_probability_std.value_or(0.0);
  }
  if (r.coverage) {
    j["coverage"] = *r.coverage;
    j["coverage_std"] = r.coverage_std.value_or(0.0);
  }
  if (r.dcr) j["dcr"] = *r.dcr;
}

void to_json(nlohmann::json& j, const EntropyReport& r) {
  j = {{"label", r.label},
       {"seed", r.seed},
       {"mean_per_step_entropy", r.mean_per_step_entropy},
       {"first_field_entropy", r.first_field_entropy},
       {"sample_set_entropy", r.sample_set_entropy}};
}

}  // namespace eval

}  // namespace imbllm

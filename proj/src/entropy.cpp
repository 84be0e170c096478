#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "imbllm/eval.hpp"
#include "imbllm/oversample.hpp"

namespace imbllm::eval {

Discretizer Discretizer::fit(const Table& reference) {
  Discretizer d;
  d.schema_ = reference.schema;
  const auto& features = d.schema_.features;
  d.min_.assign(features.size(), 0.0);
  d.max_.assign(features.size(), 0.0);
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (!features[j].is_continuous() || reference.empty()) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& row : reference.rows) {
      lo = std::min(lo, data::as_number(row.values[j]));
      hi = std::max(hi, data::as_number(row.values[j]));
    }
    d.min_[j] = lo;
    d.max_[j] = hi;
  }
  return d;
}

std::vector<std::size_t> Discretizer::symbol(const Row& row) const {
  std::vector<std::size_t> out;
  out.reserve(row.values.size());
  for (std::size_t j = 0; j < schema_.features.size(); ++j) {
    const auto& f = schema_.features[j];
    if (f.is_continuous()) {
      const double span = max_[j] - min_[j];
      const double x = data::as_number(row.values[j]);
      double pos = span > 0.0 ? (x - min_[j]) / span * static_cast<double>(kBins) : 0.0;
      pos = std::clamp(pos, 0.0, static_cast<double>(kBins - 1));
      out.push_back(static_cast<std::size_t>(pos));
    } else {
      out.push_back(*f.category_index(data::as_category(row.values[j])));
    }
  }
  return out;
}

double sample_set_entropy(const Table& samples, const Discretizer& discretizer) {
  if (samples.empty()) throw EvalError("sample_set_entropy: empty sample set");
  std::map<std::vector<std::size_t>, std::size_t> counts;
  for (const auto& row : samples.rows) ++counts[discretizer.symbol(row)];
  const double n = static_cast<double>(samples.size());
  double h = 0.0;
  for (const auto& [sym, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

StepEntropy per_step_entropy(const lm::LMParams& params, std::span<const text::TokenSeq> prompts,
                             const lm::SamplerConfig& scfg, const Schema& schema, const text::Vocab& vocab,
                             std::uint64_t seed) {
  if (prompts.empty()) throw EvalError("per_step_entropy: no prompts");
  StepEntropy out;
  double step_sum = 0.0;
  std::size_t steps = 0;
  double first_sum = 0.0;
  std::size_t firsts = 0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    text::TokenSeq prompt = prompts[p];
    text::RowGrammar probe(schema, vocab);
    probe.advance(prompt);
    if (!probe.finished() && !probe.at_field_start() && probe.all_fields_emitted()) {
      prompt.push_back(text::Vocab::eos);
    } else if (!probe.finished() && !probe.at_field_start()) {
      prompt.push_back(text::Vocab::sep);
    }
    const std::size_t prompt_len = prompt.size();
    bool first_seen = false;
    auto observer = [&](std::span<const text::TokenId> seq, std::span<const double> probs) {
      const double h = lm::entropy(probs);
      step_sum += h;
      ++steps;
      if (!first_seen && seq.size() == prompt_len) {
        first_sum += h;
        ++firsts;
        first_seen = true;
      }
    };
    Rng rng(derive_seed(seed, p));
    const std::size_t limit = std::min(params.config.max_len, probe.max_sequence_length());
    const std::size_t max_steps = limit > prompt_len ? limit - prompt_len : 0;
    auto result = lm::sample_sequence(params, prompt, scfg, oversample::grammar_mask(schema, vocab), rng, max_steps,
                                      observer);
    auto decoded = text::decode_to_row(result.tokens, vocab, schema);
    if (text::decoded(decoded)) out.rows.push_back(std::get<Row>(std::move(decoded)));
  }
  out.mean_per_step_entropy = steps ? step_sum / static_cast<double>(steps) : 0.0;
  out.first_field_entropy = firsts ? first_sum / static_cast<double>(firsts) : 0.0;
  return out;
}

}  // namespace imbllm::eval

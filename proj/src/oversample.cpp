#include "imbllm/oversample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "imbllm/config_io.hpp"

namespace imbllm::oversample {

std::string_view to_string(ConditionStrategy c) {
  return c == ConditionStrategy::condition_y ? "condition_y" : "condition_yx";
}

std::string_view to_string(FinetuneSet f) {
  switch (f) {
    case FinetuneSet::major_minor: return "major_minor";
    case FinetuneSet::minor_only: return "minor_only";
    case FinetuneSet::minor_interpolate: return "minor_interpolate";
  }
  return "?";
}

std::string_view to_string(DecodeMode m) { return m == DecodeMode::constrained ? "constrained" : "free"; }

ConditionStrategy parse_condition(std::string_view s) {
  if (s == "condition_y") return ConditionStrategy::condition_y;
  if (s == "condition_yx") return ConditionStrategy::condition_yx;
  throw OversampleError("unknown condition strategy '" + std::string(s) + "'");
}

FinetuneSet parse_finetune(std::string_view s) {
  if (s == "major_minor") return FinetuneSet::major_minor;
  if (s == "minor_only") return FinetuneSet::minor_only;
  if (s == "minor_interpolate") return FinetuneSet::minor_interpolate;
  throw OversampleError("unknown fine-tune set '" + std::string(s) + "'");
}

DecodeMode parse_decode_mode(std::string_view s) {
  if (s == "constrained") return DecodeMode::constrained;
  if (s == "free") return DecodeMode::free;
  throw OversampleError("unknown decode mode '" + std::string(s) + "'");
}

void OversampleConfig::validate() const {
  if (!(r >= 0.0 && r <= 1.0)) throw OversampleError("OversampleConfig: r must lie in [0, 1]");
  if (!(temperature > 0.0)) throw OversampleError("OversampleConfig: temperature must be positive");
  train.validate();
}

// ------------------------------------------------------------ interpolation

PartialRow interpolate(const Row& x_i, const Row& x_j, double eps, const Schema& schema) {
  if (x_i.label != schema.minority_label || x_j.label != schema.minority_label)
    throw OversampleError("interpolate: both rows must carry the minority label");
  if (!(eps >= 0.0 && eps <= 1.0)) throw OversampleError("interpolate: eps must lie in [0, 1]");
  PartialRow out;
  out.label = schema.minority_label;
  for (std::size_t c = 0; c < schema.num_features(); ++c) {
    if (!schema.features[c].is_continuous()) continue;
    const double a = data::as_number(x_i.values[c]);
    const double b = data::as_number(x_j.values[c]);
    out.continuous.push_back(a + eps * (b - a));
  }
  return out;
}

std::vector<PartialRow> build_interpolation_set(const Table& minor, std::size_t target_count, Rng& rng,
                                                std::vector<InterpolationDraw>* draws) {
  std::vector<PartialRow> out;
  if (target_count == 0) return out;
  const std::size_t n = minor.size();
  if (n < 2) throw OversampleError("interpolation needs at least 2 minority rows");
  out.reserve(target_count);
  for (std::size_t t = 0; t < target_count; ++t) {
    InterpolationDraw d;
    d.i = rng.below(n);
    d.j = rng.below(n - 1);
    if (d.j >= d.i) ++d.j;
    d.eps = rng.uniform();
    out.push_back(interpolate(minor.rows[d.i], minor.rows[d.j], d.eps, minor.schema));
    if (draws) draws->push_back(d);
  }
  return out;
}

text::Sentence partial_to_sentence(const PartialRow& row, const Schema& schema, int sig_digits) {
  text::Sentence s;
  std::size_t k = 0;
  for (const auto& f : schema.features) {
    if (!f.is_continuous()) continue;
    s.fields.push_back({f.name, text::format_number(row.continuous.at(k++), sig_digits)});
  }
  s.fields.push_back({schema.target_name, row.label});
  return s;
}

// ---------------------------------------------------------- fine-tune corpus

FinetuneCorpus::FinetuneCorpus(const Table& major, const Table& minor, const std::vector<PartialRow>& inter,
                               int sig_digits)
    : target_name_(minor.schema.target_name) {
  for (const auto& row : major.rows) sentences_.push_back(text::row_to_sentence(row, major.schema, true, sig_digits));
  for (const auto& row : minor.rows) sentences_.push_back(text::row_to_sentence(row, minor.schema, true, sig_digits));
  for (const auto& row : inter) sentences_.push_back(partial_to_sentence(row, minor.schema, sig_digits));
}

std::vector<TokenSeq> FinetuneCorpus::draw(text::Permutation permutation, const text::Vocab& vocab, Rng& rng) const {
  std::vector<TokenSeq> out;
  out.reserve(sentences_.size());
  for (const auto& s : sentences_) out.push_back(text::encode(text::permute_sentence(s, target_name_, permutation, rng), vocab));
  rng.shuffle(out);
  return out;
}

std::vector<TokenSeq> build_finetune_corpus(const Table& major, const Table& minor,
                                            const std::vector<PartialRow>& inter, text::Permutation permutation,
                                            const text::Vocab& vocab, Rng& rng, int sig_digits) {
  FinetuneCorpus corpus(major, minor, inter, sig_digits);
  if (corpus.size() == 0) throw OversampleError("fine-tune corpus is empty");
  return corpus.draw(permutation, vocab, rng);
}

// ------------------------------------------------------------------ prompts

TokenSeq build_prompt(ConditionStrategy condition, const Schema& schema, const Table& minor, const text::Vocab& vocab,
                      Rng& rng, int sig_digits) {
  text::Sentence s;
  s.fields.push_back({schema.target_name, schema.minority_label});
  if (condition == ConditionStrategy::condition_yx) {
    if (minor.empty()) throw OversampleError("condition_yx prompt needs minority rows");
    const std::size_t feature = rng.below(schema.num_features());
    const auto& value = minor.rows[rng.below(minor.size())].values[feature];
    const auto& f = schema.features[feature];
    s.fields.push_back(
        {f.name, f.is_continuous() ? text::format_number(data::as_number(value), sig_digits) : data::as_category(value)});
  }
  return text::encode(s, vocab, /*terminate=*/false);
}

// ----------------------------------------------------------------- training

lm::LMConfig resolve_lm_config(const OversampleConfig& cfg, const text::Vocab& vocab) {
  lm::LMConfig c = cfg.lm;
  c.vocab_size = vocab.size();
  c.validate();
  return c;
}

lm::LMParams finetune(const OversampleConfig& cfg, const Schema& schema, const text::Vocab& vocab, const Table& major,
                      const Table& minor, std::uint64_t seed, lm::TrainReport* report, std::ostream* log,
                      int sig_digits) {
  cfg.validate();
  const std::uint64_t master = derive_seed(seed, cfg.train.seed);
  const lm::LMConfig lmcfg = resolve_lm_config(cfg, vocab);

  const Table empty{schema, {}};
  const Table& major_used = cfg.finetune == FinetuneSet::major_minor ? major : empty;
  std::vector<PartialRow> inter;
  if (cfg.finetune == FinetuneSet::minor_interpolate) {
    const auto count = static_cast<std::size_t>(std::llround(cfg.r * static_cast<double>(major.size())));
    Rng inter_rng(derive_seed(master, 1));
    inter = build_interpolation_set(minor, count, inter_rng);
  }
  FinetuneCorpus corpus(major_used, minor, inter, sig_digits);
  if (corpus.size() == 0) throw OversampleError("fine-tune corpus is empty");

  lm::LMParams params = lm::init_params(lmcfg, derive_seed(master, 2));
  lm::TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(master, 4);
  const std::uint64_t corpus_seed = derive_seed(master, 3);
  const auto permutation = cfg.permutation;
  auto epoch_corpus = [&](std::size_t epoch) {
    Rng rng(derive_seed(corpus_seed, epoch));
    return corpus.draw(permutation, vocab, rng);
  };
  return lm::train(std::move(params), epoch_corpus, tcfg, report, log);
}

// --------------------------------------------------------------- generation

lm::StepMaskFn grammar_mask(const Schema& schema, const text::Vocab& vocab) {
  auto grammar = std::make_shared<text::RowGrammar>(schema, vocab);
  return [grammar](std::span<const text::TokenId> seq) -> std::optional<std::vector<text::TokenId>> {
    grammar->advance(seq.subspan(grammar->tokens_consumed()));
    return grammar->allowed();
  };
}

Table generate_minority(const lm::LMParams& params, const OversampleConfig& cfg, const Schema& schema,
                        const text::Vocab& vocab, const Table& minor, std::size_t need, std::uint64_t seed,
                        GenerationStats* stats, int sig_digits) {
  Table out{schema, {}};
  if (need == 0) return out;
  if (params.config.vocab_size != vocab.size()) throw OversampleError("generate: model vocabulary does not match schema");
  const bool constrained = cfg.decode_mode == DecodeMode::constrained;
  if (constrained && text::RowGrammar(schema, vocab).max_sequence_length() > params.config.max_len)
    throw OversampleError("generate: max_len is too small for constrained decoding of this schema");

  const std::size_t grammar_limit = text::RowGrammar(schema, vocab).max_sequence_length();
  lm::SamplerConfig scfg;
  scfg.temperature = cfg.temperature;
  GenerationStats local;
  out.rows.reserve(need);
  for (std::size_t slot = 0; slot < need; ++slot) {
    Rng rng(derive_seed(seed, slot));
    bool done = false;
    for (std::size_t attempt = 0; !done; ++attempt) {
      TokenSeq prompt = build_prompt(cfg.condition, schema, minor, vocab, rng, sig_digits);
      text::RowGrammar probe(schema, vocab);
      probe.advance(prompt);
      prompt.push_back(probe.all_fields_emitted() ? text::Vocab::eos : text::Vocab::sep);

      lm::StepMaskFn mask = constrained ? grammar_mask(schema, vocab) : lm::StepMaskFn{};
      const std::size_t limit = constrained ? grammar_limit : params.config.max_len;
      const std::size_t max_steps = limit > prompt.size() ? limit - prompt.size() : 0;
      auto result = lm::sample_sequence(params, prompt, scfg, mask, rng, max_steps);
      auto decoded = text::decode_to_row(result.tokens, vocab, schema);
      if (text::decoded(decoded) && std::get<Row>(decoded).label == schema.minority_label) {
        out.rows.push_back(std::get<Row>(std::move(decoded)));
        ++local.accepted;
        done = true;
      } else {
        ++local.rejected;
        if (constrained)
          throw OversampleError("generate: constrained output failed to parse at slot " + std::to_string(slot));
        if (attempt >= cfg.max_retries) {
          if (stats) *stats = local;
          throw OversampleError("generate: slot " + std::to_string(slot) + " exhausted " +
                                std::to_string(cfg.max_retries) + " retries (accepted " +
                                std::to_string(local.accepted) + ", failed " + std::to_string(local.rejected) + ")");
        }
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

// -------------------------------------------------------------------- SMOTE

namespace {

std::vector<std::vector<std::size_t>> nearest_neighbours(const std::vector<std::vector<double>>& points,
                                                         std::size_t k,
                                                         const std::function<double(std::size_t, std::size_t)>& dist2) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.emplace_back(dist2(i, j), j);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t t = 0; t < k; ++t) out[i].push_back(d[t].second);
  }
  return out;
}

void check_smote_input(const Table& minor, std::size_t k) {
  if (minor.size() < 2) throw OversampleError("SMOTE needs at least 2 minority rows");
  if (k == 0) throw OversampleError("SMOTE needs k >= 1");
}

}  // namespace

Table smote(const Table& minor, std::size_t need, std::size_t k, Rng& rng) {
  check_smote_input(minor, k);
  const auto& schema = minor.schema;
  const std::size_t m = schema.num_features();
  const std::size_t k_eff = std::min(k, minor.size() - 1);

  std::vector<std::vector<double>> points;
  for (const auto& row : minor.rows) {
    std::vector<double> p(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& f = schema.features[j];
      p[j] = f.is_continuous() ? data::as_number(row.values[j])
                               : static_cast<double>(*f.category_index(data::as_category(row.values[j])));
    }
    points.push_back(std::move(p));
  }
  auto nn = nearest_neighbours(points, k_eff, [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (points[a][j] - points[b][j]) * (points[a][j] - points[b][j]);
    return s;
  });

  Table out{schema, {}};
  for (std::size_t t = 0; t < need; ++t) {
    const std::size_t base = rng.below(points.size());
    const std::size_t other = nn[base][rng.below(k_eff)];
    const double gap = rng.uniform();
    Row row;
    row.label = schema.minority_label;
    for (std::size_t j = 0; j < m; ++j) {
      const double v = points[base][j] + gap * (points[other][j] - points[base][j]);
      const auto& f = schema.features[j];
      if (f.is_continuous()) {
        row.values.emplace_back(v);
      } else {
        const auto idx = static_cast<std::size_t>(
            std::clamp<long long>(std::llround(v), 0, static_cast<long long>(f.categories.size()) - 1));
        row.values.emplace_back(f.categories[idx]);
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

Table smote_nc(const Table& minor, std::size_t need, std::size_t k, Rng& rng) {
  check_smote_input(minor, k);
  const auto& schema = minor.schema;
  if (schema.num_continuous() == 0) throw OversampleError("SMOTE-NC needs at least one continuous feature");
  const std::size_t m = schema.num_features();
  const std::size_t n = minor.size();
  const std::size_t k_eff = std::min(k, n - 1);

  std::vector<std::size_t> con;
  std::vector<std::size_t> cat;
  for (std::size_t j = 0; j < m; ++j) (schema.features[j].is_continuous() ? con : cat).push_back(j);

  // standardized continuous coordinates
  std::vector<std::vector<double>> z(n, std::vector<double>(con.size()));
  std::vector<double> stds;
  for (std::size_t c = 0; c < con.size(); ++c) {
    double mean = 0.0;
    for (const auto& row : minor.rows) mean += data::as_number(row.values[con[c]]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& row : minor.rows) {
      const double d = data::as_number(row.values[con[c]]) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    const double scale = sd > 0.0 ? sd : 1.0;
    double zvar = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i][c] = (data::as_number(minor.rows[i].values[con[c]]) - mean) / scale;
      zvar += z[i][c] * z[i][c];
    }
    stds.push_back(std::sqrt(zvar / static_cast<double>(n)));
  }
  std::vector<double> sorted = stds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t h = sorted.size() / 2;
  const double median = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
  const double penalty = median * median;

  auto nn = nearest_neighbours(z, k_eff, [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < con.size(); ++c) s += (z[a][c] - z[b][c]) * (z[a][c] - z[b][c]);
    for (auto j : cat)
      if (minor.rows[a].values[j] != minor.rows[b].values[j]) s += penalty;
    return s;
  });

  Table out{schema, {}};
  for (std::size_t t = 0; t < need; ++t) {
    const std::size_t base = rng.below(n);
    const std::size_t other = nn[base][rng.below(k_eff)];
    const double gap = rng.uniform();
    Row row;
    row.label = schema.minority_label;
    for (std::size_t j = 0; j < m; ++j) {
      const auto& f = schema.features[j];
      if (f.is_continuous()) {
        const double a = data::as_number(minor.rows[base].values[j]);
        const double b = data::as_number(minor.rows[other].values[j]);
        row.values.emplace_back(a + gap * (b - a));
      } else {
        std::vector<std::size_t> votes(f.categories.size(), 0);
        for (auto nb : nn[base]) ++votes[*f.category_index(data::as_category(minor.rows[nb].values[j]))];
        const auto best = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        row.values.emplace_back(f.categories[best]);
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

Table rebalance(const Table& major, const Table& synthetic_minor, std::uint64_t seed) {
  if (!(major.schema == synthetic_minor.schema)) throw OversampleError("rebalance: schema mismatch");
  Table out = data::concat(major, synthetic_minor);
  Rng rng(seed);
  rng.shuffle(out.rows);
  return out;
}

// -------------------------------------------------------------------- cache

std::shared_ptr<const lm::LMParams> ModelCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = models_.find(key);
  return it == models_.end() ? nullptr : it->second;
}

void ModelCache::put(const std::string& key, std::shared_ptr<const lm::LMParams> params) {
  std::lock_guard lock(mutex_);
  models_[key] = std::move(params);
}

std::string finetune_key(const OversampleConfig& cfg, const Table& major, const Table& minor, std::uint64_t seed,
                         int sig_digits) {
  std::ostringstream csv;
  data::write_csv(csv, major);
  data::write_csv(csv, minor);
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : csv.str()) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  // Generation-only settings do not change the trained weights.
  nlohmann::json j = cfg;
  j.erase("condition");
  j.erase("temperature");
  j.erase("decode_mode");
  j.erase("max_retries");
  // minor_interpolate without interpolated rows trains on the minor_only corpus.
  const bool no_inter = cfg.finetune == FinetuneSet::minor_interpolate &&
                        std::llround(cfg.r * static_cast<double>(major.size())) == 0;
  if (no_inter) j["finetune"] = to_string(FinetuneSet::minor_only);
  if (cfg.finetune != FinetuneSet::minor_interpolate || no_inter) j.erase("r");
  j["seed"] = seed;
  j["sig_digits"] = sig_digits;
  j["data"] = hash;
  return j.dump();
}

}  // namespace imbllm::oversample

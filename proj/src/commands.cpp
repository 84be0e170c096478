#include "imbllm/commands.hpp"

#include <chrono>
#include <charconv>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "imbllm/config_io.hpp"
#include "imbllm/rng.hpp"

namespace imbllm::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using oversample::ConditionStrategy;
using oversample::FinetuneSet;
using oversample::OversampleConfig;
using text::Permutation;

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// Seed-stream tags, so every consumer of a run seed draws independently.
constexpr std::uint64_t kGenerateStream = 7;
constexpr std::uint64_t kSmoteStream = 5;
constexpr std::uint64_t kPromptStream = 0x70;
constexpr std::uint64_t kEntropyStream = 0x71;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Shortest text that reads back to the same double.
std::string num(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Output directory with a run log; a FAILED marker is left behind when the
/// command does not complete.
class OutputDir {
 public:
  OutputDir(const fs::path& dir, const char* command) : dir_(dir) {
    fs::create_directories(dir_);
    fs::remove(dir_ / "FAILED");
    log_.open(dir_ / "run.log", std::ios::trunc);
    if (!log_) throw std::runtime_error("cannot open run log in " + dir_.string());
    log_ << "[" << timestamp() << "] start " << command << "\n";
  }

  std::ostream& log() { return log_; }
  fs::path operator/(const char* name) const { return dir_ / name; }

  void fail(const std::string& what) {
    log_ << "[" << timestamp() << "] FAILED: " << what << "\n";
    log_.flush();
    std::ofstream marker(dir_ / "FAILED", std::ios::trunc);
    marker << what << "\n";
  }

  void done() { log_ << "[" << timestamp() << "] done\n"; }

 private:
  fs::path dir_;
  std::ofstream log_;
};

OversampleConfig with_axes(OversampleConfig cfg, ConditionStrategy c, Permutation p, FinetuneSet f) {
  cfg.condition = c;
  cfg.permutation = p;
  cfg.finetune = f;
  return cfg;
}

std::string grid_label(ConditionStrategy c, Permutation p, FinetuneSet f) {
  if (c == ConditionStrategy::condition_yx && p == Permutation::fix_y && f == FinetuneSet::minor_interpolate)
    return "imbllm_full";
  if (c == ConditionStrategy::condition_y && p == Permutation::permute_xy && f == FinetuneSet::major_minor)
    return "great_equiv";
  return std::string(oversample::to_string(c)) + "/" + std::string(text::to_string(p)) + "/" +
         std::string(oversample::to_string(f));
}

std::shared_ptr<const lm::LMParams> obtain_model(const OversampleConfig& ocfg, const data::Schema& schema,
                                                 const text::Vocab& vocab, const data::Table& major,
                                                 const data::Table& minor, std::uint64_t seed, int sig_digits,
                                                 oversample::ModelCache* cache, std::ostream* log) {
  std::string key;
  if (cache != nullptr) {
    key = oversample::finetune_key(ocfg, major, minor, seed, sig_digits);
    if (auto hit = cache->find(key)) {
      if (log != nullptr) *log << "model cache hit (seed " << seed << ")\n";
      return hit;
    }
  }
  if (log != nullptr)
    *log << "fine-tuning " << oversample::to_string(ocfg.condition) << "/" << text::to_string(ocfg.permutation)
         << "/" << oversample::to_string(ocfg.finetune) << " r=" << ocfg.r << " seed=" << seed << "\n";
  auto params = std::make_shared<const lm::LMParams>(
      oversample::finetune(ocfg, schema, vocab, major, minor, seed, nullptr, log, sig_digits));
  if (cache != nullptr) cache->put(key, params);
  return params;
}

json entropy_mean(const std::vector<eval::EntropyReport>& reports, const std::string& label) {
  std::vector<double> step, first, set;
  for (const auto& r : reports) {
    if (r.label != label) continue;
    step.push_back(r.mean_per_step_entropy);
    first.push_back(r.first_field_entropy);
    set.push_back(r.sample_set_entropy);
  }
  return {{"mean_per_step_entropy", eval::mean_std(step).first},
          {"first_field_entropy", eval::mean_std(first).first},
          {"sample_set_entropy", eval::mean_std(set).first}};
}

json entropy_block(const std::string& description, const std::string& a, const std::string& b,
                   const std::vector<eval::EntropyReport>& reports) {
  json block;
  block["description"] = description;
  block["variants"] = {a, b};
  block["per_seed"] = reports;
  block["mean"] = {{a, entropy_mean(reports, a)}, {b, entropy_mean(reports, b)}};
  return block;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::imbllm: return "imbllm";
    case Method::imbllm_inter: return "imbllm_inter";
    case Method::great_equiv: return "great_equiv";
    case Method::smote: return "smote";
    case Method::smote_nc: return "smote_nc";
    case Method::imbalance_null: return "imbalance_null";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::imbllm, Method::imbllm_inter, Method::great_equiv, Method::smote, Method::smote_nc,
                   Method::imbalance_null})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method: " + std::string(s));
}

bool is_llm_method(Method m) {
  return m == Method::imbllm || m == Method::imbllm_inter || m == Method::great_equiv;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  if (!(imbalance.q > 0.0 && imbalance.q <= 1.0)) throw std::invalid_argument("q must lie in (0, 1]");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must lie in (0, 1)");
  if (smote_k == 0) throw std::invalid_argument("smote_k must be positive");
  if (sig_digits < 1 || sig_digits > 17) throw std::invalid_argument("sig_digits must lie in [1, 17]");
  if (entropy_samples == 0) throw std::invalid_argument("entropy_samples must be positive");
  oversample.validate();
  gbdt.validate();
}

void to_json(json& j, const RunConfig& c) {
  j = {{"data", c.data.string()},
       {"schema", c.schema.string()},
       {"out", c.out.string()},
       {"imbalance", {{"q", c.imbalance.q}, {"seed", c.imbalance.seed}}},
       {"test_fraction", c.test_fraction},
       {"split_seed", c.split_seed},
       {"method", to_string(c.method)},
       {"oversample", c.oversample},
       {"gbdt", c.gbdt},
       {"metrics",
        {{"alpha", c.metrics.alpha}, {"coverage_k", c.metrics.coverage_k}, {"dcr_bins", c.metrics.dcr_bins}}},
       {"seeds", c.seeds},
       {"smote_k", c.smote_k},
       {"sig_digits", c.sig_digits},
       {"entropy_samples", c.entropy_samples}};
}

void from_json(const json& j, RunConfig& c) {
  if (j.contains("data")) c.data = j.at("data").get<std::string>();
  if (j.contains("schema")) c.schema = j.at("schema").get<std::string>();
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  if (j.contains("imbalance")) {
    read_opt(j.at("imbalance"), "q", c.imbalance.q);
    read_opt(j.at("imbalance"), "seed", c.imbalance.seed);
  }
  read_opt(j, "test_fraction", c.test_fraction);
  read_opt(j, "split_seed", c.split_seed);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("oversample")) oversample::from_json(j.at("oversample"), c.oversample);
  if (j.contains("gbdt")) eval::from_json(j.at("gbdt"), c.gbdt);
  if (j.contains("metrics")) {
    read_opt(j.at("metrics"), "alpha", c.metrics.alpha);
    read_opt(j.at("metrics"), "coverage_k", c.metrics.coverage_k);
    read_opt(j.at("metrics"), "dcr_bins", c.metrics.dcr_bins);
  }
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "smote_k", c.smote_k);
  read_opt(j, "sig_digits", c.sig_digits);
  read_opt(j, "entropy_samples", c.entropy_samples);
}

OversampleConfig expand_method(Method method, const OversampleConfig& base) {
  OversampleConfig cfg = base;
  switch (method) {
    case Method::imbllm_inter:
      cfg.finetune = FinetuneSet::minor_interpolate;
      cfg.r = 0.0;
      break;
    case Method::great_equiv:
      cfg = with_axes(cfg, ConditionStrategy::condition_y, Permutation::permute_xy, FinetuneSet::major_minor);
      break;
    default: break;
  }
  return cfg;
}

PreparedData prepare(const RunConfig& cfg) {
  const data::Schema schema = data::load_schema(cfg.schema);
  return prepare(cfg, data::load_csv(cfg.data, schema));
}

PreparedData prepare(const RunConfig& cfg, const data::Table& full) {
  auto [train, test] = data::split_train_test(full, cfg.test_fraction, cfg.split_seed);
  data::ImbalancedSplit split = data::make_imbalanced(train, cfg.imbalance);
  return {std::move(split.major), std::move(split.minor), std::move(split.minor_star), std::move(test)};
}

eval::Oversampler make_llm_oversampler(const OversampleConfig& ocfg, int sig_digits, oversample::ModelCache* cache,
                                       std::ostream* log, ModelSink on_model) {
  return [=](const data::Table& major, const data::Table& minor, std::size_t need,
             std::uint64_t seed) -> std::optional<data::Table> {
    const text::Vocab vocab = text::build_vocab(minor.schema);
    auto params = obtain_model(ocfg, minor.schema, vocab, major, minor, seed, sig_digits, cache, log);
    if (on_model) on_model(seed, *params);
    oversample::GenerationStats stats;
    data::Table synth = oversample::generate_minority(*params, ocfg, minor.schema, vocab, minor, need,
                                                      derive_seed(seed, kGenerateStream), &stats, sig_digits);
    if (log != nullptr)
      *log << "generated " << stats.accepted << " rows (" << stats.rejected << " rejected) seed=" << seed << "\n";
    return synth;
  };
}

eval::Oversampler make_oversampler(Method method, const RunConfig& cfg, oversample::ModelCache* cache,
                                   std::ostream* log, ModelSink on_model) {
  switch (method) {
    case Method::imbalance_null:
      return [](const data::Table&, const data::Table&, std::size_t, std::uint64_t) -> std::optional<data::Table> {
        return std::nullopt;
      };
    case Method::smote:
    case Method::smote_nc: {
      const std::size_t k = cfg.smote_k;
      const bool nc = method == Method::smote_nc;
      return [k, nc](const data::Table&, const data::Table& minor, std::size_t need,
                     std::uint64_t seed) -> std::optional<data::Table> {
        Rng rng(derive_seed(seed, kSmoteStream));
        return nc ? oversample::smote_nc(minor, need, k, rng) : oversample::smote(minor, need, k, rng);
      };
    }
    default:
      return make_llm_oversampler(expand_method(method, cfg.oversample), cfg.sig_digits, cache, log,
                                  std::move(on_model));
  }
}

eval::EvalReport evaluate(const RunConfig& cfg, const PreparedData& d, oversample::ModelCache* cache,
                          std::ostream* log, ModelSink on_model) {
  auto method = make_oversampler(cfg.method, cfg, cache, log, std::move(on_model));
  return eval::run_evaluation(d.major, d.minor, d.minor_star, d.test, std::string(to_string(cfg.method)), method,
                              cfg.seeds, cfg.gbdt, cfg.metrics);
}

std::vector<GridRow> ablation_grid(const RunConfig& cfg, const PreparedData& d, oversample::ModelCache* cache,
                                   std::ostream* log) {
  std::vector<GridRow> rows;
  for (auto c : {ConditionStrategy::condition_y, ConditionStrategy::condition_yx})
    for (auto p : {Permutation::permute_xy, Permutation::fix_y})
      for (auto f : {FinetuneSet::major_minor, FinetuneSet::minor_only, FinetuneSet::minor_interpolate}) {
        GridRow row;
        row.label = grid_label(c, p, f);
        row.condition = c;
        row.permutation = p;
        row.finetune = f;
        try {
          auto method = make_llm_oversampler(with_axes(cfg.oversample, c, p, f), cfg.sig_digits, cache, log);
          const eval::EvalReport rep =
              eval::run_evaluation(d.major, d.minor, d.minor_star, d.test, row.label, method, cfg.seeds, cfg.gbdt,
                                   cfg.metrics);
          row.ok = true;
          row.mean_f1 = rep.f1;
          row.std_f1 = rep.f1_std;
        } catch (const std::exception& e) {
          row.error = e.what();
          if (log != nullptr) *log << "cell " << row.label << " failed: " << e.what() << "\n";
        }
        rows.push_back(std::move(row));
      }
  return rows;
}

eval::EntropyReport measure_entropy(const RunConfig& cfg, const PreparedData& d, const OversampleConfig& ocfg,
                                    ConditionStrategy condition, const std::string& label, std::uint64_t seed,
                                    oversample::ModelCache* cache, std::ostream* log) {
  const data::Schema& schema = d.minor.schema;
  const text::Vocab vocab = text::build_vocab(schema);
  auto params = obtain_model(ocfg, schema, vocab, d.major, d.minor, seed, cfg.sig_digits, cache, log);

  Rng prompt_rng(derive_seed(seed, kPromptStream));
  std::vector<text::TokenSeq> prompts;
  prompts.reserve(cfg.entropy_samples);
  for (std::size_t i = 0; i < cfg.entropy_samples; ++i)
    prompts.push_back(oversample::build_prompt(condition, schema, d.minor, vocab, prompt_rng, cfg.sig_digits));

  const lm::SamplerConfig scfg{ocfg.temperature, std::nullopt};
  eval::StepEntropy se = eval::per_step_entropy(*params, prompts, scfg, schema, vocab, derive_seed(seed, kEntropyStream));
  const data::Table samples{schema, std::move(se.rows)};
  eval::EntropyReport rep;
  rep.label = label;
  rep.seed = seed;
  rep.mean_per_step_entropy = se.mean_per_step_entropy;
  rep.first_field_entropy = se.first_field_entropy;
  rep.sample_set_entropy = eval::sample_set_entropy(samples, eval::Discretizer::fit(d.minor_star));
  if (log != nullptr)
    *log << "entropy " << label << " seed=" << seed << " step=" << rep.mean_per_step_entropy
         << " first=" << rep.first_field_entropy << " set=" << rep.sample_set_entropy << "\n";
  return rep;
}

json entropy_lab(const RunConfig& cfg, const PreparedData& d, oversample::ModelCache* cache, std::ostream* log) {
  const OversampleConfig& base = cfg.oversample;
  auto measure = [&](const std::string& label, const OversampleConfig& ocfg, ConditionStrategy c, std::uint64_t seed) {
    return measure_entropy(cfg, d, ocfg, c, label, seed, cache, log);
  };
  std::vector<eval::EntropyReport> p1, p2, p3;
  for (std::uint64_t seed : cfg.seeds) {
    p1.push_back(measure("condition_y", base, ConditionStrategy::condition_y, seed));
    p1.push_back(measure("condition_yx", base, ConditionStrategy::condition_yx, seed));

    OversampleConfig fix = base, perm = base;
    fix.permutation = Permutation::fix_y;
    perm.permutation = Permutation::permute_xy;
    p2.push_back(measure("fix_y", fix, ConditionStrategy::condition_y, seed));
    p2.push_back(measure("permute_xy", perm, ConditionStrategy::condition_y, seed));

    OversampleConfig only = base, inter = base;
    only.finetune = FinetuneSet::minor_only;
    inter.finetune = FinetuneSet::minor_interpolate;
    p3.push_back(measure("minor_only", only, base.condition, seed));
    p3.push_back(measure("minor_interpolate", inter, base.condition, seed));
  }
  json out;
  out["prop1"] = entropy_block("one model prompted with condition_y vs condition_yx", "condition_y",
                               "condition_yx", p1);
  out["prop2"] = entropy_block("fix_y vs permute_xy trained models prompted with the minority label", "fix_y",
                               "permute_xy", p2);
  out["prop3"] = entropy_block("minor_only vs minor_interpolate fine-tuning", "minor_only", "minor_interpolate", p3);
  out["seeds"] = cfg.seeds;
  out["samples_per_seed"] = cfg.entropy_samples;
  return out;
}

std::vector<SweepRow> sweep(const RunConfig& cfg, SweepParam param, const std::vector<double>& values,
                            oversample::ModelCache* cache, std::ostream* log) {
  for (double v : values) {
    if (param == SweepParam::q && !(v > 0.0 && v <= 1.0)) throw std::invalid_argument("q sweep values must lie in (0, 1]");
    if (param == SweepParam::r && !(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("r sweep values must lie in [0, 1]");
  }
  std::optional<PreparedData> fixed;
  if (param == SweepParam::r) fixed = prepare(cfg);
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = cfg;
    if (param == SweepParam::r) {
      c.method = Method::imbllm;
      c.oversample.finetune = FinetuneSet::minor_interpolate;
      c.oversample.r = v;
    } else {
      c.imbalance.q = v;
    }
    const PreparedData d = fixed ? *fixed : prepare(c);
    if (log != nullptr) *log << "sweep value " << v << "\n";
    const eval::EvalReport rep = evaluate(c, d, cache, log);
    rows.push_back({v, rep.f1, rep.f1_std});
  }
  return rows;
}

void dump_sentences(const data::Table& table, Permutation permutation, std::uint64_t seed, int sig_digits,
                    std::ostream& out) {
  Rng rng(seed);
  for (const auto& row : table.rows) {
    const text::Sentence s = text::row_to_sentence(row, table.schema, true, sig_digits);
    out << text::render(text::permute_sentence(s, table.schema.target_name, permutation, rng)) << "\n";
  }
}

// ----------------------------------------------------------------- commands

int cmd_fixture(const FixtureArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const data::Table table = data::generate_fixture(args.n_major, args.n_minor, args.m_con, args.m_cat, args.seed);
    fs::create_directories(args.out);
    data::save_csv(args.out / "data.csv", table);
    data::save_schema(args.out / "schema.json", table.schema);
    out << "wrote " << (args.out / "data.csv").string() << " and " << (args.out / "schema.json").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "fixture: " << e.what() << "\n";
    return 1;
  }
}

int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache) {
  std::unique_ptr<OutputDir> dir;
  try {
    dir = std::make_unique<OutputDir>(cfg.out, "run");
    cfg.validate();
    write_json(*dir / "config.echo.json", json(cfg));
    const PreparedData d = prepare(cfg);
    dir->log() << "major=" << d.major.rows.size() << " minor=" << d.minor.rows.size()
               << " minor_star=" << d.minor_star.rows.size() << " test=" << d.test.rows.size() << "\n";

    std::optional<lm::LMParams> first_model;
    const std::uint64_t first_seed = cfg.seeds.front();
    const eval::EvalReport rep = evaluate(cfg, d, cache, &dir->log(), [&](std::uint64_t seed, const lm::LMParams& p) {
      if (seed == first_seed && !first_model) first_model = p;
    });

    write_json(*dir / "report.json", json(rep));
    std::ostringstream csv;
    csv << "bin_lo,bin_hi,count\n";
    if (rep.dcr)
      for (std::size_t b = 0; b < rep.dcr->counts.size(); ++b)
        csv << num(rep.dcr->edges[b]) << "," << num(rep.dcr->edges[b + 1]) << "," << rep.dcr->counts[b] << "\n";
    write_text(*dir / "dcr.csv", csv.str());
    if (is_llm_method(cfg.method)) {
      if (!first_model) throw std::runtime_error("no model was trained for the first seed");
      lm::save_checkpoint(*first_model, *dir / "checkpoint.imblm");
    }
    out << rep.method << " f1=" << rep.f1 << " +/- " << rep.f1_std << " auc=" << rep.auc << " +/- " << rep.auc_std
        << "\n";
    dir->done();
    return 0;
  } catch (const std::exception& e) {
    err << "run: " << e.what() << "\n";
    if (dir) dir->fail(e.what());
    return 1;
  }
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache) {
  std::unique_ptr<OutputDir> dir;
  try {
    dir = std::make_unique<OutputDir>(cfg.out, "ablate");
    cfg.validate();
    write_json(*dir / "config.echo.json", json(cfg));
    const PreparedData d = prepare(cfg);
    const auto rows = ablation_grid(cfg, d, cache, &dir->log());

    std::ostringstream csv;
    csv << "label,condition,permutation,finetune,status,mean_f1,std_f1\n";
    json grid = json::array();
    bool all_ok = true;
    for (const auto& r : rows) {
      all_ok = all_ok && r.ok;
      csv << r.label << "," << oversample::to_string(r.condition) << "," << text::to_string(r.permutation) << ","
          << oversample::to_string(r.finetune) << "," << (r.ok ? "ok" : "failed") << ","
          << (r.ok ? num(r.mean_f1) : "") << "," << (r.ok ? num(r.std_f1) : "") << "\n";
      json cell = {{"label", r.label},
                   {"condition", oversample::to_string(r.condition)},
                   {"permutation", text::to_string(r.permutation)},
                   {"finetune", oversample::to_string(r.finetune)},
                   {"status", r.ok ? "ok" : "failed"}};
      if (r.ok) {
        cell["mean_f1"] = r.mean_f1;
        cell["std_f1"] = r.std_f1;
      } else {
        cell["error"] = r.error;
      }
      grid.push_back(std::move(cell));
    }
    write_text(*dir / "grid.csv", csv.str());
    write_json(*dir / "grid.json", {{"seeds", cfg.seeds}, {"cells", grid}});
    out << csv.str();
    if (!all_ok) {
      dir->fail("one or more grid cells failed");
      return 1;
    }
    dir->done();
    return 0;
  } catch (const std::exception& e) {
    err << "ablate: " << e.what() << "\n";
    if (dir) dir->fail(e.what());
    return 1;
  }
}

int cmd_entropy(const RunConfig& cfg, std::ostream& out, std::ostream& err, oversample::ModelCache* cache) {
  std::unique_ptr<OutputDir> dir;
  try {
    dir = std::make_unique<OutputDir>(cfg.out, "entropy");
    cfg.validate();
    write_json(*dir / "config.echo.json", json(cfg));
    const PreparedData d = prepare(cfg);
    const json report = entropy_lab(cfg, d, cache, &dir->log());
    write_json(*dir / "entropy.json", report);
    for (const char* key : {"prop1", "prop2", "prop3"}) out << key << " " << report[key]["mean"].dump() << "\n";
    dir->done();
    return 0;
  } catch (const std::exception& e) {
    err << "entropy: " << e.what() << "\n";
    if (dir) dir->fail(e.what());
    return 1;
  }
}

int cmd_sweep(const RunConfig& cfg, SweepParam param, const std::vector<double>& values, std::ostream& out,
              std::ostream& err, oversample::ModelCache* cache) {
  std::unique_ptr<OutputDir> dir;
  try {
    dir = std::make_unique<OutputDir>(cfg.out, "sweep");
    cfg.validate();
    if (values.empty()) throw std::invalid_argument("no sweep values given");
    write_json(*dir / "config.echo.json", json(cfg));
    const auto rows = sweep(cfg, param, values, cache, &dir->log());
    std::ostringstream csv;
    csv << (param == SweepParam::r ? "r" : "q") << ",mean_f1,std_f1\n";
    for (const auto& r : rows) csv << num(r.value) << "," << num(r.mean_f1) << "," << num(r.std_f1) << "\n";
    write_text(*dir / "sweep.csv", csv.str());
    out << csv.str();
    dir->done();
    return 0;
  } catch (const std::exception& e) {
    err << "sweep: " << e.what() << "\n";
    if (dir) dir->fail(e.what());
    return 1;
  }
}

}  // namespace imbllm::cli

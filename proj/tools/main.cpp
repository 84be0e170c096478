// imbllm command-line driver: fixture, run, ablate, entropy, sweep.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "imbllm/commands.hpp"

namespace {

using imbllm::cli::RunConfig;

struct CommonFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> schema;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> method;
  std::optional<double> q;
  std::optional<double> r;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> steps;
  bool dump_sentences = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", f.out, "output directory");
  cmd->add_option("--data", f.data, "data CSV");
  cmd->add_option("--schema", f.schema, "schema JSON");
  cmd->add_option("--seed,--seeds", f.seeds, "evaluation seeds (comma separated)")->delimiter(',');
  cmd->add_option("--method", f.method, "imbllm|imbllm_inter|great_equiv|smote|smote_nc|imbalance_null");
  cmd->add_option("--q", f.q, "imbalance ratio");
  cmd->add_option("--r", f.r, "interpolation ratio");
  cmd->add_option("--epochs", f.epochs, "fine-tuning epochs (clears any step budget)");
  cmd->add_option("--steps", f.steps, "fine-tuning optimizer steps (overrides epochs)");
  cmd->add_flag("--dump-sentences", f.dump_sentences, "print the serialized data set and exit");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    nlohmann::json j = nlohmann::json::parse(in);
    cfg = j.get<RunConfig>();
  }
  if (f.out) cfg.out = *f.out;
  if (f.data) cfg.data = *f.data;
  if (f.schema) cfg.schema = *f.schema;
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (f.method) cfg.method = imbllm::cli::parse_method(*f.method);
  if (f.q) cfg.imbalance.q = *f.q;
  if (f.r) cfg.oversample.r = *f.r;
  if (f.epochs) {
    cfg.oversample.train.epochs = *f.epochs;
    cfg.oversample.train.steps = 0;
  }
  if (f.steps) cfg.oversample.train.steps = *f.steps;
  return cfg;
}

int dump(const RunConfig& cfg) {
  const auto schema = imbllm::data::load_schema(cfg.schema);
  const auto table = imbllm::data::load_csv(cfg.data, schema);
  imbllm::cli::dump_sentences(table, cfg.oversample.permutation, cfg.seeds.front(), cfg.sig_digits, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-model oversampling for imbalanced tabular data"};
  app.require_subcommand(1);

  imbllm::cli::FixtureArgs fx;
  std::string fx_out = "fixture";
  auto* fixture = app.add_subcommand("fixture", "write a synthetic two-class data set and its schema");
  fixture->add_option("--major", fx.n_major, "majority rows");
  fixture->add_option("--minor", fx.n_minor, "minority rows");
  fixture->add_option("--con", fx.m_con, "continuous features");
  fixture->add_option("--cat", fx.m_cat, "categorical features");
  fixture->add_option("--seed", fx.seed, "generator seed");
  fixture->add_option("-o,--out", fx_out, "output directory");

  CommonFlags run_f, ablate_f, entropy_f, sweep_f;
  auto* run = app.add_subcommand("run", "oversample, train the classifier, and score one method");
  add_common(run, run_f);
  auto* ablate = app.add_subcommand("ablate", "evaluate all 12 strategy combinations");
  add_common(ablate, ablate_f);
  auto* entropy = app.add_subcommand("entropy", "entropy comparisons for the three strategy choices");
  add_common(entropy, entropy_f);
  auto* sweep_cmd = app.add_subcommand("sweep", "F1 across values of q or r");
  add_common(sweep_cmd, sweep_f);
  std::string sweep_param;
  std::vector<double> sweep_values;
  sweep_cmd->add_option("--param", sweep_param, "q or r")->required()->check(CLI::IsMember({"q", "r"}));
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fixture) {
      fx.out = fx_out;
      return imbllm::cli::cmd_fixture(fx, std::cout, std::cerr);
    }
    if (*run) {
      const RunConfig cfg = resolve(run_f);
      if (run_f.dump_sentences) return dump(cfg);
      return imbllm::cli::cmd_run(cfg, std::cout, std::cerr);
    }
    if (*ablate) {
      const RunConfig cfg = resolve(ablate_f);
      if (ablate_f.dump_sentences) return dump(cfg);
      return imbllm::cli::cmd_ablate(cfg, std::cout, std::cerr);
    }
    if (*entropy) {
      const RunConfig cfg = resolve(entropy_f);
      if (entropy_f.dump_sentences) return dump(cfg);
      return imbllm::cli::cmd_entropy(cfg, std::cout, std::cerr);
    }
    const RunConfig cfg = resolve(sweep_f);
    if (sweep_f.dump_sentences) return dump(cfg);
    const auto param = sweep_param == "q" ? imbllm::cli::SweepParam::q : imbllm::cli::SweepParam::r;
    return imbllm::cli::cmd_sweep(cfg, param, sweep_values, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

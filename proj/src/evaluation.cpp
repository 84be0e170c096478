#include "imbllm/eval.hpp"
#include "imbllm/oversample.hpp"

namespace imbllm::eval {

EvalReport run_evaluation(const Table& major, const Table& minor, const Table& minor_star, const Table& test,
                          std::string method_name, const Oversampler& method, std::span<const std::uint64_t> seeds,
                          const GBDTConfig& gbdt, const EvalOptions& options) {
  if (!(major.schema == minor.schema) || !(major.schema == minor_star.schema) || !(major.schema == test.schema))
    throw EvalError("run_evaluation: schema mismatch");
  if (seeds.empty()) throw EvalError("run_evaluation: no seeds");
  const auto& schema = major.schema;
  const Table test_minor = data::select_label(test, schema.minority_label);
  const auto truth = labels_of(test);
  const MixedEncoder real_encoder = MixedEncoder::fit(minor_star);
  const Discretizer discretizer = Discretizer::fit(minor_star);

  EvalReport report;
  report.method = std::move(method_name);
  report.seeds.assign(seeds.begin(), seeds.end());
  for (auto seed : seeds) {
    SeedScores s;
    s.seed = seed;
    auto synth = method(major, minor, major.size(), seed);
    Table train = synth ? oversample::rebalance(major, *synth, seed) : oversample::rebalance(major, minor, seed);

    GBDTConfig cfg = gbdt;
    cfg.seed = seed;
    const auto model = fit_gbdt(train, cfg, MixedEncoder::fit(train));
    const auto proba = model.predict_proba(test);
    const auto preds = model.predict(test);
    s.f1 = f1_minority(preds, truth, schema.minority_label);
    s.auc = auc(proba, truth, schema.minority_label);

    if (synth) {
      s.synthetic_count = synth->size();
      if (!synth->empty()) {
        s.close_probability = close_probability(minor_star, *synth, options.alpha, real_encoder);
        s.coverage = coverage(minor_star, *synth, options.coverage_k, real_encoder);
        s.sample_set_entropy = sample_set_entropy(*synth, discretizer);
        if (!test_minor.empty()) s.dcr = dcr_histogram(test_minor, *synth, real_encoder, options.dcr_bins);
      }
    }
    report.per_seed.push_back(std::move(s));
  }

  auto collect = [&](auto getter) {
    std::vector<double> xs;
    for (const auto& s : report.per_seed)
      if (auto v = getter(s)) xs.push_back(*v);
    return xs;
  };
  const auto f1s = collect([](const SeedScores& s) { return std::optional<double>(s.f1); });
  const auto aucs = collect([](const SeedScores& s) { return std::optional<double>(s.auc); });
  std::tie(report.f1, report.f1_std) = mean_std(f1s);
  std::tie(report.auc, report.auc_std) = mean_std(aucs);
  const auto closes = collect([](const SeedScores& s) { return s.close_probability; });
  if (!closes.empty()) {
    auto [m, sd] = mean_std(closes);
    report.close_probability = m;
    report.close_probability_std = sd;
  }
  const auto covs = collect([](const SeedScores& s) { return s.coverage; });
  if (!covs.empty()) {
    auto [m, sd] = mean_std(covs);
    report.coverage = m;
    report.coverage_std = sd;
  }
  if (report.per_seed.front().dcr) report.dcr = report.per_seed.front().dcr;
  return report;
}

}  // namespace imbllm::eval

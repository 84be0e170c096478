#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "imbllm/data.hpp"
#include "imbllm/eval.hpp"
#include "imbllm/lm.hpp"
#include "imbllm/oversample.hpp"
#include "imbllm/rng.hpp"
#include "imbllm/textcodec.hpp"
#include "test_helpers.hpp"

using namespace imbllm;
using namespace imbllm::eval;
using testing_support::income_schema;

namespace {

Row income_row(const std::string& edu, const std::string& job, double wh, const std::string& label = ">=200K") {
  return Row{{edu, job, wh}, label};
}

Table income_table(std::vector<Row> rows) { return Table{income_schema(), std::move(rows)}; }

Table random_income(std::size_t n, Rng& rng, double lo = 20, double hi = 60) {
  const Schema s = income_schema();
  Table t{s, {}};
  for (std::size_t i = 0; i < n; ++i)
    t.rows.push_back(income_row(s.features[0].categories[rng.below(3)], s.features[1].categories[rng.below(2)],
                                std::round(lo + (hi - lo) * rng.uniform())));
  return t;
}

// Plain nested-loop references.
double brute_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double brute_nearest(const std::vector<double>& x, const std::vector<std::vector<double>>& pool) {
  double best = INFINITY;
  for (const auto& y : pool) best = std::min(best, brute_distance(x, y));
  return best;
}

double brute_close(const Table& real, const Table& synth, double alpha, const MixedEncoder& enc) {
  const auto s = enc.encode(synth);
  std::size_t hits = 0;
  for (const auto& r : real.rows) hits += brute_nearest(enc.encode(r), s) / std::sqrt(double(enc.width())) <= alpha;
  return double(hits) / double(real.size());
}

double brute_coverage(const Table& real, const Table& synth, std::size_t k, const MixedEncoder& enc) {
  const auto x = enc.encode(real), s = enc.encode(synth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (j != i) d.push_back(brute_distance(x[i], x[j]));
    std::sort(d.begin(), d.end());
    bool in = false;
    for (const auto& y : s) in = in || brute_distance(x[i], y) <= d[k - 1];
    hits += in;
  }
  return double(hits) / double(x.size());
}

double brute_auc(const std::vector<double>& scores, const std::vector<std::string>& truth, const std::string& pos) {
  double wins = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) (truth[i] == pos ? np : nn) += 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (truth[i] == pos && truth[j] != pos) wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
  return wins / (np * nn);
}

}  // namespace

TEST_CASE("mixed encoder layout and clipping") {
  const Table ref = income_table({income_row("Bachelor", "Sales", 20), income_row("Doctor", "Doctor", 60)});
  const MixedEncoder enc = MixedEncoder::fit(ref);
  CHECK(enc.width() == 1 + 3 + 2);
  CHECK(enc.encode(income_row("Master", "Doctor", 30)) == std::vector<double>{0.25, 0, 1, 0, 0, 1});
  CHECK(enc.encode(income_row("Master", "Doctor", 100))[0] == 1.0);
  CHECK(enc.encode(income_row("Master", "Doctor", -5))[0] == 0.0);

  const MixedEncoder flat = MixedEncoder::fit(income_table({income_row("Master", "Sales", 40)}));
  CHECK(flat.encode(income_row("Master", "Sales", 90))[0] == 0.0);
  CHECK(squared_distance(std::vector<double>{0, 1}, std::vector<double>{3, 5}) == 25.0);
}

TEST_CASE("f1 with the minority as positive class") {
  const std::vector<std::string> truth{"1", "1", "0", "0"};
  CHECK(f1_minority(truth, truth, "1") == 1.0);
  CHECK(f1_minority(std::vector<std::string>{"1", "0", "1", "0"}, truth, "1") == 0.5);
  CHECK(f1_minority(std::vector<std::string>{"0", "0", "0", "0"}, truth, "1") == 0.0);
  CHECK_THROWS_AS(f1_minority(std::vector<std::string>{}, std::vector<std::string>{}, "1"), EvalError);
  CHECK_THROWS_AS(f1_minority(std::vector<std::string>{"1"}, truth, "1"), EvalError);
}

TEST_CASE("auc examples and pairwise oracle") {
  CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<std::string>{"1", "0"}, "1") == 1.0);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<std::string>{"1", "0", "0"}, "1") == 0.5);
  const std::vector<double> five{0.8, 0.4, 0.4, 0.1, 0.6};
  const std::vector<std::string> t5{"1", "0", "1", "0", "0"};
  CHECK(auc(five, t5, "1") == brute_auc(five, t5, "1"));
  CHECK_THROWS_AS(auc(std::vector<double>{0.2}, std::vector<std::string>{"1"}, "1"), EvalError);

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> s(n);
    std::vector<std::string> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng.below(6));
      t[i] = i < 2 ? std::to_string(i) : std::to_string(rng.below(2));
    }
    CHECK(auc(s, t, "1") == brute_auc(s, t, "1"));
    // Renaming both labels keeps the score when the positive class follows.
    std::vector<std::string> renamed(n);
    for (std::size_t i = 0; i < n; ++i) renamed[i] = t[i] == "1" ? "pos" : "neg";
    CHECK(auc(s, renamed, "pos") == auc(s, t, "1"));
  }
}

TEST_CASE("close probability examples and oracle") {
  Rng rng(1);
  const Table real = random_income(6, rng);
  const MixedEncoder enc = MixedEncoder::fit(real);
  CHECK(close_probability(real, real, 0.2, enc) == 1.0);

  // Opposite in every channel: continuous beyond the far end, every one-hot flipped.
  Table far = income_table({income_row("Bachelor", "Sales", 1000)});
  Table real_near = income_table({income_row("Doctor", "Doctor", 20), income_row("Doctor", "Doctor", 21)});
  CHECK(close_probability(real_near, far, 0.2, MixedEncoder::fit(real_near)) == 0.0);

  const Table synth = random_income(5, rng, 10, 70);
  CHECK(close_probability(real, synth, 0.2, enc) == brute_close(real, synth, 0.2, enc));
  CHECK_THROWS_AS(close_probability(real, Table{real.schema, {}}, 0.2, enc), EvalError);
}

TEST_CASE("coverage examples and oracle") {
  Rng rng(2);
  const Table real = random_income(8, rng);
  const MixedEncoder enc = MixedEncoder::fit(real);
  CHECK(coverage(real, real, 2, enc) == 1.0);
  const Table far = income_table({income_row("Bachelor", "Sales", 5000)});
  CHECK(coverage(real, far, 2, enc) == brute_coverage(real, far, 2, enc));
  const Table synth = random_income(4, rng);
  CHECK(coverage(real, synth, 2, enc) == brute_coverage(real, synth, 2, enc));
  CHECK_THROWS_AS(coverage(random_income(2, rng), synth, 2, enc), EvalError);
  CHECK_THROWS_AS(coverage(real, synth, 0, enc), EvalError);
}

TEST_CASE("metric invariants on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const Table real = random_income(3 + rng.below(18), rng);
    Table synth = random_income(1 + rng.below(15), rng, 0, 80);
    const MixedEncoder enc = MixedEncoder::fit(real);
    const double close = close_probability(real, synth, 0.2, enc);
    const double cov = coverage(real, synth, 2, enc);
    CHECK(close == brute_close(real, synth, 0.2, enc));
    CHECK(cov == brute_coverage(real, synth, 2, enc));

    Table shuffled_real = real, shuffled_synth = synth;
    rng.shuffle(shuffled_real.rows);
    rng.shuffle(shuffled_synth.rows);
    CHECK(close_probability(shuffled_real, shuffled_synth, 0.2, enc) == close);
    CHECK(coverage(shuffled_real, shuffled_synth, 2, enc) == cov);

    synth.rows.push_back(random_income(1, rng).rows[0]);
    CHECK(close_probability(real, synth, 0.2, enc) >= close);
    CHECK(coverage(real, synth, 2, enc) >= cov);
    CHECK(coverage(real, real, 2, enc) == 1.0);
  }
}

TEST_CASE("dcr histogram") {
  Rng rng(4);
  const Table test = random_income(5, rng);
  const Table synth = random_income(7, rng);
  const MixedEncoder enc = MixedEncoder::fit(test);
  const Histogram h = dcr_histogram(test, synth, enc, 20);
  const auto s = enc.encode(synth);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(h.distances[i] == brute_nearest(enc.encode(test.rows[i]), s));
  REQUIRE(h.edges.size() == 21);
  CHECK(h.edges.front() == 0.0);
  CHECK(h.edges.back() == *std::max_element(h.distances.begin(), h.distances.end()));
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == test.size());
  for (double d : h.distances) {
    std::size_t b = 0;
    while (b + 1 < 20 && d >= h.edges[b + 1]) ++b;
    CHECK(h.counts[b] >= 1);
  }

  const Histogram self = dcr_histogram(test, test, enc, 20);
  CHECK(self.counts[0] == test.size());
  CHECK(self.edges.back() == 0.0);
  CHECK_THROWS_AS(dcr_histogram(Table{test.schema, {}}, synth, enc, 20), EvalError);
  CHECK_THROWS_AS(dcr_histogram(test, synth, enc, 0), EvalError);
}

TEST_CASE("sample-set entropy") {
  const Table ref = income_table({income_row("Master", "Sales", 0), income_row("Master", "Sales", 100)});
  const Discretizer disc = Discretizer::fit(ref);
  CHECK(disc.symbol(income_row("Doctor", "Sales", 55)) == std::vector<std::size_t>{2, 0, 5});
  CHECK(disc.symbol(income_row("Doctor", "Sales", 100))[2] == 9);
  CHECK(disc.symbol(income_row("Doctor", "Sales", 500))[2] == 9);
  CHECK(disc.symbol(income_row("Doctor", "Sales", -500))[2] == 0);

  const Row a = income_row("Master", "Sales", 5), b = income_row("Doctor", "Sales", 5),
            c = income_row("Master", "Sales", 95);
  CHECK(sample_set_entropy(income_table({a, a, a}), disc) == 0.0);
  CHECK(sample_set_entropy(income_table({a, b, c}), disc) == doctest::Approx(std::log(3.0)));
  // Same bin counts as the same symbol.
  CHECK(sample_set_entropy(income_table({a, income_row("Master", "Sales", 6), b, c}), disc) ==
        doctest::Approx(1.0397).epsilon(1e-4));
  CHECK_THROWS_AS(sample_set_entropy(income_table({}), disc), EvalError);
}

TEST_CASE("per-step entropy") {
  // One single-category feature: every generated step is forced.
  Schema forced;
  forced.features = {data::Feature{"k", data::FeatureKind::categorical, {"only"}}};
  forced.target_name = "y";
  forced.target_labels = {"0", "1"};
  forced.minority_label = "1";
  const text::Vocab fv = text::build_vocab(forced);
  lm::LMConfig c;
  c.vocab_size = fv.size();
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_k = 8;
  c.d_ff = 32;
  c.max_len = 64;
  const lm::LMParams p = lm::init_params(c, 0);
  Rng rng(0);
  const Table none{forced, {}};
  const std::vector<text::TokenSeq> prompts{
      oversample::build_prompt(oversample::ConditionStrategy::condition_y, forced, none, fv, rng)};
  const StepEntropy fz = per_step_entropy(p, prompts, lm::SamplerConfig{1.0, std::nullopt}, forced, fv, 0);
  CHECK(fz.mean_per_step_entropy == 0.0);
  CHECK(fz.first_field_entropy == 0.0);
  REQUIRE(fz.rows.size() == 1);
  CHECK(fz.rows[0].label == "1");

  CHECK(lm::entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)));

  // Fixture schema: entropies are bounded by ln of the vocabulary size and grow with temperature.
  const Table fx = data::generate_fixture(10, 20, 2, 1, 3);
  const Table minor = data::select_label(fx, "1");
  const text::Vocab vocab = text::build_vocab(fx.schema);
  c.vocab_size = vocab.size();
  const lm::LMParams q = lm::init_params(c, 1);
  std::vector<text::TokenSeq> many;
  for (int i = 0; i < 20; ++i)
    many.push_back(oversample::build_prompt(oversample::ConditionStrategy::condition_yx, fx.schema, minor, vocab, rng));
  const auto cold = per_step_entropy(q, many, lm::SamplerConfig{0.5, std::nullopt}, fx.schema, vocab, 7);
  const auto warm = per_step_entropy(q, many, lm::SamplerConfig{1.0, std::nullopt}, fx.schema, vocab, 7);
  CHECK(warm.rows.size() == many.size());
  CHECK(warm.mean_per_step_entropy > 0.0);
  CHECK(warm.mean_per_step_entropy <= std::log(double(vocab.size())));
  CHECK(warm.first_field_entropy > cold.first_field_entropy);
  // condition_yx prompts leave two fields; the first choice is among them.
  CHECK(warm.first_field_entropy <= std::log(2.0) + 1e-12);
  CHECK_THROWS_AS(per_step_entropy(q, std::vector<text::TokenSeq>{}, {}, fx.schema, vocab, 0), EvalError);
}

TEST_CASE("gradient-boosted trees") {
  Schema s;
  s.features = {data::Feature{"a", data::FeatureKind::continuous, {}},
                data::Feature{"b", data::FeatureKind::continuous, {}}};
  s.target_name = "y";
  s.target_labels = {"0", "1"};
  s.minority_label = "1";
  Table train{s, {}};
  Rng rng(8);
  while (train.size() < 300) {
    const double a = rng.uniform(), b = rng.uniform();
    if (std::fabs(a + b - 1.0) < 0.05) continue;  // margin around the separating line
    train.rows.push_back(Row{{a, b}, a + b > 1.0 ? "1" : "0"});
  }
  const GBDTConfig cfg;
  const auto model = fit_gbdt(train, cfg, MixedEncoder::fit(train));
  const auto preds = model.predict(train);
  std::size_t right = 0;
  for (std::size_t i = 0; i < train.size(); ++i) right += preds[i] == train.rows[i].label;
  CHECK(double(right) / double(train.size()) >= 0.99);
  for (double q : model.predict_proba(train)) {
    CHECK(q > 0.0);
    CHECK(q < 1.0);
  }
  CHECK(model.trees().size() == cfg.n_rounds);
  for (const auto& tree : model.trees()) CHECK(tree.size() <= 15);  // depth 3

  const auto again = fit_gbdt(train, cfg, MixedEncoder::fit(train));
  CHECK(again.predict_proba(train) == model.predict_proba(train));

  CHECK_THROWS_AS(fit_gbdt(select_label(train, "1"), cfg, MixedEncoder::fit(train)), EvalError);
  GBDTConfig bad = cfg;
  bad.n_rounds = 0;
  CHECK_THROWS_AS(bad.validate(), EvalError);
  bad = cfg;
  bad.max_depth = 0;
  CHECK_THROWS_AS(bad.validate(), EvalError);
}

TEST_CASE("evaluation harness") {
  const Table full = data::generate_fixture(160, 60, 3, 1, 9);
  auto [train, test] = data::split_train_test(full, 0.25, 0);
  const auto split = data::make_imbalanced(train, {0.3, 0});
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  GBDTConfig g;
  g.n_rounds = 20;

  const Oversampler identity = [&](const Table&, const Table&, std::size_t, std::uint64_t) {
    return std::optional<Table>(split.minor_star);
  };
  const EvalReport id = run_evaluation(split.major, split.minor, split.minor_star, test, "identity", identity, seeds, g);
  CHECK(id.method == "identity");
  REQUIRE(id.per_seed.size() == 3);
  REQUIRE(id.close_probability);
  CHECK(*id.close_probability == 1.0);
  CHECK(*id.coverage == 1.0);
  REQUIRE(id.dcr);
  CHECK(std::accumulate(id.dcr->counts.begin(), id.dcr->counts.end(), std::size_t{0}) ==
        data::select_label(test, "1").size());

  const Oversampler null = [](const Table&, const Table&, std::size_t, std::uint64_t) {
    return std::optional<Table>();
  };
  const EvalReport nr = run_evaluation(split.major, split.minor, split.minor_star, test, "imbalance_null", null, seeds, g);
  CHECK(nr.per_seed.size() == 3);
  CHECK_FALSE(nr.close_probability);
  CHECK_FALSE(nr.coverage);
  CHECK_FALSE(nr.dcr);
  for (const auto& s : nr.per_seed) {
    CHECK(s.f1 >= 0.0);
    CHECK(s.f1 <= 1.0);
    CHECK(s.auc >= 0.0);
    CHECK(s.auc <= 1.0);
    CHECK(s.synthetic_count == 0);
  }

  std::size_t asked = 0;
  const Oversampler smote = [&](const Table&, const Table& minor, std::size_t need, std::uint64_t seed) {
    asked = need;
    Rng rng(seed);
    return std::optional<Table>(oversample::smote(minor, need, 5, rng));
  };
  const EvalReport a = run_evaluation(split.major, split.minor, split.minor_star, test, "smote", smote, seeds, g);
  CHECK(asked == split.major.size());
  const EvalReport b = run_evaluation(split.major, split.minor, split.minor_star, test, "smote", smote, seeds, g);
  CHECK(a.f1 == b.f1);
  CHECK(a.auc == b.auc);
  std::vector<double> f1s;
  for (const auto& s : a.per_seed) f1s.push_back(s.f1);
  const auto [m, sd] = mean_std(f1s);
  CHECK(a.f1 == m);
  CHECK(a.f1_std == sd);

  CHECK(mean_std(std::vector<double>{1, 3}) == std::pair<double, double>{2.0, 1.0});
  CHECK_THROWS_AS(run_evaluation(split.major, split.minor, split.minor_star, test, "x", null, {}, g), EvalError);
}

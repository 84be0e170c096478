#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "imbllm/commands.hpp"
#include "imbllm/config_io.hpp"
#include "imbllm/data.hpp"
#include "imbllm/lm.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace imbllm;
using namespace imbllm::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "imbllm_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Small fixture on disk plus a configuration fast enough for unit tests.
RunConfig tiny_run(const fs::path& root) {
  FixtureArgs fx;
  fx.n_major = 120;
  fx.n_minor = 40;
  fx.m_con = 2;
  fx.m_cat = 1;
  fx.out = root / "fixture";
  std::ostringstream out, err;
  REQUIRE(cmd_fixture(fx, out, err) == 0);

  RunConfig c;
  c.data = fx.out / "data.csv";
  c.schema = fx.out / "schema.json";
  c.out = root / "out";
  c.imbalance.q = 0.3;
  c.seeds = {0};
  c.entropy_samples = 20;
  auto& lm = c.oversample.lm;
  lm.d_model = 16;
  lm.n_layers = 1;
  lm.n_heads = 2;
  lm.d_k = 8;
  lm.d_ff = 32;
  lm.max_len = 96;
  c.oversample.train.batch_size = 16;
  c.oversample.train.steps = 10;
  c.oversample.train.learning_rate = 1e-2;
  c.gbdt.n_rounds = 10;
  return c;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::imbllm, Method::imbllm_inter, Method::great_equiv, Method::smote, Method::smote_nc,
                   Method::imbalance_null})
    CHECK(parse_method(to_string(m)) == m);
  CHECK(is_llm_method(Method::imbllm));
  CHECK(is_llm_method(Method::great_equiv));
  CHECK_FALSE(is_llm_method(Method::smote_nc));
  CHECK_THROWS(parse_method("xgboost"));
}

TEST_CASE("method expansion") {
  oversample::OversampleConfig base;
  base.r = 0.7;
  const auto inter = expand_method(Method::imbllm_inter, base);
  CHECK(inter.finetune == oversample::FinetuneSet::minor_interpolate);
  CHECK(inter.r == 0.0);
  const auto ge = expand_method(Method::great_equiv, base);
  CHECK(ge.condition == oversample::ConditionStrategy::condition_y);
  CHECK(ge.permutation == text::Permutation::permute_xy);
  CHECK(ge.finetune == oversample::FinetuneSet::major_minor);
  const auto full = expand_method(Method::imbllm, base);
  CHECK(full.condition == base.condition);
  CHECK(full.r == 0.7);
}

TEST_CASE("run configuration JSON") {
  RunConfig c;
  c.data = "d.csv";
  c.method = Method::smote_nc;
  c.seeds = {4, 5};
  c.imbalance.q = 0.1;
  c.oversample.train.steps = 123;
  c.oversample.permutation = text::Permutation::permute_xy;
  c.metrics.dcr_bins = 7;
  const json j = c;
  const RunConfig back = j.get<RunConfig>();
  CHECK(json(back) == j);
  CHECK(back.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(back.oversample.train.steps == 123);

  const RunConfig partial = json::parse(R"({"seeds": [9], "oversample": {"r": 0.5}})").get<RunConfig>();
  CHECK(partial.seeds == std::vector<std::uint64_t>{9});
  CHECK(partial.oversample.r == 0.5);
  CHECK(partial.oversample.temperature == RunConfig{}.oversample.temperature);
  CHECK(partial.method == Method::imbllm);

  RunConfig bad;
  bad.seeds.clear();
  CHECK_THROWS(bad.validate());
  bad = RunConfig{};
  bad.imbalance.q = 0.0;
  CHECK_THROWS(bad.validate());
  bad = RunConfig{};
  bad.test_fraction = 1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("fixture command is deterministic and loadable") {
  const fs::path root = scratch("fixture");
  FixtureArgs fx;
  fx.out = root / "a";
  std::ostringstream out, err;
  REQUIRE(cmd_fixture(fx, out, err) == 0);
  const std::string first = slurp(fx.out / "data.csv");
  REQUIRE(cmd_fixture(fx, out, err) == 0);
  CHECK(slurp(fx.out / "data.csv") == first);

  const auto schema = data::load_schema(fx.out / "schema.json");
  const auto table = data::load_csv(fx.out / "data.csv", schema);
  const auto direct = data::generate_fixture(fx.n_major, fx.n_minor, fx.m_con, fx.m_cat, fx.seed);
  CHECK(table.schema == direct.schema);
  CHECK(table.rows == direct.rows);

  // 500 / 125 rows give 400 / 100 training rows and 20 minority rows at q = 0.2.
  RunConfig c;
  const PreparedData d = prepare(c, data::generate_fixture(500, 125, 4, 2, 0));
  CHECK(d.major.size() == 400);
  CHECK(d.minor_star.size() == 100);
  CHECK(d.minor.size() == 20);
  CHECK(d.test.size() == 125);
}

TEST_CASE("dump_sentences") {
  const auto t = data::generate_fixture(3, 2, 2, 1, 0);
  std::ostringstream os;
  dump_sentences(t, text::Permutation::fix_y, 0, 4, os);
  const auto lines = lines_of(os.str());
  REQUIRE(lines.size() == 5);
  for (const auto& l : lines) CHECK(l.rfind("y is ", 0) == 0);
}

TEST_CASE("run writes its artifacts") {
  const fs::path root = scratch("run");
  RunConfig c = tiny_run(root);

  c.method = Method::smote;
  c.out = root / "smote";
  std::ostringstream out, err;
  REQUIRE(cmd_run(c, out, err) == 0);
  CHECK(out.str().rfind("smote f1=", 0) == 0);
  for (const char* f : {"config.echo.json", "report.json", "dcr.csv", "run.log"}) CHECK(fs::exists(c.out / f));
  CHECK_FALSE(fs::exists(c.out / "FAILED"));
  CHECK_FALSE(fs::exists(c.out / "checkpoint.imblm"));
  const json rep = json::parse(slurp(c.out / "report.json"));
  for (const char* k : {"f1", "auc", "close_probability", "coverage", "per_seed", "dcr"}) CHECK(rep.contains(k));
  CHECK(rep["dcr"].contains("edges"));
  CHECK(rep["dcr"].contains("counts"));
  CHECK(lines_of(slurp(c.out / "dcr.csv")).size() == 1 + c.metrics.dcr_bins);
  CHECK(json::parse(slurp(c.out / "config.echo.json")).get<RunConfig>().method == Method::smote);

  c.method = Method::imbalance_null;
  c.out = root / "null";
  REQUIRE(cmd_run(c, out, err) == 0);
  const json nr = json::parse(slurp(c.out / "report.json"));
  CHECK_FALSE(nr.contains("close_probability"));
  CHECK(lines_of(slurp(c.out / "dcr.csv")).size() == 1);

  c.method = Method::imbllm;
  c.out = root / "llm";
  REQUIRE(cmd_run(c, out, err) == 0);
  const auto ckpt = lm::load_checkpoint(c.out / "checkpoint.imblm");
  CHECK(ckpt.config.d_model == 16);
  const json lr = json::parse(slurp(c.out / "report.json"));
  CHECK(lr["per_seed"][0]["synthetic_count"].get<std::size_t>() == prepare(c).major.size());
}

TEST_CASE("failed runs leave a FAILED marker that the next success clears") {
  const fs::path root = scratch("failed");
  RunConfig c = tiny_run(root);
  c.method = Method::smote;
  const fs::path good_data = c.data;
  c.data = root / "missing.csv";
  std::ostringstream out, err;
  CHECK(cmd_run(c, out, err) == 1);
  CHECK(fs::exists(c.out / "FAILED"));
  CHECK_FALSE(err.str().empty());
  CHECK(slurp(c.out / "run.log").find("FAILED") != std::string::npos);

  c.data = good_data;
  CHECK(cmd_run(c, out, err) == 0);
  CHECK_FALSE(fs::exists(c.out / "FAILED"));

  c.seeds.clear();
  CHECK(cmd_ablate(c, out, err) == 1);
  CHECK(fs::exists(c.out / "FAILED"));
}

TEST_CASE("sweep over q") {
  const fs::path root = scratch("sweep");
  RunConfig c = tiny_run(root);
  c.method = Method::smote;
  std::ostringstream out, err;
  REQUIRE(cmd_sweep(c, SweepParam::q, {0.2, 0.5, 1.0}, out, err) == 0);
  const auto lines = lines_of(slurp(c.out / "sweep.csv"));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "q,mean_f1,std_f1");
  CHECK(lines[1].rfind("0.2,", 0) == 0);
  CHECK(lines[3].rfind("1,", 0) == 0);
  CHECK(cmd_sweep(c, SweepParam::q, {}, out, err) == 1);
}

TEST_CASE("r sweep at zero matches the method without interpolation") {
  const fs::path root = scratch("sweep_r");
  RunConfig c = tiny_run(root);
  oversample::ModelCache cache;
  const auto rows = sweep(c, SweepParam::r, {0.0, 1.0}, &cache);
  REQUIRE(rows.size() == 2);
  RunConfig inter = c;
  inter.method = Method::imbllm_inter;
  const auto rep = evaluate(inter, prepare(c), nullptr);
  CHECK(rows[0].value == 0.0);
  CHECK(rows[0].mean_f1 == rep.f1);
  CHECK(rows[0].std_f1 == rep.f1_std);
}

TEST_CASE("ablation grid covers every combination") {
  const fs::path root = scratch("ablate");
  RunConfig c = tiny_run(root);
  const PreparedData d = prepare(c);
  oversample::ModelCache cache;
  const auto rows = ablation_grid(c, d, &cache);
  REQUIRE(rows.size() == 12);
  std::set<std::tuple<int, int, int>> combos;
  std::set<std::string> labels;
  for (const auto& r : rows) {
    CHECK(r.ok);
    combos.insert({int(r.condition), int(r.permutation), int(r.finetune)});
    labels.insert(r.label);
  }
  CHECK(combos.size() == 12);
  CHECK(labels.size() == 12);
  CHECK(labels.count("imbllm_full") == 1);
  CHECK(labels.count("great_equiv") == 1);

  // The grid cell and the stand-alone method agree.
  RunConfig ge = c;
  ge.method = Method::great_equiv;
  const auto rep = evaluate(ge, d, nullptr);
  for (const auto& r : rows)
    if (r.label == "great_equiv") CHECK(r.mean_f1 == rep.f1);
}

TEST_CASE("entropy command writes three comparison blocks") {
  const fs::path root = scratch("entropy");
  RunConfig c = tiny_run(root);
  std::ostringstream out, err;
  REQUIRE(cmd_entropy(c, out, err) == 0);
  const json j = json::parse(slurp(c.out / "entropy.json"));
  for (const char* block : {"prop1", "prop2", "prop3"}) {
    REQUIRE(j.contains(block));
    CHECK(j[block]["per_seed"].size() == 2 * c.seeds.size());
    CHECK(j[block]["mean"].size() == 2);
  }
  CHECK(j["samples_per_seed"] == c.entropy_samples);
}

#ifdef IMBLLM_CLI_PATH
TEST_CASE("command-line driver") {
  const fs::path root = scratch("driver");
  const std::string cli = IMBLLM_CLI_PATH;
  const std::string fx = (root / "fx").string();
  CHECK(std::system((cli + " fixture --major 20 --minor 10 -o " + fx + " > /dev/null").c_str()) == 0);
  CHECK(fs::exists(root / "fx" / "data.csv"));
  const std::string dump = (root / "dump.txt").string();
  CHECK(std::system((cli + " run --data " + fx + "/data.csv --schema " + fx + "/schema.json --dump-sentences > " +
                     dump)
                        .c_str()) == 0);
  CHECK(lines_of(slurp(dump)).size() == 30);
  CHECK(std::system((cli + " run --method nonsense --data x --schema y > /dev/null 2>&1").c_str()) != 0);
  CHECK(std::system((cli + " sweep --param z --values 1 > /dev/null 2>&1").c_str()) != 0);
  CHECK(std::system((cli + " > /dev/null 2>&1").c_str()) != 0);
}
#endif

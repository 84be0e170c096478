#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "doctest.h"
#include "imbllm/data.hpp"
#include "imbllm/lm.hpp"
#include "imbllm/rng.hpp"
#include "imbllm/textcodec.hpp"

using namespace imbllm;
using namespace imbllm::lm;

namespace {

LMConfig tiny_config(std::size_t vocab = 10) {
  LMConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_k = 4;
  c.d_ff = 16;
  c.max_len = 16;
  return c;
}

LMConfig small_config(std::size_t vocab) {
  LMConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_k = 8;
  c.d_ff = 32;
  c.max_len = 32;
  return c;
}

TokenSeq random_seq(Rng& rng, std::size_t len, std::size_t vocab) {
  TokenSeq s(len);
  for (auto& t : s) t = static_cast<TokenId>(rng.below(vocab));
  return s;
}

// Straightforward full-sequence reference: explicit masked score matrix,
// softmax over each row, dense matrix products. Row-vector convention
// (activations times weight matrices), matching the documented layout.
struct Reference {
  using M = Eigen::MatrixXd;
  const BasicParams<double>& p;
  ParamLayout lay;

  explicit Reference(const BasicParams<double>& params) : p(params), lay(params.config) {}

  M tensor(std::size_t off, std::size_t rows, std::size_t cols) const {
    M m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = p.values[off + r * cols + c];
    return m;
  }

  static M layer_norm(const M& x, const M& g, const M& b) {
    M out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).mean();
      const double var = (x.row(i).array() - mean).square().mean();
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        out(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
    }
    return out;
  }

  static double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
  }

  M logits(const TokenSeq& toks) const {
    const auto& c = p.config;
    const auto n = static_cast<Eigen::Index>(toks.size());
    const auto d = c.d_model;
    M x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      x.row(i) = tensor(lay.tok_emb + toks[i] * d, 1, d) + tensor(lay.pos_emb + i * d, 1, d);
    for (const auto& s : lay.layers) {
      const M a = layer_norm(x, tensor(s.ln1_g, 1, d), tensor(s.ln1_b, 1, d));
      const M q = a * tensor(s.wq, d, d), k = a * tensor(s.wk, d, d), v = a * tensor(s.wv, d, d);
      M att(n, d);
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h * c.d_k);
        const auto dk = static_cast<Eigen::Index>(c.d_k);
        M scores = q.middleCols(col, dk) * k.middleCols(col, dk).transpose() / std::sqrt(double(c.d_k));
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = i + 1; j < n; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mx = scores.row(i).maxCoeff();
          scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
          scores.row(i) /= scores.row(i).sum();
        }
        att.middleCols(col, dk) = scores * v.middleCols(col, dk);
      }
      x = x + att * tensor(s.wo, d, d);
      const M a2 = layer_norm(x, tensor(s.ln2_g, 1, d), tensor(s.ln2_b, 1, d));
      M u = a2 * tensor(s.w1, d, c.d_ff);
      for (Eigen::Index i = 0; i < n; ++i) u.row(i) += tensor(s.b1, 1, c.d_ff);
      u = u.unaryExpr([](double z) { return gelu(z); });
      M y = u * tensor(s.w2, c.d_ff, d);
      for (Eigen::Index i = 0; i < n; ++i) y.row(i) += tensor(s.b2, 1, d);
      x = x + y;
    }
    const M f = layer_norm(x, tensor(lay.lnf_g, 1, d), tensor(lay.lnf_b, 1, d));
    return f * tensor(lay.head, d, c.vocab_size);
  }

  double loss(const std::vector<TokenSeq>& batch) const {
    double total = 0;
    std::size_t count = 0;
    for (const auto& s : batch) {
      const M z = logits(s);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const double mx = z.row(i).maxCoeff();
        const double lse = std::log((z.row(i).array() - mx).exp().sum()) + mx;
        total += lse - z(i, s[i + 1]);
        ++count;
      }
    }
    return total / double(count);
  }
};

BasicParams<double> random_double_params(const LMConfig& c, std::uint64_t seed) {
  BasicParams<double> p(c);
  Rng rng(seed);
  const ParamLayout lay(c);
  for (const auto& t : lay.manifest) {
    const bool gain = t.name.ends_with(".g");
    for (std::size_t i = 0; i < t.rows * t.cols; ++i)
      p.values[t.offset + i] = (gain ? 1.0 : 0.0) + 0.5 * rng.normal();
  }
  return p;
}

}  // namespace

TEST_CASE("config validation") {
  LMConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.d_k = 3;
  CHECK_THROWS_AS(c.validate(), LMError);
  TrainConfig t;
  t.epochs = 0;
  CHECK_THROWS_AS(t.validate(), LMError);
}

TEST_CASE("init is deterministic, finite and scaled") {
  LMConfig c = small_config(40);
  c.d_model = 64;
  c.n_heads = 4;
  c.d_k = 16;
  const LMParams a = init_params(c, 1), b = init_params(c, 1), other = init_params(c, 2);
  CHECK(a.values == b.values);
  CHECK(a.values != other.values);
  for (float v : a.values) CHECK(std::isfinite(v));
  const ParamLayout lay(c);
  for (const auto& t : lay.manifest) {
    if (t.name.ends_with(".g")) {
      for (std::size_t i = 0; i < t.rows * t.cols; ++i) CHECK(a.values[t.offset + i] == 1.0f);
    } else if (t.name.ends_with("attn.wq") || t.name == "tok_emb") {
      double ss = 0;
      for (std::size_t i = 0; i < t.rows * t.cols; ++i) ss += double(a.values[t.offset + i]) * a.values[t.offset + i];
      const double sd = std::sqrt(ss / double(t.rows * t.cols));
      CHECK(sd == doctest::Approx(1.0 / 8.0).epsilon(0.1));
    }
  }
}

TEST_CASE("forward matches a dense reference implementation") {
  const LMConfig c = small_config(12);
  const BasicParams<double> p = random_double_params(c, 4);
  const Reference ref(p);
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const TokenSeq s = random_seq(rng, 1 + rng.below(20), c.vocab_size);
    const auto got = forward<double>(p, s);
    const auto want = ref.logits(s);
    REQUIRE(got.rows() == want.rows());
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("forward shape and length limit") {
  const LMConfig c = tiny_config();
  const LMParams p = init_params(c, 0);
  const TokenSeq one{3};
  const auto z = forward<float>(p, one);
  CHECK(z.rows() == 1);
  CHECK(z.cols() == 10);
  CHECK_THROWS_AS(forward<float>(p, TokenSeq(c.max_len + 1, 0)), LMError);
  CHECK_THROWS_AS(forward<float>(p, TokenSeq{99}), LMError);
}

TEST_CASE("causality under random future perturbations") {
  const LMConfig c = small_config(20);
  const LMParams p = init_params(c, 3);
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + rng.below(c.max_len - 1);
    TokenSeq s = random_seq(rng, len, c.vocab_size);
    const std::size_t k = 1 + rng.below(len - 1);
    const auto before = forward<float>(p, s);
    for (std::size_t j = k; j < len; ++j) s[j] = static_cast<TokenId>(rng.below(c.vocab_size));
    const auto after = forward<float>(p, s);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t v = 0; v < c.vocab_size; ++v)
        CHECK(std::memcmp(&before(i, v), &after(i, v), sizeof(float)) == 0);
  }
}

TEST_CASE("attention rows are distributions over the visible prefix") {
  const LMConfig c = small_config(20);
  const LMParams p = init_params(c, 5);
  Decoder<float> dec(p);
  Rng rng(2);
  for (auto t : random_seq(rng, 12, c.vocab_size)) dec.push(t);
  for (std::size_t l = 0; l < c.n_layers; ++l)
    for (std::size_t h = 0; h < c.n_heads; ++h)
      for (std::size_t pos = 0; pos < 12; ++pos) {
        const auto w = dec.attention(l, h, pos);
        CHECK(w.size() == pos + 1);
        double sum = 0;
        for (float x : w) {
          CHECK(x >= 0.0f);
          sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
}

TEST_CASE("initial loss is close to ln V on the fixture vocabulary") {
  const data::Table t = data::generate_fixture(30, 30, 4, 2, 0);
  const text::Vocab vocab = text::build_vocab(t.schema);
  std::vector<TokenSeq> batch;
  for (const auto& r : t.rows) batch.push_back(text::encode(text::row_to_sentence(r, t.schema, true), vocab));
  LMConfig c;
  c.vocab_size = vocab.size();
  const double ln_v = std::log(double(vocab.size()));
  for (std::uint64_t seed : {0, 1, 2}) CHECK(std::fabs(nll_loss<float>(init_params(c, seed), batch) - ln_v) <= 0.1);
}

TEST_CASE("loss of a repeated sequence equals the single loss") {
  const LMConfig c = tiny_config();
  const LMParams p = init_params(c, 1);
  const TokenSeq s{0, 4, 5, 6, 1};
  const std::vector<TokenSeq> one{s}, four{s, s, s, s};
  CHECK(nll_loss<float>(p, four) == doctest::Approx(nll_loss<float>(p, one)).epsilon(1e-12));
  CHECK_THROWS_AS(nll_loss<float>(p, std::vector<TokenSeq>{}), LMError);
  CHECK_THROWS_AS(nll_loss<float>(p, std::vector<TokenSeq>{{0}}), LMError);
}

TEST_CASE("loss agrees with the reference on ragged batches") {
  const LMConfig c = small_config(12);
  const BasicParams<double> p = random_double_params(c, 8);
  const std::vector<TokenSeq> batch{{0, 3, 4, 1}, {0, 5, 6, 7, 8, 9, 1}, {2, 1}};
  CHECK(nll_loss<double>(p, batch) == doctest::Approx(Reference(p).loss(batch)).epsilon(1e-10));
}

TEST_CASE("analytic gradient matches central differences") {
  const LMConfig c = tiny_config();
  BasicParams<double> p = random_double_params(c, 11);
  const std::vector<TokenSeq> batch{{0, 3, 4, 5, 1}, {0, 6, 2, 7, 8, 9, 1}};
  const auto lg = grad<double>(p, batch);
  CHECK(lg.loss == doctest::Approx(nll_loss<double>(p, batch)).epsilon(1e-12));
  Rng rng(77);
  const double h = 1e-4;
  int checked = 0;
  int nonzero = 0;
  while (checked < 20) {
    const std::size_t i = rng.below(p.values.size());
    const double saved = p.values[i];
    p.values[i] = saved + h;
    const double up = Reference(p).loss(batch);
    p.values[i] = saved - h;
    const double down = Reference(p).loss(batch);
    p.values[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = lg.grad.values[i];
    const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
    CHECK(std::fabs(numeric - analytic) / scale < 1e-3);
    nonzero += std::fabs(analytic) > 1e-6 ? 1 : 0;
    ++checked;
  }
  CHECK(nonzero >= 10);
}

TEST_CASE("gradient of unused embedding rows is zero and deterministic") {
  const LMConfig c = tiny_config();
  const LMParams p = init_params(c, 2);
  const std::vector<TokenSeq> batch{{0, 3, 4, 1}};
  const auto g1 = grad<float>(p, batch);
  const auto g2 = grad<float>(p, batch);
  CHECK(g1.grad.values == g2.grad.values);
  const ParamLayout lay(c);
  for (std::size_t row = 5; row < c.vocab_size; ++row)
    for (std::size_t j = 0; j < c.d_model; ++j) CHECK(g1.grad.values[lay.tok_emb + row * c.d_model + j] == 0.0f);
}

TEST_CASE("training overfits two sentences") {
  LMConfig c = small_config(12);
  const std::vector<TokenSeq> corpus{{0, 4, 2, 5, 3, 6, 2, 7, 1}, {0, 8, 2, 9, 3, 10, 2, 11, 1}};
  const LMParams init = init_params(c, 0);
  const double initial = nll_loss<float>(init, corpus);

  TrainConfig t;
  t.batch_size = 2;
  t.epochs = 10;
  t.learning_rate = 1e-2;
  TrainReport first;
  (void)train(init, corpus, t, &first);
  for (std::size_t i = 1; i < first.epoch_loss.size(); ++i) CHECK(first.epoch_loss[i] < first.epoch_loss[i - 1]);

  t.epochs = 200;
  const LMParams trained = train(init, corpus, t);
  CHECK(nll_loss<float>(trained, corpus) < 0.1 * initial);
  CHECK(train(init, corpus, t).values == trained.values);
}

TEST_CASE("training rejects non-finite loss") {
  LMParams p = init_params(tiny_config(), 0);
  p.values[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig t;
  t.epochs = 1;
  CHECK_THROWS_AS(train(p, std::vector<TokenSeq>{{0, 1}}, t), LMError);
}

TEST_CASE("distribution_from_logits") {
  const std::vector<float> equal(7, 0.5f);
  for (double q : distribution_from_logits(equal, 1.0, nullptr)) CHECK(q == doctest::Approx(1.0 / 7));

  const std::vector<float> z{float(std::log(2.0)), 0.0f, 5.0f};
  const std::vector<TokenId> two{0, 1};
  const auto p = distribution_from_logits(z, 1.0, &two);
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(p[2] == 0.0);

  const auto cold = distribution_from_logits(z, 1e-6, nullptr);
  CHECK(cold[2] >= 1 - 1e-6);
  const std::vector<TokenId> none;
  CHECK_THROWS_AS(distribution_from_logits(z, 1.0, &none), LMError);
  CHECK_THROWS_AS(distribution_from_logits(z, 0.0, nullptr), LMError);
}

TEST_CASE("entropy is non-decreasing in temperature") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> z(15);
    for (auto& x : z) x = static_cast<float>(3.0 * rng.normal());
    double prev = -1;
    for (double temp : {0.1, 0.7, 1.0, 2.0}) {
      const auto p = distribution_from_logits(z, temp, nullptr);
      double sum = 0;
      for (double x : p) sum += x;
      CHECK(std::fabs(sum - 1.0) <= 1e-9);
      const double h = entropy(p);
      CHECK(h >= prev - 1e-12);
      prev = h;
    }
  }
}

TEST_CASE("next_token_dist respects the mask") {
  const LMParams p = init_params(tiny_config(), 4);
  SamplerConfig s;
  s.allowed_mask = std::vector<TokenId>{2, 5};
  const auto d = next_token_dist(p, TokenSeq{0, 3}, s);
  CHECK(d[2] + d[5] == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 0; i < d.size(); ++i)
    if (i != 2 && i != 5) CHECK(d[i] == 0.0);
}

TEST_CASE("sample_sequence: forced tokens, determinism, truncation") {
  const LMConfig c = tiny_config();
  const LMParams p = init_params(c, 7);
  SamplerConfig s;
  const TokenSeq forced{0, 4, 5, 6, 1};
  StepMaskFn force = [&](std::span<const TokenId> seq) -> std::optional<std::vector<TokenId>> {
    return std::vector<TokenId>{forced[seq.size()]};
  };
  Rng rng(1);
  const auto r = sample_sequence(p, TokenSeq{0}, s, force, rng, 10);
  CHECK(r.tokens == forced);
  CHECK_FALSE(r.truncated);

  Rng a(5), b(5);
  const auto x = sample_sequence(p, TokenSeq{0}, s, {}, a, 12);
  const auto y = sample_sequence(p, TokenSeq{0}, s, {}, b, 12);
  CHECK(x.tokens == y.tokens);

  StepMaskFn never_end = [](std::span<const TokenId>) -> std::optional<std::vector<TokenId>> {
    return std::vector<TokenId>{4};
  };
  Rng t(0);
  const auto cut = sample_sequence(p, TokenSeq{0}, s, never_end, t, 5);
  CHECK(cut.truncated);
  CHECK(cut.tokens.size() == 6);
  Rng u(0);
  const auto capped = sample_sequence(p, TokenSeq{0}, s, never_end, u, 1000);
  CHECK(capped.truncated);
  CHECK(capped.tokens.size() == c.max_len + 1);
}

TEST_CASE("sampling frequencies match next_token_dist") {
  const LMParams p = init_params(tiny_config(), 8);
  SamplerConfig s;
  s.allowed_mask = std::vector<TokenId>{3, 6};
  const TokenSeq prompt{0, 2};
  const auto d = next_token_dist(p, prompt, s);
  Rng rng(123);
  const int n = 30000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += sample_sequence(p, prompt, s, {}, rng, 1).tokens.back() == 3 ? 1 : 0;
  CHECK(std::fabs(double(hits) / n - d[3]) <= 0.01);
}

TEST_CASE("checkpoint round trip and error cases") {
  const auto dir = std::filesystem::temp_directory_path() / "imbllm_test_lm";
  std::filesystem::create_directories(dir);
  const LMConfig c = tiny_config();
  const LMParams p = init_params(c, 3);
  save_checkpoint(p, dir / "a.imblm");
  const LMParams q = load_checkpoint(dir / "a.imblm");
  CHECK(q.config == c);
  CHECK(std::memcmp(q.values.data(), p.values.data(), p.values.size() * sizeof(float)) == 0);

  LMConfig other = c;
  other.d_ff = 32;
  CHECK_THROWS_AS(load_checkpoint(dir / "a.imblm", other), LMError);

  std::string bytes;
  {
    std::ifstream in(dir / "a.imblm", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    return dir / name;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(load_checkpoint(write("magic.imblm", bad)), doctest::Contains("version"), LMError);
  CHECK_THROWS_AS(load_checkpoint(write("short.imblm", bytes.substr(0, bytes.size() - 3))), LMError);
  CHECK_THROWS_AS(load_checkpoint(write("head.imblm", bytes.substr(0, 10))), LMError);
  CHECK_THROWS_AS(load_checkpoint(write("long.imblm", bytes + "x")), LMError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.imblm"), LMError);
}

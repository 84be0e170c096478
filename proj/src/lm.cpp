#include "imbllm/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace imbllm::lm {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class T>
using Mat = typename Decoder<T>::Mat;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using MapCM = Eigen::Map<const Mat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using MapRow = Eigen::Map<RowVec<T>>;
template <class T>
using MapCRow = Eigen::Map<const RowVec<T>>;

template <class T>
MapCM<T> cmat(const std::vector<T>& v, std::size_t off, std::size_t rows, std::size_t cols) {
  return MapCM<T>(v.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MapM<T> mmat(std::vector<T>& v, std::size_t off, std::size_t rows, std::size_t cols) {
  return MapM<T>(v.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MapCRow<T> crow(const std::vector<T>& v, std::size_t off, std::size_t n) {
  return MapCRow<T>(v.data() + off, static_cast<Eigen::Index>(n));
}
template <class T>
MapRow<T> mrow(std::vector<T>& v, std::size_t off, std::size_t n) {
  return MapRow<T>(v.data() + off, static_cast<Eigen::Index>(n));
}

template <class T>
T gelu(T u) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
}

template <class T>
T gelu_grad(T u) {
  constexpr T c = T(0.7978845608028654);
  const T inner = c * (u + T(0.044715) * u * u * u);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * u * u);
}

// y = g * hat + b, hat = (x - mean) * rstd. Returns rstd.
template <class T, class XIn, class Hat, class Out>
T layer_norm_row(const XIn& x, const MapCRow<T>& g, const MapCRow<T>& b, Hat&& hat, Out&& out) {
  const auto n = static_cast<T>(x.size());
  const T mean = x.sum() / n;
  const T var = (x.array() - mean).square().sum() / n;
  const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
  hat = (x.array() - mean) * rstd;
  out = hat.cwiseProduct(g) + b;
  return rstd;
}

// Backward through a layer norm over the first n rows; accumulates dg/db and
// returns dx.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& hat, const std::vector<T>& rstd, const MapCRow<T>& g,
                           MapRow<T> dg, MapRow<T> db) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  Mat<T> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVec<T> dhat = dy.row(i).cwiseProduct(g);
    dg += dy.row(i).cwiseProduct(hat.row(i));
    db += dy.row(i);
    const T mean_dhat = dhat.sum() / static_cast<T>(d);
    const T mean_dhat_hat = dhat.cwiseProduct(hat.row(i)).sum() / static_cast<T>(d);
    dx.row(i) = (dhat.array() - mean_dhat - hat.row(i).array() * mean_dhat_hat) * rstd[static_cast<std::size_t>(i)];
  }
  return dx;
}

}  // namespace

// ------------------------------------------------------------------- config

void LMConfig::validate() const {
  if (vocab_size == 0) throw LMError("LMConfig: vocab_size must be positive");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_k == 0 || d_ff == 0 || max_len == 0)
    throw LMError("LMConfig: all sizes must be positive");
  if (n_heads * d_k != d_model) throw LMError("LMConfig: n_heads * d_k must equal d_model");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw LMError("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw LMError("TrainConfig: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw LMError("TrainConfig: learning_rate must be positive");
  if (!(grad_clip > 0.0)) throw LMError("TrainConfig: grad_clip must be positive");
}

std::size_t TrainConfig::effective_epochs(std::size_t corpus_size) const {
  if (steps == 0) return epochs;
  const std::size_t per_epoch = (corpus_size + batch_size - 1) / batch_size;
  return per_epoch == 0 ? 0 : (steps + per_epoch - 1) / per_epoch;
}

ParamLayout::ParamLayout(const LMConfig& c) {
  c.validate();
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    manifest.push_back({std::move(name), rows, cols, total});
    std::size_t off = total;
    total += rows * cols;
    return off;
  };
  tok_emb = add("tok_emb", c.vocab_size, c.d_model);
  pos_emb = add("pos_emb", c.max_len, c.d_model);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerSlots s{};
    s.ln1_g = add(p + "ln1.g", 1, c.d_model);
    s.ln1_b = add(p + "ln1.b", 1, c.d_model);
    s.wq = add(p + "attn.wq", c.d_model, c.d_model);
    s.wk = add(p + "attn.wk", c.d_model, c.d_model);
    s.wv = add(p + "attn.wv", c.d_model, c.d_model);
    s.wo = add(p + "attn.wo", c.d_model, c.d_model);
    s.ln2_g = add(p + "ln2.g", 1, c.d_model);
    s.ln2_b = add(p + "ln2.b", 1, c.d_model);
    s.w1 = add(p + "mlp.w1", c.d_model, c.d_ff);
    s.b1 = add(p + "mlp.b1", 1, c.d_ff);
    s.w2 = add(p + "mlp.w2", c.d_ff, c.d_model);
    s.b2 = add(p + "mlp.b2", 1, c.d_model);
    layers.push_back(s);
  }
  lnf_g = add("lnf.g", 1, c.d_model);
  lnf_b = add("lnf.b", 1, c.d_model);
  head = add("head", c.d_model, c.vocab_size);
}

LMParams init_params(const LMConfig& config, std::uint64_t seed) {
  ParamLayout layout(config);
  LMParams p(config);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for (const auto& t : layout.manifest) {
    const bool is_norm_scale = t.name.ends_with(".g");
    const bool is_bias = t.name.ends_with(".b") || t.name.ends_with(".b1") || t.name.ends_with(".b2");
    const double s = t.name == "head" ? scale * scale : scale;
    for (std::size_t i = 0; i < t.rows * t.cols; ++i) {
      float& w = p.values[t.offset + i];
      if (is_norm_scale)
        w = 1.0f;
      else if (is_bias)
        w = 0.0f;
      else
        w = static_cast<float>(s * rng.normal());
    }
  }
  return p;
}

// ------------------------------------------------------------------ decoder

template <class T>
Decoder<T>::Decoder(const BasicParams<T>& params, std::size_t capacity)
    : params_(&params), layout_(params.config), capacity_(capacity == 0 ? params.config.max_len : capacity) {
  const auto& c = params.config;
  if (params.values.size() != layout_.total) throw LMError("Decoder: parameter buffer does not match config");
  if (capacity_ > c.max_len) throw LMError("Decoder: capacity exceeds max_len");
  const auto L = static_cast<Eigen::Index>(capacity_);
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  layers_.resize(c.n_layers);
  for (auto& lc : layers_) {
    for (Mat* m : {&lc.x_in, &lc.hat1, &lc.a1, &lc.q, &lc.k, &lc.v, &lc.att_out, &lc.x_mid, &lc.hat2, &lc.a2})
      m->setZero(L, d);
    lc.u.setZero(L, ff);
    lc.act.setZero(L, ff);
    lc.rstd1.assign(capacity_, T(0));
    lc.rstd2.assign(capacity_, T(0));
    lc.probs.assign(c.n_heads, Mat::Zero(L, L));
  }
  x_final.setZero(L, d);
  hat_f.setZero(L, d);
  f_out.setZero(L, d);
  logits_.setZero(L, static_cast<Eigen::Index>(c.vocab_size));
  rstd_f.assign(capacity_, T(0));
}

template <class T>
std::span<const T> Decoder<T>::push(TokenId token) {
  const auto& c = params_->config;
  const auto& w = params_->values;
  if (len_ >= capacity_)
    throw LMError(capacity_ == c.max_len ? "forward: sequence longer than max_len" : "forward: decoder capacity exceeded");
  if (token >= c.vocab_size) throw LMError("forward: token id out of range");
  const std::size_t d = c.d_model;
  const std::size_t dk = c.d_k;
  const auto p = static_cast<Eigen::Index>(len_);
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  RowVec<T> x = crow(w, layout_.tok_emb + token * d, d) + crow(w, layout_.pos_emb + len_ * d, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& s = layout_.layers[l];
    auto& lc = layers_[l];
    lc.x_in.row(p) = x;
    lc.rstd1[len_] = layer_norm_row<T>(lc.x_in.row(p), crow(w, s.ln1_g, d), crow(w, s.ln1_b, d), lc.hat1.row(p),
                                       lc.a1.row(p));
    lc.q.row(p).noalias() = lc.a1.row(p) * cmat(w, s.wq, d, d);
    lc.k.row(p).noalias() = lc.a1.row(p) * cmat(w, s.wk, d, d);
    lc.v.row(p).noalias() = lc.a1.row(p) * cmat(w, s.wv, d, d);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h * dk);
      const auto dki = static_cast<Eigen::Index>(dk);
      auto probs = lc.probs[h].row(p);
      T maxv = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j <= p; ++j) {
        T sc = lc.q.row(p).segment(col, dki).dot(lc.k.row(j).segment(col, dki)) * scale;
        probs(j) = sc;
        maxv = std::max(maxv, sc);
      }
      T total = 0;
      for (Eigen::Index j = 0; j <= p; ++j) {
        probs(j) = std::exp(probs(j) - maxv);
        total += probs(j);
      }
      for (Eigen::Index j = 0; j <= p; ++j) probs(j) /= total;
      auto out = lc.att_out.row(p).segment(col, dki);
      out.setZero();
      for (Eigen::Index j = 0; j <= p; ++j) out += probs(j) * lc.v.row(j).segment(col, dki);
    }
    lc.x_mid.row(p) = lc.x_in.row(p);
    lc.x_mid.row(p).noalias() += lc.att_out.row(p) * cmat(w, s.wo, d, d);
    lc.rstd2[len_] = layer_norm_row<T>(lc.x_mid.row(p), crow(w, s.ln2_g, d), crow(w, s.ln2_b, d), lc.hat2.row(p),
                                       lc.a2.row(p));
    lc.u.row(p) = crow(w, s.b1, c.d_ff);
    lc.u.row(p).noalias() += lc.a2.row(p) * cmat(w, s.w1, d, c.d_ff);
    lc.act.row(p) = lc.u.row(p).unaryExpr([](T v) { return gelu(v); });
    x = lc.x_mid.row(p) + crow(w, s.b2, d);
    x.noalias() += lc.act.row(p) * cmat(w, s.w2, c.d_ff, d);
  }
  x_final.row(p) = x;
  rstd_f[len_] = layer_norm_row<T>(x_final.row(p), crow(w, layout_.lnf_g, d), crow(w, layout_.lnf_b, d), hat_f.row(p),
                                   f_out.row(p));
  logits_.row(p).noalias() = f_out.row(p) * cmat(w, layout_.head, d, c.vocab_size);
  tokens_.push_back(token);
  ++len_;
  return logits(len_ - 1);
}

template <class T>
std::span<const T> Decoder<T>::logits(std::size_t pos) const {
  const auto v = params_->config.vocab_size;
  return {logits_.data() + pos * v, v};
}

template <class T>
std::span<const T> Decoder<T>::attention(std::size_t layer, std::size_t head, std::size_t pos) const {
  const auto& m = layers_.at(layer).probs.at(head);
  return {m.data() + pos * static_cast<std::size_t>(m.cols()), pos + 1};
}

template <class T>
void Decoder<T>::backward(const Mat& dlogits, BasicParams<T>& grads) const {
  const auto& c = params_->config;
  const auto& w = params_->values;
  auto& g = grads.values;
  const std::size_t d = c.d_model;
  const std::size_t dk = c.d_k;
  const auto n = static_cast<Eigen::Index>(len_);
  const auto dki = static_cast<Eigen::Index>(dk);
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  const Mat f = f_out.topRows(n);
  mmat(g, layout_.head, d, c.vocab_size).noalias() += f.transpose() * dlogits;
  Mat df = dlogits * cmat(w, layout_.head, d, c.vocab_size).transpose();
  Mat dx = layer_norm_backward<T>(df, hat_f.topRows(n), rstd_f, crow(w, layout_.lnf_g, d), mrow(g, layout_.lnf_g, d),
                                  mrow(g, layout_.lnf_b, d));

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& s = layout_.layers[li];
    const auto& lc = layers_[li];
    // MLP block
    const Mat act = lc.act.topRows(n);
    mmat(g, s.w2, c.d_ff, d).noalias() += act.transpose() * dx;
    mrow(g, s.b2, d) += dx.colwise().sum();
    Mat du = dx * cmat(w, s.w2, c.d_ff, d).transpose();
    du.array() *= lc.u.topRows(n).unaryExpr([](T v) { return gelu_grad(v); }).array();
    const Mat a2 = lc.a2.topRows(n);
    mmat(g, s.w1, d, c.d_ff).noalias() += a2.transpose() * du;
    mrow(g, s.b1, c.d_ff) += du.colwise().sum();
    Mat da2 = du * cmat(w, s.w1, d, c.d_ff).transpose();
    Mat dx_mid = dx + layer_norm_backward<T>(da2, lc.hat2.topRows(n), lc.rstd2, crow(w, s.ln2_g, d),
                                             mrow(g, s.ln2_g, d), mrow(g, s.ln2_b, d));
    // attention block
    const Mat att = lc.att_out.topRows(n);
    mmat(g, s.wo, d, d).noalias() += att.transpose() * dx_mid;
    Mat datt = dx_mid * cmat(w, s.wo, d, d).transpose();
    Mat dq = Mat::Zero(n, static_cast<Eigen::Index>(d));
    Mat dk_m = Mat::Zero(n, static_cast<Eigen::Index>(d));
    Mat dv = Mat::Zero(n, static_cast<Eigen::Index>(d));
    std::vector<T> dp(static_cast<std::size_t>(n));
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h * dk);
      const auto& probs = lc.probs[h];
      for (Eigen::Index i = 0; i < n; ++i) {
        auto do_i = datt.row(i).segment(col, dki);
        T weighted = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          dp[static_cast<std::size_t>(j)] = do_i.dot(lc.v.row(j).segment(col, dki));
          weighted += probs(i, j) * dp[static_cast<std::size_t>(j)];
        }
        for (Eigen::Index j = 0; j <= i; ++j) {
          const T pij = probs(i, j);
          const T ds = pij * (dp[static_cast<std::size_t>(j)] - weighted) * scale;
          dq.row(i).segment(col, dki) += ds * lc.k.row(j).segment(col, dki);
          dk_m.row(j).segment(col, dki) += ds * lc.q.row(i).segment(col, dki);
          dv.row(j).segment(col, dki) += pij * do_i;
        }
      }
    }
    const Mat a1 = lc.a1.topRows(n);
    mmat(g, s.wq, d, d).noalias() += a1.transpose() * dq;
    mmat(g, s.wk, d, d).noalias() += a1.transpose() * dk_m;
    mmat(g, s.wv, d, d).noalias() += a1.transpose() * dv;
    Mat da1 = dq * cmat(w, s.wq, d, d).transpose();
    da1.noalias() += dk_m * cmat(w, s.wk, d, d).transpose();
    da1.noalias() += dv * cmat(w, s.wv, d, d).transpose();
    dx = dx_mid + layer_norm_backward<T>(da1, lc.hat1.topRows(n), lc.rstd1, crow(w, s.ln1_g, d), mrow(g, s.ln1_g, d),
                                         mrow(g, s.ln1_b, d));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    mrow(g, layout_.tok_emb + tokens_[static_cast<std::size_t>(i)] * d, d) += dx.row(i);
    mrow(g, layout_.pos_emb + static_cast<std::size_t>(i) * d, d) += dx.row(i);
  }
}

template class Decoder<float>;
template class Decoder<double>;

// --------------------------------------------------------- loss / gradient

template <class T>
typename Decoder<T>::Mat forward(const BasicParams<T>& params, std::span<const TokenId> tokens) {
  if (tokens.size() > params.config.max_len) throw LMError("forward: sequence longer than max_len");
  Decoder<T> dec(params, std::max<std::size_t>(tokens.size(), 1));
  const auto v = static_cast<Eigen::Index>(params.config.vocab_size);
  typename Decoder<T>::Mat out(static_cast<Eigen::Index>(tokens.size()), v);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto row = dec.push(tokens[i]);
    for (Eigen::Index k = 0; k < v; ++k) out(static_cast<Eigen::Index>(i), k) = row[static_cast<std::size_t>(k)];
  }
  return out;
}

namespace {

std::size_t longest(std::span<const TokenSeq> batch, std::size_t max_len) {
  std::size_t n = 1;
  for (const auto& seq : batch) n = std::max(n, seq.size());
  if (n > max_len) throw LMError("forward: sequence longer than max_len");
  return n;
}

std::size_t count_targets(std::span<const TokenSeq> batch) {
  if (batch.empty()) throw LMError("loss: empty batch");
  std::size_t total = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2) throw LMError("loss: every sequence needs at least 2 tokens");
    total += seq.size() - 1;
  }
  return total;
}

// Runs one sequence; returns summed NLL and optionally writes d(sum NLL)/d(logits) * weight.
template <class T>
double sequence_nll(Decoder<T>& dec, const TokenSeq& seq, typename Decoder<T>::Mat* dlogits, double weight) {
  dec.reset();
  const std::size_t v = dec.logits(0).size();
  for (auto t : seq) dec.push(t);
  if (dlogits) dlogits->setZero(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(v));
  double nll = 0.0;
  std::vector<double> prob(v);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    auto z = dec.logits(i);
    double maxv = -std::numeric_limits<double>::infinity();
    for (auto x : z) maxv = std::max(maxv, static_cast<double>(x));
    double total = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      prob[k] = std::exp(static_cast<double>(z[k]) - maxv);
      total += prob[k];
    }
    const double log_total = std::log(total) + maxv;
    nll += log_total - static_cast<double>(z[seq[i + 1]]);
    if (dlogits) {
      auto row = dlogits->row(static_cast<Eigen::Index>(i));
      for (std::size_t k = 0; k < v; ++k) row(static_cast<Eigen::Index>(k)) = static_cast<T>(prob[k] / total * weight);
      row(static_cast<Eigen::Index>(seq[i + 1])) -= static_cast<T>(weight);
    }
  }
  return nll;
}

}  // namespace

template <class T>
double nll_loss(const BasicParams<T>& params, std::span<const TokenSeq> batch) {
  const std::size_t targets = count_targets(batch);
  Decoder<T> dec(params, longest(batch, params.config.max_len));
  double total = 0.0;
  for (const auto& seq : batch) total += sequence_nll<T>(dec, seq, nullptr, 0.0);
  return total / static_cast<double>(targets);
}

template <class T>
LossAndGrad<T> grad(const BasicParams<T>& params, std::span<const TokenSeq> batch) {
  const std::size_t targets = count_targets(batch);
  const double weight = 1.0 / static_cast<double>(targets);
  LossAndGrad<T> out{0.0, BasicParams<T>(params.config)};
  Decoder<T> dec(params, longest(batch, params.config.max_len));
  typename Decoder<T>::Mat dlogits;
  for (const auto& seq : batch) {
    out.loss += sequence_nll<T>(dec, seq, &dlogits, weight);
    dec.backward(dlogits, out.grad);
  }
  out.loss *= weight;
  return out;
}

template Decoder<float>::Mat forward<float>(const BasicParams<float>&, std::span<const TokenId>);
template Decoder<double>::Mat forward<double>(const BasicParams<double>&, std::span<const TokenId>);
template double nll_loss<float>(const BasicParams<float>&, std::span<const TokenSeq>);
template double nll_loss<double>(const BasicParams<double>&, std::span<const TokenSeq>);
template LossAndGrad<float> grad<float>(const BasicParams<float>&, std::span<const TokenSeq>);
template LossAndGrad<double> grad<double>(const BasicParams<double>&, std::span<const TokenSeq>);

// ----------------------------------------------------------------- training

LMParams train(LMParams params, const EpochCorpus& corpus, const TrainConfig& tcfg, TrainReport* report,
               std::ostream* log) {
  tcfg.validate();
  const std::size_t n = params.values.size();
  std::vector<float> m(n, 0.0f);
  std::vector<float> v(n, 0.0f);
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  std::size_t step = 0;
  std::size_t n_epochs = tcfg.epochs;

  for (std::size_t epoch = 0; epoch < n_epochs; ++epoch) {
    std::vector<TokenSeq> data = corpus(epoch);
    if (data.empty()) throw LMError("train: corpus is empty");
    if (epoch == 0) n_epochs = tcfg.effective_epochs(data.size());
    for (const auto& seq : data)
      if (seq.size() > params.config.max_len) throw LMError("train: sequence longer than max_len");
    Rng order_rng(derive_seed(tcfg.seed, epoch));
    const auto order = order_rng.permutation(data.size());

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.size(); start += tcfg.batch_size) {
      if (tcfg.steps > 0 && step == tcfg.steps) break;
      const std::size_t end = std::min(start + tcfg.batch_size, data.size());
      std::vector<TokenSeq> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

      auto lg = grad(params, std::span<const TokenSeq>(batch));
      if (!std::isfinite(lg.loss)) throw LMError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
      double norm2 = 0.0;
      for (float gi : lg.grad.values) norm2 += static_cast<double>(gi) * gi;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw LMError("train: non-finite gradient at epoch " + std::to_string(epoch));
      const double clip = norm > tcfg.grad_clip ? tcfg.grad_clip / norm : 1.0;

      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(lg.grad.values[i]) * clip;
        m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * gi);
        v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params.values[i] -= static_cast<float>(tcfg.learning_rate * mhat / (std::sqrt(vhat) + eps));
      }
      epoch_loss += lg.loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    if (report) report->epoch_loss.push_back(epoch_loss);
    if (log) *log << "epoch " << (epoch + 1) << "/" << n_epochs << " loss " << epoch_loss << '\n';
  }
  return params;
}

LMParams train(LMParams params, const std::vector<TokenSeq>& corpus, const TrainConfig& tcfg, TrainReport* report,
               std::ostream* log) {
  return train(std::move(params), [&corpus](std::size_t) { return corpus; }, tcfg, report, log);
}

// ----------------------------------------------------------------- sampling

std::vector<double> distribution_from_logits(std::span<const float> logits, double temperature,
                                             const std::vector<TokenId>* allowed) {
  if (!(temperature > 0.0)) throw LMError("sampler: temperature must be positive");
  const std::size_t v = logits.size();
  std::vector<double> p(v, 0.0);
  std::vector<TokenId> all;
  if (!allowed) {
    all.resize(v);
    std::iota(all.begin(), all.end(), TokenId{0});
    allowed = &all;
  }
  if (allowed->empty()) throw LMError("sampler: empty allowed set");
  double maxv = -std::numeric_limits<double>::infinity();
  for (auto id : *allowed) {
    if (id >= v) throw LMError("sampler: allowed token out of range");
    maxv = std::max(maxv, static_cast<double>(logits[id]) / temperature);
  }
  double total = 0.0;
  for (auto id : *allowed) {
    p[id] = std::exp(static_cast<double>(logits[id]) / temperature - maxv);
    total += p[id];
  }
  for (auto id : *allowed) p[id] /= total;
  return p;
}

std::vector<double> next_token_dist(const LMParams& params, std::span<const TokenId> prefix, const SamplerConfig& scfg) {
  if (prefix.empty()) throw LMError("next_token_dist: empty prefix");
  if (prefix.size() > params.config.max_len) throw LMError("forward: sequence longer than max_len");
  Decoder<float> dec(params, prefix.size());
  for (auto t : prefix) dec.push(t);
  const std::vector<TokenId>* mask = scfg.allowed_mask ? &*scfg.allowed_mask : nullptr;
  return distribution_from_logits(dec.logits(prefix.size() - 1), scfg.temperature, mask);
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::max(0.0, h);
}

SampleResult sample_sequence(const LMParams& params, const TokenSeq& prompt, const SamplerConfig& scfg,
                             const StepMaskFn& step_mask, Rng& rng, std::size_t max_steps,
                             const StepObserver& observer) {
  if (prompt.empty()) throw LMError("sample_sequence: empty prompt");
  if (prompt.size() > params.config.max_len) throw LMError("forward: sequence longer than max_len");
  Decoder<float> dec(params, std::min(params.config.max_len, prompt.size() + max_steps + 1));
  SampleResult out{prompt, false};
  for (auto t : prompt) dec.push(t);

  for (std::size_t step = 0;; ++step) {
    if (out.tokens.back() == text::Vocab::eos) return out;
    if (step >= max_steps) {
      out.truncated = true;
      return out;
    }
    std::optional<std::vector<TokenId>> mask;
    if (step_mask) mask = step_mask(out.tokens);
    if (scfg.allowed_mask) {
      if (!mask) {
        mask = *scfg.allowed_mask;
      } else {
        std::vector<TokenId> both;
        for (auto id : *mask)
          if (std::find(scfg.allowed_mask->begin(), scfg.allowed_mask->end(), id) != scfg.allowed_mask->end())
            both.push_back(id);
        mask = std::move(both);
      }
    }
    auto probs = distribution_from_logits(dec.logits(dec.length() - 1), scfg.temperature, mask ? &*mask : nullptr);
    if (observer) observer(out.tokens, probs);

    const double u = rng.uniform();
    double cum = 0.0;
    TokenId chosen = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      if (probs[k] <= 0.0) continue;
      cum += probs[k];
      chosen = static_cast<TokenId>(k);  // rounding can leave u >= cum; keep the last positive entry
      if (u < cum) break;
    }
    out.tokens.push_back(chosen);
    if (chosen == text::Vocab::eos) return out;
    if (dec.length() >= params.config.max_len) {
      out.truncated = true;
      return out;
    }
    dec.push(chosen);
  }
}

}  // namespace imbllm::lm

#include <algorithm>
#include <cmath>
#include <numeric>

#include "imbllm/eval.hpp"

namespace imbllm::eval {

void GBDTConfig::validate() const {
  if (n_rounds < 1) throw EvalError("GBDTConfig: n_rounds must be >= 1");
  if (max_depth < 1) throw EvalError("GBDTConfig: max_depth must be >= 1");
  if (!(learning_rate > 0.0)) throw EvalError("GBDTConfig: learning_rate must be positive");
  if (min_leaf < 1) throw EvalError("GBDTConfig: min_leaf must be >= 1");
}

namespace {

double sigmoid(double f) { return 1.0 / (1.0 + std::exp(-std::clamp(f, -30.0, 30.0))); }

struct TreeBuilder {
  const std::vector<std::vector<double>>& x;
  const std::vector<double>& residual;  // y - p
  const std::vector<double>& hessian;   // p (1 - p)
  std::size_t max_depth;
  std::size_t min_leaf;
  GBDTModel::Tree tree;

  int leaf(const std::vector<std::size_t>& idx) {
    double num = 0.0, den = 0.0;
    for (auto i : idx) {
      num += residual[i];
      den += hessian[i];
    }
    GBDTModel::Node node;
    node.value = num / std::max(den, 1e-12);
    tree.push_back(node);
    return static_cast<int>(tree.size() - 1);
  }

  int build(std::vector<std::size_t> idx, std::size_t depth) {
    if (depth >= max_depth || idx.size() < 2 * min_leaf) return leaf(idx);
    const std::size_t n = idx.size();
    double total = 0.0;
    for (auto i : idx) total += residual[i];
    const double parent = total * total / static_cast<double>(n);

    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    const std::size_t width = x.empty() ? 0 : x[idx[0]].size();
    std::vector<std::size_t> order = idx;
    for (std::size_t f = 0; f < width; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a][f] < x[b][f] || (x[a][f] == x[b][f] && a < b);
      });
      double left = 0.0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        left += residual[order[t]];
        const std::size_t n_left = t + 1;
        const std::size_t n_right = n - n_left;
        if (n_left < min_leaf) continue;
        if (n_right < min_leaf) break;
        const double a = x[order[t]][f];
        const double b = x[order[t + 1]][f];
        if (a == b) continue;
        const double right = total - left;
        const double gain = left * left / static_cast<double>(n_left) + right * right / static_cast<double>(n_right) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature < 0) return leaf(idx);

    std::vector<std::size_t> left_idx, right_idx;
    for (auto i : idx) (x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_idx : right_idx).push_back(i);
    tree.push_back(GBDTModel::Node{best_feature, best_threshold, -1, -1, 0.0});
    const int self = static_cast<int>(tree.size() - 1);
    const int l = build(std::move(left_idx), depth + 1);
    const int r = build(std::move(right_idx), depth + 1);
    tree[static_cast<std::size_t>(self)].left = l;
    tree[static_cast<std::size_t>(self)].right = r;
    return self;
  }
};

double tree_value(const GBDTModel::Tree& tree, std::span<const double> x) {
  std::size_t node = 0;
  while (tree[node].feature >= 0)
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(tree[node].feature)] <= tree[node].threshold ? tree[node].left
                                                                                                          : tree[node].right);
  return tree[node].value;
}

}  // namespace

GBDTModel fit_gbdt(const Table& train, const GBDTConfig& cfg, const MixedEncoder& encoder) {
  cfg.validate();
  const auto& schema = train.schema;
  const auto counts = data::class_counts(train);
  if (counts.size() < 2) throw EvalError("fit_gbdt: training set needs both labels");

  GBDTModel model;
  model.encoder_ = encoder;
  model.minority_ = schema.minority_label;
  model.majority_ = schema.majority_label();
  model.learning_rate_ = cfg.learning_rate;

  const auto x = encoder.encode(train);
  const std::size_t n = train.size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = train.rows[i].label == model.minority_ ? 1.0 : 0.0;
  const double base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  model.base_score_ = std::log(base / (1.0 - base));

  std::vector<double> score(n, model.base_score_);
  std::vector<double> residual(n), hessian(n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t round = 0; round < cfg.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(score[i]);
      residual[i] = y[i] - p;
      hessian[i] = p * (1.0 - p);
    }
    TreeBuilder builder{x, residual, hessian, cfg.max_depth, cfg.min_leaf, {}};
    builder.build(all, 0);
    for (std::size_t i = 0; i < n; ++i) score[i] += cfg.learning_rate * tree_value(builder.tree, x[i]);
    model.trees_.push_back(std::move(builder.tree));
  }
  return model;
}

double GBDTModel::raw_score(std::span<const double> x) const {
  double f = base_score_;
  for (const auto& t : trees_) f += learning_rate_ * tree_value(t, x);
  return f;
}

double GBDTModel::predict_proba(const Row& row) const { return sigmoid(raw_score(encoder_.encode(row))); }

std::vector<double> GBDTModel::predict_proba(const Table& table) const {
  std::vector<double> out;
  out.reserve(table.size());
  for (const auto& row : table.rows) out.push_back(predict_proba(row));
  return out;
}

std::vector<std::string> GBDTModel::predict(const Table& table, double threshold) const {
  std::vector<std::string> out;
  out.reserve(table.size());
  for (const auto& row : table.rows) out.push_back(predict_proba(row) >= threshold ? minority_ : majority_);
  return out;
}

}  // namespace imbllm::eval

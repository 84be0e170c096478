#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "imbllm/eval.hpp"

namespace imbllm::eval {

MixedEncoder MixedEncoder::fit(const Table& reference) {
  MixedEncoder enc;
  enc.schema_ = reference.schema;
  const auto& features = enc.schema_.features;
  enc.min_.assign(features.size(), 0.0);
  enc.max_.assign(features.size(), 0.0);
  enc.width_ = 0;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].is_continuous()) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (const auto& row : reference.rows) {
        lo = std::min(lo, data::as_number(row.values[j]));
        hi = std::max(hi, data::as_number(row.values[j]));
      }
      if (reference.empty()) lo = hi = 0.0;
      enc.min_[j] = lo;
      enc.max_[j] = hi;
      enc.width_ += 1;
    } else {
      enc.width_ += features[j].categories.size();
    }
  }
  return enc;
}

std::vector<double> MixedEncoder::encode(const Row& row) const {
  std::vector<double> out;
  out.reserve(width_);
  const auto& features = schema_.features;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (!features[j].is_continuous()) continue;
    const double span = max_[j] - min_[j];
    const double x = data::as_number(row.values[j]);
    const double scaled = span > 0.0 ? (x - min_[j]) / span : 0.0;
    out.push_back(std::clamp(scaled, 0.0, 1.0));
  }
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].is_continuous()) continue;
    const auto idx = features[j].category_index(data::as_category(row.values[j]));
    for (std::size_t c = 0; c < features[j].categories.size(); ++c) out.push_back(idx && *idx == c ? 1.0 : 0.0);
  }
  return out;
}

std::vector<std::vector<double>> MixedEncoder::encode(const Table& table) const {
  std::vector<std::vector<double>> out;
  out.reserve(table.size());
  for (const auto& row : table.rows) out.push_back(encode(row));
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

namespace {

// Distance from each query to its nearest reference point.
std::vector<double> nearest_distances(const std::vector<std::vector<double>>& queries,
                                      const std::vector<std::vector<double>>& refs) {
  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : refs) best = std::min(best, squared_distance(q, r));
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ scoring

std::vector<std::string> labels_of(const Table& table) {
  std::vector<std::string> out;
  out.reserve(table.size());
  for (const auto& row : table.rows) out.push_back(row.label);
  return out;
}

double f1_minority(std::span<const std::string> preds, std::span<const std::string> truth,
                   std::string_view minority_label) {
  if (preds.size() != truth.size()) throw EvalError("f1: length mismatch");
  if (preds.empty()) throw EvalError("f1: empty input");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == minority_label;
    const bool t = truth[i] == minority_label;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double auc(std::span<const double> scores, std::span<const std::string> truth, std::string_view minority_label) {
  if (scores.size() != truth.size()) throw EvalError("auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks (1-based) over tied groups
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (truth[i] == minority_label) {
      rank_sum += rank[i];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw EvalError("auc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double close_probability(const Table& minor_star, const Table& synth, double alpha, const MixedEncoder& encoder) {
  if (minor_star.empty()) throw EvalError("close_probability: empty real set");
  if (synth.empty()) throw EvalError("close_probability: empty synthetic set");
  const auto d = nearest_distances(encoder.encode(minor_star), encoder.encode(synth));
  const double norm = std::sqrt(static_cast<double>(encoder.width()));
  std::size_t close = 0;
  for (double x : d) close += (x / norm) <= alpha;
  return static_cast<double>(close) / static_cast<double>(d.size());
}

double coverage(const Table& minor_star, const Table& synth, std::size_t k, const MixedEncoder& encoder) {
  if (minor_star.size() <= k) throw EvalError("coverage: need more than k real rows");
  if (k == 0) throw EvalError("coverage: k must be >= 1");
  const auto real = encoder.encode(minor_star);
  const auto fake = encoder.encode(synth);
  std::size_t covered = 0;
  std::vector<double> others;
  for (std::size_t i = 0; i < real.size(); ++i) {
    others.clear();
    for (std::size_t j = 0; j < real.size(); ++j)
      if (j != i) others.push_back(squared_distance(real[i], real[j]));
    std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k - 1), others.end());
    const double radius2 = others[k - 1];
    for (const auto& s : fake) {
      if (squared_distance(real[i], s) <= radius2) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(real.size());
}

Histogram dcr_histogram(const Table& test_minor, const Table& synth, const MixedEncoder& encoder, std::size_t bins) {
  if (test_minor.empty() || synth.empty()) throw EvalError("dcr: empty input");
  if (bins == 0) throw EvalError("dcr: bins must be >= 1");
  Histogram h;
  h.distances = nearest_distances(encoder.encode(test_minor), encoder.encode(synth));
  const double hi = *std::max_element(h.distances.begin(), h.distances.end());
  for (std::size_t b = 0; b < bins; ++b) h.edges.push_back(hi * static_cast<double>(b) / static_cast<double>(bins));
  h.edges.push_back(hi);
  h.counts.assign(bins, 0);
  // Bins are [edge_b, edge_b+1), the last one closed; counted against the reported edges.
  const auto inner_begin = h.edges.begin() + 1;
  const auto inner_end = h.edges.end() - 1;
  for (double d : h.distances) {
    const auto b = hi > 0.0 ? std::upper_bound(inner_begin, inner_end, d) - inner_begin : 0;
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

std::pair<double, double> mean_std(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace imbllm::eval

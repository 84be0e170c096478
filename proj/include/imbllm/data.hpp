#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace imbllm::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FeatureKind { continuous, categorical };

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  std::vector<std::string> categories;  // empty for continuous features

  std::optional<std::size_t> category_index(std::string_view value) const;
  bool is_continuous() const { return kind == FeatureKind::continuous; }

  friend bool operator==(const Feature&, const Feature&) = default;
};

/// Feature layout plus a binary target with a designated minority label.
struct Schema {
  std::vector<Feature> features;
  std::string target_name;
  std::vector<std::string> target_labels;
  std::string minority_label;

  /// Throws DataError when any structural invariant is broken.
  void validate() const;

  std::size_t num_features() const { return features.size(); }
  std::size_t num_continuous() const;
  std::size_t num_categorical() const;
  std::optional<std::size_t> feature_index(std::string_view name) const;
  bool is_label(std::string_view label) const;
  const std::string& majority_label() const;

  friend bool operator==(const Schema&, const Schema&) = default;
};

/// Continuous cells hold a double, categorical cells the category text.
using Value = std::variant<double, std::string>;

struct Row {
  std::vector<Value> values;
  std::string label;

  friend bool operator==(const Row&, const Row&) = default;
};

struct Table {
  Schema schema;
  std::vector<Row> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
};

struct ImbalanceSpec {
  double q = 0.2;
  std::uint64_t seed = 0;
};

struct ImbalancedSplit {
  Table major;
  Table minor;
  Table minor_star;  // every minority row of the training split, held out from oversamplers
};

/// Throws DataError if the row does not conform to the schema.
void validate_row(const Schema& schema, const Row& row);

double as_number(const Value& v);
const std::string& as_category(const Value& v);

Schema parse_schema(std::string_view json_text);
std::string schema_to_json(const Schema& schema);
Schema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const Schema& schema);

Table parse_csv(std::istream& in, const Schema& schema);
Table load_csv(const std::filesystem::path& path, const Schema& schema);
void write_csv(std::ostream& out, const Table& table);
void save_csv(const std::filesystem::path& path, const Table& table);

/// Stratified, seeded split. Train size is round(N * (1 - test_fraction)).
std::pair<Table, Table> split_train_test(const Table& table, double test_fraction, std::uint64_t seed);

ImbalancedSplit make_imbalanced(const Table& train, const ImbalanceSpec& spec);

std::map<std::string, std::size_t> class_counts(const Table& table);

Table concat(const Table& a, const Table& b);
Table select_label(const Table& table, std::string_view label);

/// Synthetic two-class fixture.
///
/// Continuous feature j is Gaussian with unit variance, centred at 5.0 for the
/// majority label and 6.0 for the minority label. Categorical features take
/// categories {A, B, C} with probabilities (0.5, 0.3, 0.2) for the majority and
/// (0.2, 0.3, 0.5) for the minority. The Bayes rule (linear in the continuous
/// sum plus per-category log-odds) therefore beats chance. Continuous values
/// are quantized to 4 significant digits so they survive text serialization
/// exactly. Feature names are x1..x{m_con} then c1..c{m_cat}; the target is
/// `y` with labels {"0", "1"} and minority "1".
Table generate_fixture(std::size_t n_major, std::size_t n_minor, std::size_t m_con, std::size_t m_cat,
                       std::uint64_t seed);

}  // namespace imbllm::data

#include "imbllm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "imbllm/rng.hpp"
#include "json.hpp"

namespace imbllm::data {

using nlohmann::json;

std::optional<std::size_t> Feature::category_index(std::string_view value) const {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i] == value) return i;
  }
  return std::nullopt;
}

void Schema::validate() const {
  if (features.empty()) throw DataError("schema: at least one feature is required");
  if (target_name.empty()) throw DataError("schema: target name is empty");
  std::set<std::string> names;
  for (const auto& f : features) {
    if (f.name.empty()) throw DataError("schema: empty feature name");
    if (f.name == target_name) throw DataError("schema: feature name '" + f.name + "' collides with target");
    if (!names.insert(f.name).second) throw DataError("schema: duplicate feature name '" + f.name + "'");
    if (f.kind == FeatureKind::categorical) {
      if (f.categories.empty()) throw DataError("schema: categorical feature '" + f.name + "' has no categories");
      std::set<std::string> cats(f.categories.begin(), f.categories.end());
      if (cats.size() != f.categories.size())
        throw DataError("schema: duplicate category in feature '" + f.name + "'");
    } else if (!f.categories.empty()) {
      throw DataError("schema: continuous feature '" + f.name + "' lists categories");
    }
  }
  if (target_labels.size() != 2) throw DataError("schema: target must have exactly 2 labels");
  if (target_labels[0] == target_labels[1]) throw DataError("schema: target labels must differ");
  if (!is_label(minority_label)) throw DataError("schema: minority label '" + minority_label + "' is not a target label");
}

std::size_t Schema::num_continuous() const {
  return static_cast<std::size_t>(
      std::count_if(features.begin(), features.end(), [](const Feature& f) { return f.is_continuous(); }));
}

std::size_t Schema::num_categorical() const { return features.size() - num_continuous(); }

std::optional<std::size_t> Schema::feature_index(std::string_view name) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == name) return i;
  }
  return std::nullopt;
}

bool Schema::is_label(std::string_view label) const {
  return std::find(target_labels.begin(), target_labels.end(), label) != target_labels.end();
}

const std::string& Schema::majority_label() const {
  return target_labels[0] == minority_label ? target_labels[1] : target_labels[0];
}

double as_number(const Value& v) { return std::get<double>(v); }
const std::string& as_category(const Value& v) { return std::get<std::string>(v); }

void validate_row(const Schema& schema, const Row& row) {
  if (row.values.size() != schema.num_features())
    throw DataError("row has " + std::to_string(row.values.size()) + " values, schema expects " +
                    std::to_string(schema.num_features()));
  for (std::size_t j = 0; j < row.values.size(); ++j) {
    const auto& f = schema.features[j];
    if (f.is_continuous()) {
      if (!std::holds_alternative<double>(row.values[j]) || !std::isfinite(std::get<double>(row.values[j])))
        throw DataError("feature '" + f.name + "' requires a finite number");
    } else {
      if (!std::holds_alternative<std::string>(row.values[j]) ||
          !f.category_index(std::get<std::string>(row.values[j])))
        throw DataError("feature '" + f.name + "' has an undeclared category");
    }
  }
  if (!schema.is_label(row.label)) throw DataError("undeclared target label '" + row.label + "'");
}

// ---------------------------------------------------------------- schema json

Schema parse_schema(std::string_view json_text) {
  Schema s;
  try {
    json j = json::parse(json_text);
    for (const auto& jf : j.at("features")) {
      Feature f;
      f.name = jf.at("name").get<std::string>();
      const auto kind = jf.at("kind").get<std::string>();
      if (kind == "continuous") {
        f.kind = FeatureKind::continuous;
      } else if (kind == "categorical") {
        f.kind = FeatureKind::categorical;
        f.categories = jf.at("categories").get<std::vector<std::string>>();
      } else {
        throw DataError("schema: unknown feature kind '" + kind + "'");
      }
      s.features.push_back(std::move(f));
    }
    const auto& jt = j.at("target");
    s.target_name = jt.at("name").get<std::string>();
    s.target_labels = jt.at("labels").get<std::vector<std::string>>();
    s.minority_label = jt.at("minority_label").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

std::string schema_to_json(const Schema& schema) {
  json features = json::array();
  for (const auto& f : schema.features) {
    json jf = {{"name", f.name}, {"kind", f.is_continuous() ? "continuous" : "categorical"}};
    if (!f.is_continuous()) jf["categories"] = f.categories;
    features.push_back(std::move(jf));
  }
  json j = {{"features", std::move(features)},
            {"target",
             {{"name", schema.target_name}, {"labels", schema.target_labels}, {"minority_label", schema.minority_label}}}};
  return j.dump(2) + "\n";
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace

Schema load_schema(const std::filesystem::path& path) { return parse_schema(read_file(path)); }

void save_schema(const std::filesystem::path& path, const Schema& schema) { write_file(path, schema_to_json(schema)); }

// ---------------------------------------------------------------------- csv

namespace {

// Splits one logical CSV record. Quoted fields may contain commas, doubled
// quotes and newlines; `in` is read further when a quoted field spans lines.
bool read_record(std::istream& in, std::vector<std::string>& cells) {
  cells.clear();
  std::string line;
  if (!std::getline(in, line)) return false;
  std::string cell;
  bool quoted = false;
  std::size_t i = 0;
  for (;;) {
    if (i >= line.size()) {
      if (quoted) {
        std::string more;
        if (!std::getline(in, more)) throw DataError("csv: unterminated quoted field");
        cell.push_back('\n');
        line = std::move(more);
        i = 0;
        continue;
      }
      break;
    }
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\r' && i + 1 == line.size()) {
      // CRLF line ending
    } else {
      cell.push_back(c);
    }
    ++i;
  }
  cells.push_back(std::move(cell));
  return true;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string number_text(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

}  // namespace

Table parse_csv(std::istream& in, const Schema& schema) {
  schema.validate();
  Table table{schema, {}};
  std::vector<std::string> cells;
  if (!read_record(in, cells)) throw DataError("csv: missing header row");
  const std::size_t m = schema.num_features();
  if (cells.size() != m + 1) throw DataError("csv: header has " + std::to_string(cells.size()) + " columns, expected " + std::to_string(m + 1));
  for (std::size_t j = 0; j < m; ++j) {
    if (cells[j] != schema.features[j].name)
      throw DataError("csv: header column " + std::to_string(j) + " is '" + cells[j] + "', expected '" +
                      schema.features[j].name + "'");
  }
  if (cells[m] != schema.target_name)
    throw DataError("csv: header column " + std::to_string(m) + " is '" + cells[m] + "', expected target '" +
                    schema.target_name + "'");

  std::size_t row_index = 0;
  while (read_record(in, cells)) {
    if (cells.size() == 1 && cells[0].empty()) continue;  // blank line
    auto where = [&](std::size_t col) {
      return "csv: row " + std::to_string(row_index) + ", column '" +
             (col < m ? schema.features[col].name : schema.target_name) + "'";
    };
    if (cells.size() != m + 1)
      throw DataError("csv: row " + std::to_string(row_index) + " has " + std::to_string(cells.size()) + " cells");
    Row row;
    row.values.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& cell = cells[j];
      if (cell.empty()) throw DataError(where(j) + ": missing value");
      const auto& f = schema.features[j];
      if (f.is_continuous()) {
        double x = 0.0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
        if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(x))
          throw DataError(where(j) + ": cannot parse number '" + cell + "'");
        row.values.emplace_back(x);
      } else {
        if (!f.category_index(cell)) throw DataError(where(j) + ": undeclared category '" + cell + "'");
        row.values.emplace_back(cell);
      }
    }
    if (cells[m].empty()) throw DataError(where(m) + ": missing value");
    if (!schema.is_label(cells[m])) throw DataError(where(m) + ": undeclared label '" + cells[m] + "'");
    row.label = cells[m];
    table.rows.push_back(std::move(row));
    ++row_index;
  }
  return table;
}

Table load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in, schema);
}

void write_csv(std::ostream& out, const Table& table) {
  const auto& schema = table.schema;
  for (const auto& f : schema.features) out << quote_if_needed(f.name) << ',';
  out << quote_if_needed(schema.target_name) << '\n';
  for (const auto& row : table.rows) {
    for (const auto& v : row.values) {
      if (std::holds_alternative<double>(v))
        out << number_text(std::get<double>(v));
      else
        out << quote_if_needed(std::get<std::string>(v));
      out << ',';
    }
    out << quote_if_needed(row.label) << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Table& table) {
  std::ostringstream ss;
  write_csv(ss, table);
  write_file(path, ss.str());
}

// ---------------------------------------------------------------- splitting

std::pair<Table, Table> split_train_test(const Table& table, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("split: test fraction must lie in (0, 1)");
  if (table.empty()) throw DataError("split: table is empty");
  const auto& labels = table.schema.target_labels;
  const std::size_t n = table.size();

  std::vector<std::vector<std::size_t>> by_label(labels.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::find(labels.begin(), labels.end(), table.rows[i].label);
    by_label[static_cast<std::size_t>(it - labels.begin())].push_back(i);
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (by_label[l].size() < 2)
      throw DataError("split: label '" + labels[l] + "' has fewer than 2 rows; cannot stratify");
  }

  const auto train_total = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - test_fraction)));
  if (train_total == 0 || train_total == n) throw DataError("split: test fraction leaves one side empty");

  // Largest-remainder allocation of the train quota per label, keeping at
  // least one row of every label on each side.
  std::vector<std::size_t> train_count(labels.size());
  std::vector<double> remainder(labels.size());
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    double exact = static_cast<double>(by_label[l].size()) * static_cast<double>(train_total) / static_cast<double>(n);
    train_count[l] = static_cast<std::size_t>(std::floor(exact));
    remainder[l] = exact - std::floor(exact);
    assigned += train_count[l];
  }
  while (assigned < train_total) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < labels.size(); ++l) {
      bool room_best = train_count[best] < by_label[best].size();
      bool room_l = train_count[l] < by_label[l].size();
      if ((room_l && !room_best) || (room_l && remainder[l] > remainder[best])) best = l;
    }
    ++train_count[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const std::size_t size = by_label[l].size();
    auto donor_for = [&](auto pred) {
      for (std::size_t o = 0; o < labels.size(); ++o)
        if (o != l && pred(o)) return o;
      return labels.size();
    };
    if (train_count[l] == 0) {
      std::size_t o = donor_for([&](std::size_t o) { return train_count[o] > 1; });
      if (o < labels.size()) {
        --train_count[o];
        ++train_count[l];
      }
    } else if (train_count[l] == size) {
      std::size_t o = donor_for([&](std::size_t o) { return train_count[o] + 1 < by_label[o].size(); });
      if (o < labels.size()) {
        ++train_count[o];
        --train_count[l];
      }
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    auto idx = by_label[l];
    rng.shuffle(idx);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_count[l]));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(train_count[l]), idx.end());
  }
  rng.shuffle(train_idx);
  rng.shuffle(test_idx);

  Table train{table.schema, {}};
  Table test{table.schema, {}};
  for (auto i : train_idx) train.rows.push_back(table.rows[i]);
  for (auto i : test_idx) test.rows.push_back(table.rows[i]);
  return {std::move(train), std::move(test)};
}

ImbalancedSplit make_imbalanced(const Table& train, const ImbalanceSpec& spec) {
  if (!(spec.q > 0.0 && spec.q <= 1.0)) throw DataError("imbalance: q must lie in (0, 1]");
  const auto& schema = train.schema;
  ImbalancedSplit out{Table{schema, {}}, Table{schema, {}}, Table{schema, {}}};
  for (const auto& row : train.rows) {
    if (row.label == schema.minority_label)
      out.minor_star.rows.push_back(row);
    else
      out.major.rows.push_back(row);
  }
  if (out.minor_star.empty()) throw DataError("imbalance: training set has no minority rows");

  const std::size_t n_star = out.minor_star.size();
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(spec.q * static_cast<double>(n_star))));
  Rng rng(spec.seed);
  auto perm = rng.permutation(n_star);
  perm.resize(std::min(keep, n_star));
  std::sort(perm.begin(), perm.end());
  for (auto i : perm) out.minor.rows.push_back(out.minor_star.rows[i]);
  return out;
}

std::map<std::string, std::size_t> class_counts(const Table& table) {
  std::map<std::string, std::size_t> counts;
  for (const auto& row : table.rows) ++counts[row.label];
  return counts;
}

Table concat(const Table& a, const Table& b) {
  if (!(a.schema == b.schema)) throw DataError("concat: schema mismatch");
  Table out{a.schema, a.rows};
  out.rows.insert(out.rows.end(), b.rows.begin(), b.rows.end());
  return out;
}

Table select_label(const Table& table, std::string_view label) {
  Table out{table.schema, {}};
  for (const auto& row : table.rows)
    if (row.label == label) out.rows.push_back(row);
  return out;
}

// ------------------------------------------------------------------ fixture

namespace {

double quantize4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", x);
  return std::strtod(buf, nullptr);
}

}  // namespace

Table generate_fixture(std::size_t n_major, std::size_t n_minor, std::size_t m_con, std::size_t m_cat,
                       std::uint64_t seed) {
  if (n_major == 0 || n_minor == 0 || m_con + m_cat == 0) throw DataError("fixture: counts must be positive");
  Schema schema;
  for (std::size_t j = 0; j < m_con; ++j) schema.features.push_back({"x" + std::to_string(j + 1), FeatureKind::continuous, {}});
  for (std::size_t j = 0; j < m_cat; ++j)
    schema.features.push_back({"c" + std::to_string(j + 1), FeatureKind::categorical, {"A", "B", "C"}});
  schema.target_name = "y";
  schema.target_labels = {"0", "1"};
  schema.minority_label = "1";
  schema.validate();

  constexpr double major_cat_p[3] = {0.5, 0.3, 0.2};
  constexpr double minor_cat_p[3] = {0.2, 0.3, 0.5};

  Rng rng(seed);
  Table table{schema, {}};
  auto draw_row = [&](bool minority) {
    Row row;
    const double centre = minority ? 6.0 : 5.0;
    for (std::size_t j = 0; j < m_con; ++j) row.values.emplace_back(quantize4(centre + rng.normal()));
    const double* p = minority ? minor_cat_p : major_cat_p;
    for (std::size_t j = 0; j < m_cat; ++j) {
      double u = rng.uniform();
      std::size_t c = u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
      row.values.emplace_back(schema.features[m_con + j].categories[c]);
    }
    row.label = minority ? "1" : "0";
    return row;
  };
  for (std::size_t i = 0; i < n_major; ++i) table.rows.push_back(draw_row(false));
  for (std::size_t i = 0; i < n_minor; ++i) table.rows.push_back(draw_row(true));
  rng.shuffle(table.rows);
  return table;
}

}  // namespace imbllm::data

#include "imbllm/textcodec.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace imbllm::text {

std::string_view to_string(Permutation p) { return p == Permutation::permute_xy ? "permute_xy" : "fix_y"; }

Permutation parse_permutation(std::string_view s) {
  if (s == "permute_xy") return Permutation::permute_xy;
  if (s == "fix_y") return Permutation::fix_y;
  throw CodecError("unknown permutation strategy '" + std::string(s) + "'");
}

std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::malformed_layout: return "malformed layout";
    case ParseErrorKind::duplicate_field: return "duplicate field";
    case ParseErrorKind::missing_field: return "missing field";
    case ParseErrorKind::out_of_vocab_value: return "out-of-vocabulary value";
    case ParseErrorKind::unparseable_number: return "unparseable number";
  }
  return "?";
}

// -------------------------------------------------------------------- vocab

Vocab::Vocab(const data::Schema& schema) {
  schema.validate();
  num_features_ = schema.num_features();
  add({TokenKind::bos, "<bos>"});
  add({TokenKind::eos, "<eos>"});
  add({TokenKind::is, "is"});
  add({TokenKind::sep, ","});
  for (char c : number_chars) add({TokenKind::character, std::string(1, c), 0, static_cast<std::size_t>(c)});
  for (std::size_t j = 0; j < num_features_; ++j) {
    name_tokens_.push_back(add({TokenKind::feature_name, schema.features[j].name, j}));
    field_by_name_.emplace(schema.features[j].name, j);
  }
  name_tokens_.push_back(add({TokenKind::target_name, schema.target_name, num_features_}));
  field_by_name_.emplace(schema.target_name, num_features_);
  category_tokens_.resize(num_features_);
  for (std::size_t j = 0; j < num_features_; ++j) {
    const auto& cats = schema.features[j].categories;
    for (std::size_t c = 0; c < cats.size(); ++c) category_tokens_[j].push_back(add({TokenKind::category, cats[c], j, c}));
  }
  for (std::size_t l = 0; l < schema.target_labels.size(); ++l)
    label_tokens_.push_back(add({TokenKind::label, schema.target_labels[l], num_features_, l}));
}

TokenId Vocab::add(TokenInfo info) {
  tokens_.push_back(std::move(info));
  return static_cast<TokenId>(tokens_.size() - 1);
}

std::optional<std::size_t> Vocab::field_of_name(std::string_view name) const {
  auto it = field_by_name_.find(name);
  if (it == field_by_name_.end()) return std::nullopt;
  return it->second;
}

std::optional<TokenId> Vocab::char_token(char c) const {
  auto pos = number_chars.find(c);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<TokenId>(4 + pos);
}

bool operator==(const Vocab& a, const Vocab& b) {
  if (a.tokens_.size() != b.tokens_.size()) return false;
  for (std::size_t i = 0; i < a.tokens_.size(); ++i) {
    const auto& x = a.tokens_[i];
    const auto& y = b.tokens_[i];
    if (x.kind != y.kind || x.text != y.text || x.field != y.field || x.value != y.value) return false;
  }
  return true;
}

Vocab build_vocab(const data::Schema& schema) { return Vocab(schema); }

// ---------------------------------------------------------- number rendering

std::string format_number(double x, int sig_digits) {
  if (!std::isfinite(x)) throw CodecError("format_number: non-finite value");
  if (sig_digits < 1) throw CodecError("format_number: sig_digits must be >= 1");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*e", sig_digits - 1, x);
  std::string_view s(buf);
  bool negative = false;
  if (!s.empty() && s.front() == '-') {
    negative = true;
    s.remove_prefix(1);
  }
  auto e_pos = s.find('e');
  std::string digits;
  for (char c : s.substr(0, e_pos))
    if (c != '.') digits.push_back(c);
  int exponent = std::atoi(std::string(s.substr(e_pos + 1)).c_str());

  if (std::all_of(digits.begin(), digits.end(), [](char c) { return c == '0'; })) return "0";

  std::string int_part;
  std::string frac_part;
  if (exponent >= 0) {
    const auto n_int = static_cast<std::size_t>(exponent) + 1;
    if (n_int >= digits.size()) {
      int_part = digits + std::string(n_int - digits.size(), '0');
    } else {
      int_part = digits.substr(0, n_int);
      frac_part = digits.substr(n_int);
    }
  } else {
    int_part = "0";
    frac_part = std::string(static_cast<std::size_t>(-exponent - 1), '0') + digits;
  }
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();

  std::string out = negative ? "-" : "";
  out += int_part;
  if (!frac_part.empty()) out += "." + frac_part;
  return out;
}

// --------------------------------------------------------------- sentences

Sentence row_to_sentence(const data::Row& row, const data::Schema& schema, bool include_categorical, int sig_digits) {
  Sentence s;
  for (std::size_t j = 0; j < schema.num_features(); ++j) {
    const auto& f = schema.features[j];
    if (f.is_continuous()) {
      s.fields.push_back({f.name, format_number(data::as_number(row.values[j]), sig_digits)});
    } else if (include_categorical) {
      s.fields.push_back({f.name, data::as_category(row.values[j])});
    }
  }
  s.fields.push_back({schema.target_name, row.label});
  return s;
}

Sentence permute_sentence(const Sentence& sentence, std::string_view target_name, Permutation strategy, Rng& rng) {
  Sentence out = sentence;
  if (strategy == Permutation::permute_xy) {
    rng.shuffle(out.fields);
    return out;
  }
  auto it = std::find_if(out.fields.begin(), out.fields.end(), [&](const Field& f) { return f.name == target_name; });
  if (it == out.fields.end()) throw CodecError("permute_sentence: sentence has no target field");
  Field target = *it;
  out.fields.erase(it);
  rng.shuffle(out.fields);
  out.fields.insert(out.fields.begin(), std::move(target));
  return out;
}

std::string render(const Sentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.fields.size(); ++i) {
    if (i > 0) out += ", ";
    out += sentence.fields[i].name + " is " + sentence.fields[i].value_text;
  }
  return out;
}

std::string render_tokens(std::span<const TokenId> tokens, const Vocab& vocab) {
  std::string out;
  TokenKind prev = TokenKind::bos;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab.size()) {
      out += " <?>";
      continue;
    }
    const auto& info = vocab.info(tokens[i]);
    switch (info.kind) {
      case TokenKind::bos:
      case TokenKind::eos: break;
      case TokenKind::sep: out += ","; break;
      case TokenKind::character:
        if (prev != TokenKind::character) out += " ";
        out += info.text;
        break;
      default:
        if (!out.empty()) out += " ";
        out += info.text;
    }
    prev = info.kind;
  }
  return out;
}

TokenSeq encode(const Sentence& sentence, const Vocab& vocab, bool terminate) {
  TokenSeq ids;
  ids.push_back(Vocab::bos);
  for (std::size_t i = 0; i < sentence.fields.size(); ++i) {
    const auto& field = sentence.fields[i];
    auto index = vocab.field_of_name(field.name);
    if (!index) throw CodecError("encode: unknown field name '" + field.name + "'");
    const TokenId name = vocab.name_token(*index);
    ids.push_back(name);
    ids.push_back(Vocab::is);
    const auto& name_info = vocab.info(name);
    if (name_info.kind == TokenKind::target_name) {
      bool found = false;
      for (std::size_t l = 0; l < 2; ++l) {
        if (vocab.text(vocab.label_token(l)) == field.value_text) {
          ids.push_back(vocab.label_token(l));
          found = true;
        }
      }
      if (!found) throw CodecError("encode: unknown label '" + field.value_text + "'");
    } else {
      // categorical features own at least one category token
      bool categorical = false;
      bool found = false;
      for (TokenId id = 0; id < vocab.size(); ++id) {
        const auto& info = vocab.info(id);
        if (info.kind == TokenKind::category && info.field == *index) {
          categorical = true;
          if (info.text == field.value_text) {
            ids.push_back(id);
            found = true;
            break;
          }
        }
      }
      if (categorical && !found)
        throw CodecError("encode: unknown category '" + field.value_text + "' for '" + field.name + "'");
      if (!categorical) {
        if (field.value_text.empty()) throw CodecError("encode: empty numeric value for '" + field.name + "'");
        for (char c : field.value_text) {
          auto tok = vocab.char_token(c);
          if (!tok) throw CodecError("encode: invalid numeric character in '" + field.value_text + "'");
          ids.push_back(*tok);
        }
      }
    }
    if (i + 1 < sentence.fields.size()) ids.push_back(Vocab::sep);
  }
  if (terminate) ids.push_back(Vocab::eos);
  return ids;
}

// ------------------------------------------------------------------ decoding

DecodeResult decode_to_row(std::span<const TokenId> tokens, const Vocab& vocab, const data::Schema& schema) {
  auto fail = [](ParseErrorKind kind, std::size_t pos, std::string detail) -> DecodeResult {
    return ParseError{kind, pos, std::move(detail)};
  };
  const std::size_t m = schema.num_features();
  const std::size_t n = tokens.size();
  for (std::size_t i = 0; i < n; ++i)
    if (tokens[i] >= vocab.size()) return fail(ParseErrorKind::malformed_layout, i, "token id out of range");

  if (n == 0 || tokens[0] != Vocab::bos) return fail(ParseErrorKind::malformed_layout, 0, "expected BOS");

  std::vector<std::optional<data::Value>> values(m);
  std::optional<std::string> label;
  std::size_t pos = 1;
  for (;;) {
    if (pos >= n) return fail(ParseErrorKind::malformed_layout, pos, "sequence ends before a field name");
    const auto& name_info = vocab.info(tokens[pos]);
    if (name_info.kind != TokenKind::feature_name && name_info.kind != TokenKind::target_name)
      return fail(ParseErrorKind::malformed_layout, pos, "expected a field name");
    const std::size_t field = name_info.field;
    const bool is_target = name_info.kind == TokenKind::target_name;
    if (is_target ? label.has_value() : values[field].has_value())
      return fail(ParseErrorKind::duplicate_field, pos, "field '" + name_info.text + "' repeated");
    ++pos;
    if (pos >= n || tokens[pos] != Vocab::is) return fail(ParseErrorKind::malformed_layout, pos, "expected IS");
    ++pos;
    if (pos >= n) return fail(ParseErrorKind::malformed_layout, pos, "sequence ends before a value");
    const auto& value_info = vocab.info(tokens[pos]);
    if (is_target) {
      if (value_info.kind != TokenKind::label)
        return fail(ParseErrorKind::out_of_vocab_value, pos, "expected a target label");
      label = value_info.text;
      ++pos;
    } else if (!schema.features[field].is_continuous()) {
      if (value_info.kind != TokenKind::category || value_info.field != field)
        return fail(ParseErrorKind::out_of_vocab_value, pos, "expected a category of '" + name_info.text + "'");
      values[field] = value_info.text;
      ++pos;
    } else {
      const std::size_t start = pos;
      std::string textv;
      while (pos < n && vocab.is_number_char(tokens[pos])) textv += vocab.text(tokens[pos++]);
      if (textv.empty()) return fail(ParseErrorKind::out_of_vocab_value, start, "expected numeric characters");
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(textv.data(), textv.data() + textv.size(), x);
      if (ec != std::errc() || ptr != textv.data() + textv.size() || !std::isfinite(x))
        return fail(ParseErrorKind::unparseable_number, start, "cannot parse '" + textv + "'");
      values[field] = x;
    }
    if (pos >= n) return fail(ParseErrorKind::malformed_layout, pos, "missing EOS");
    if (tokens[pos] == Vocab::sep) {
      ++pos;
      continue;
    }
    if (tokens[pos] == Vocab::eos) {
      if (pos + 1 != n) return fail(ParseErrorKind::malformed_layout, pos + 1, "tokens after EOS");
      break;
    }
    return fail(ParseErrorKind::malformed_layout, pos, "expected SEP or EOS");
  }

  if (!label) return fail(ParseErrorKind::missing_field, pos, "target field missing");
  data::Row row;
  row.label = *label;
  for (std::size_t j = 0; j < m; ++j) {
    if (!values[j]) return fail(ParseErrorKind::missing_field, pos, "feature '" + schema.features[j].name + "' missing");
    row.values.push_back(std::move(*values[j]));
  }
  return row;
}

}  // namespace imbllm::text

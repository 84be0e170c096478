#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "imbllm/data.hpp"
#include "imbllm/rng.hpp"

namespace imbllm::text {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

enum class Permutation { permute_xy, fix_y };

std::string_view to_string(Permutation p);
Permutation parse_permutation(std::string_view s);

struct CodecConfig {
  int sig_digits = 4;
  Permutation permutation = Permutation::fix_y;
};

/// One "name is value" clause of a serialized row.
struct Field {
  std::string name;
  std::string value_text;

  friend bool operator==(const Field&, const Field&) = default;
  friend auto operator<=>(const Field&, const Field&) = default;
};

struct Sentence {
  std::vector<Field> fields;
};

enum class TokenKind { bos, eos, is, sep, character, feature_name, target_name, category, label };

struct TokenInfo {
  TokenKind kind;
  std::string text;
  std::size_t field = 0;  // feature index, or num_features for the target
  std::size_t value = 0;  // category / label index
};

/// Closed token vocabulary for one schema.
///
/// Ids are assigned in a fixed order: BOS, EOS, IS, SEP; the characters
/// 0-9 . -; feature names in schema order; the target name; each feature's
/// categories in declared order; the target labels. Category tokens are
/// scoped to their feature, so equal strings in two features stay distinct.
class Vocab {
 public:
  static constexpr TokenId bos = 0;
  static constexpr TokenId eos = 1;
  static constexpr TokenId is = 2;
  static constexpr TokenId sep = 3;
  static constexpr std::string_view number_chars = "0123456789.-";

  explicit Vocab(const data::Schema& schema);

  std::size_t size() const { return tokens_.size(); }
  const TokenInfo& info(TokenId id) const { return tokens_.at(id); }
  const std::string& text(TokenId id) const { return tokens_.at(id).text; }

  std::size_t num_features() const { return num_features_; }
  /// Field index for a feature or target name (target = num_features()).
  std::optional<std::size_t> field_of_name(std::string_view name) const;
  TokenId name_token(std::size_t field) const { return name_tokens_.at(field); }
  TokenId category_token(std::size_t feature, std::size_t category) const {
    return category_tokens_.at(feature).at(category);
  }
  TokenId label_token(std::size_t label) const { return label_tokens_.at(label); }
  std::optional<TokenId> char_token(char c) const;
  bool is_number_char(TokenId id) const { return tokens_.at(id).kind == TokenKind::character; }

  friend bool operator==(const Vocab& a, const Vocab& b);

 private:
  TokenId add(TokenInfo info);

  std::vector<TokenInfo> tokens_;
  std::size_t num_features_ = 0;
  std::vector<TokenId> name_tokens_;
  std::vector<std::vector<TokenId>> category_tokens_;
  std::vector<TokenId> label_tokens_;
  std::map<std::string, std::size_t, std::less<>> field_by_name_;
};

Vocab build_vocab(const data::Schema& schema);

/// Shortest plain decimal with at most `sig_digits` significant digits,
/// rounded half-to-even on the exact binary value. No exponent notation.
std::string format_number(double x, int sig_digits);

Sentence row_to_sentence(const data::Row& row, const data::Schema& schema, bool include_categorical,
                         int sig_digits = 4);

Sentence permute_sentence(const Sentence& sentence, std::string_view target_name, Permutation strategy, Rng& rng);

/// Human-readable "X is v, Y is w" form.
std::string render(const Sentence& sentence);
std::string render_tokens(std::span<const TokenId> tokens, const Vocab& vocab);

/// BOS, name IS value (SEP name IS value)*, EOS. `terminate = false` drops EOS (prompts).
TokenSeq encode(const Sentence& sentence, const Vocab& vocab, bool terminate = true);

enum class ParseErrorKind { malformed_layout, duplicate_field, missing_field, out_of_vocab_value, unparseable_number };

std::string_view to_string(ParseErrorKind kind);

struct ParseError {
  ParseErrorKind kind;
  std::size_t position;  // first offending token index
  std::string detail;
};

using DecodeResult = std::variant<data::Row, ParseError>;

/// Total over arbitrary token sequences.
DecodeResult decode_to_row(std::span<const TokenId> tokens, const Vocab& vocab, const data::Schema& schema);

inline bool decoded(const DecodeResult& r) { return std::holds_alternative<data::Row>(r); }

/// Token-level state machine for well-formed row sequences, used to mask
/// generation. It permits only: an unemitted field name at a field start, IS
/// after a name, value tokens legal for the current field, and SEP/EOS once a
/// value is complete (EOS only when every field has been emitted). Numbers
/// follow `-?digit+(.digit+)?` and are capped at `max_number_chars`.
class RowGrammar {
 public:
  RowGrammar(const data::Schema& schema, const Vocab& vocab, std::size_t max_number_chars = 12);

  void reset();
  bool accepts(TokenId id) const;
  /// Throws CodecError when `id` is not allowed in the current state.
  void advance(TokenId id);
  void advance(std::span<const TokenId> ids);
  std::vector<TokenId> allowed() const;

  bool finished() const { return phase_ == Phase::done; }
  /// True while the next token must be a field name.
  bool at_field_start() const { return phase_ == Phase::name; }
  bool all_fields_emitted() const { return emitted_count_ == emitted_.size(); }
  std::size_t tokens_consumed() const { return consumed_; }
  /// Upper bound on the length of any sequence the grammar accepts.
  std::size_t max_sequence_length() const;

 private:
  enum class Phase { start, name, is, value, number, after_value, done };

  bool value_complete() const;

  const data::Schema* schema_;
  const Vocab* vocab_;
  std::size_t max_number_chars_;
  Phase phase_ = Phase::start;
  std::vector<bool> emitted_;
  std::size_t emitted_count_ = 0;
  std::size_t current_field_ = 0;
  std::size_t consumed_ = 0;
  // number sub-state
  std::size_t num_len_ = 0;
  bool num_has_point_ = false;
  char num_last_ = 0;
};

}  // namespace imbllm::text

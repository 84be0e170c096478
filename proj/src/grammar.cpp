#include "imbllm/textcodec.hpp"

namespace imbllm::text {

RowGrammar::RowGrammar(const data::Schema& schema, const Vocab& vocab, std::size_t max_number_chars)
    : schema_(&schema), vocab_(&vocab), max_number_chars_(max_number_chars) {
  if (max_number_chars_ < 1) throw CodecError("RowGrammar: max_number_chars must be >= 1");
  reset();
}

void RowGrammar::reset() {
  phase_ = Phase::start;
  emitted_.assign(schema_->num_features() + 1, false);
  emitted_count_ = 0;
  current_field_ = 0;
  consumed_ = 0;
  num_len_ = 0;
  num_has_point_ = false;
  num_last_ = 0;
}

std::size_t RowGrammar::max_sequence_length() const {
  std::size_t len = 2;  // BOS, EOS
  for (std::size_t j = 0; j < schema_->num_features(); ++j)
    len += 3 + (schema_->features[j].is_continuous() ? max_number_chars_ : 1);
  len += 3 + 1;  // target field
  return len - 1;  // no SEP after the last field
}

bool RowGrammar::value_complete() const {
  return phase_ == Phase::after_value || (phase_ == Phase::number && num_last_ >= '0' && num_last_ <= '9');
}

bool RowGrammar::accepts(TokenId id) const {
  if (id >= vocab_->size()) return false;
  const auto& info = vocab_->info(id);
  const std::size_t target = schema_->num_features();
  switch (phase_) {
    case Phase::start: return id == Vocab::bos;
    case Phase::name:
      return (info.kind == TokenKind::feature_name || info.kind == TokenKind::target_name) && !emitted_[info.field];
    case Phase::is: return id == Vocab::is;
    case Phase::value:
      if (current_field_ == target) return info.kind == TokenKind::label;
      if (!schema_->features[current_field_].is_continuous())
        return info.kind == TokenKind::category && info.field == current_field_;
      if (info.kind != TokenKind::character) return false;
      if (info.text[0] == '-') return max_number_chars_ >= 2;
      return info.text[0] != '.';
    case Phase::number: {
      if (info.kind == TokenKind::character) {
        const char c = info.text[0];
        if (c == '-') return false;
        if (c == '.')
          return !num_has_point_ && num_last_ >= '0' && num_last_ <= '9' && num_len_ + 2 <= max_number_chars_;
        return num_len_ < max_number_chars_;
      }
      [[fallthrough]];
    }
    case Phase::after_value:
      if (!value_complete()) return false;
      if (id == Vocab::sep) return !all_fields_emitted();
      if (id == Vocab::eos) return all_fields_emitted();
      return false;
    case Phase::done: return false;
  }
  return false;
}

void RowGrammar::advance(TokenId id) {
  if (!accepts(id)) throw CodecError("RowGrammar: token " + std::to_string(id) + " not allowed at position " +
                                     std::to_string(consumed_));
  const auto& info = vocab_->info(id);
  ++consumed_;
  switch (phase_) {
    case Phase::start: phase_ = Phase::name; return;
    case Phase::name:
      current_field_ = info.field;
      emitted_[current_field_] = true;
      ++emitted_count_;
      phase_ = Phase::is;
      return;
    case Phase::is: phase_ = Phase::value; return;
    case Phase::value:
      if (info.kind == TokenKind::character) {
        phase_ = Phase::number;
        num_len_ = 1;
        num_has_point_ = false;
        num_last_ = info.text[0];
      } else {
        phase_ = Phase::after_value;
      }
      return;
    case Phase::number:
      if (info.kind == TokenKind::character) {
        ++num_len_;
        num_last_ = info.text[0];
        if (num_last_ == '.') num_has_point_ = true;
        return;
      }
      [[fallthrough]];
    case Phase::after_value: phase_ = id == Vocab::eos ? Phase::done : Phase::name; return;
    case Phase::done: return;
  }
}

void RowGrammar::advance(std::span<const TokenId> ids) {
  for (auto id : ids) advance(id);
}

std::vector<TokenId> RowGrammar::allowed() const {
  std::vector<TokenId> out;
  for (TokenId id = 0; id < vocab_->size(); ++id)
    if (accepts(id)) out.push_back(id);
  return out;
}

}  // namespace imbllm::text

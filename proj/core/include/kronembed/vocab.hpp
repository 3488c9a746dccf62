#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kronembed/byte_codec.hpp"

namespace kronembed {

enum class TokenKind { Normal, Special, ByteFallback };

enum class TokenizerFamily { ByteLevelBpe, SentencePiece, PlainTsv };

enum class VocabFormat { Gpt2Json, TokenizerJson, Tsv, Auto };

std::string_view to_string(TokenKind kind) noexcept;
std::string_view to_string(TokenizerFamily family) noexcept;
std::string_view to_string(VocabFormat format) noexcept;
/// Accepts the CLI spellings gpt2-json, tokenizer-json, tsv, auto.
VocabFormat parse_vocab_format(std::string_view name);

struct TokenByteRecord {
  std::uint32_t token_id = 0;
  std::string piece;
  Bytes bytes;
  TokenKind kind = TokenKind::Normal;
  std::optional<std::uint32_t> truncated_at;
};

/// Immutable after loading. Records are dense: records()[i].token_id == i.
class Vocabulary {
 public:
  /// Throws FormatError on id gaps, duplicate ids or an empty record list.
  Vocabulary(std::vector<TokenByteRecord> records, TokenizerFamily family, std::string name);

  std::size_t size() const noexcept { return records_.size(); }
  const TokenByteRecord& operator[](std::uint32_t id) const { return records_.at(id); }
  const std::vector<TokenByteRecord>& records() const noexcept { return records_; }
  TokenizerFamily family() const noexcept { return family_; }
  const std::string& name() const noexcept { return name_; }

  std::optional<std::uint32_t> find_piece(std::string_view piece) const;
  /// Lowest id whose decoded bytes equal `bytes`.
  std::optional<std::uint32_t> find_bytes(std::string_view bytes) const;
  std::size_t max_byte_length() const noexcept;

  /// Sets truncated_at = d_p on every record longer than d_p bytes.
  void annotate_truncation(std::uint32_t d_p);

 private:
  std::vector<TokenByteRecord> records_;
  TokenizerFamily family_;
  std::string name_;
  std::unordered_map<std::string, std::uint32_t> by_piece_;
  std::unordered_map<std::string, std::uint32_t> by_bytes_;
};

/// The 256-entry byte-level BPE alphabet: byte -> printable codepoint.
const std::array<char32_t, 256>& bytelevel_alphabet();

/// Maps a byte-level BPE piece back to raw bytes. Throws FormatError naming the
/// first codepoint outside the alphabet.
Bytes decode_bytelevel_bpe(std::string_view piece);
/// Inverse of decode_bytelevel_bpe.
std::string encode_bytelevel_bpe(std::string_view bytes);

/// `<0xNN>` (two uppercase hex digits) decodes to the single byte NN as a
/// ByteFallback token; otherwise U+2581 becomes 0x20 and the piece is Normal.
std::pair<Bytes, TokenKind> decode_sentencepiece(std::string_view piece);

const std::set<std::string>& default_special_pieces();

struct LoadOptions {
  VocabFormat format = VocabFormat::Auto;
  /// Overrides family detection. gpt2-json is always byte-level BPE.
  std::optional<TokenizerFamily> family;
  /// Added to the built-in default special list.
  std::set<std::string> special_pieces;
  /// When set, records longer than this are flagged as truncated.
  std::optional<std::uint32_t> d_p;
};

Vocabulary load_vocab(const std::filesystem::path& path, const LoadOptions& options = {});
/// Parses in-memory file contents. `name` is used in diagnostics.
Vocabulary parse_vocab(std::string_view contents, const LoadOptions& options, std::string name = "<memory>");

/// Writes `<id>\t<bytes>` lines. Tab, newline, carriage return, backslash and
/// other control bytes are escaped so every record survives a reload.
void write_tsv(const Vocabulary& vocab, std::ostream& out);

/// Fraction of Normal and ByteFallback tokens with byte length <= d_p, for
/// each requested d_p. Special tokens are excluded entirely.
std::vector<double> coverage_stats(const Vocabulary& vocab, const std::vector<std::uint32_t>& dp_values);

}  // namespace kronembed

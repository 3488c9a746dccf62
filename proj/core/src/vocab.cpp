#include "kronembed/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kronembed/error.hpp"
#include "kronembed/utf8.hpp"

namespace kronembed {
namespace {

using json = nlohmann::json;

constexpr std::string_view kSpMarker = "\xE2\x96\x81";  // U+2581

std::string codepoint_name(char32_t cp) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(cp));
  return buf;
}

int hex_digit(char c) noexcept {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::optional<unsigned char> byte_fallback_value(std::string_view piece) noexcept {
  if (piece.size() != 6 || piece.substr(0, 3) != "<0x" || piece[5] != '>') return std::nullopt;
  const int hi = hex_digit(piece[3]);
  const int lo = hex_digit(piece[4]);
  if (hi < 0 || lo < 0) return std::nullopt;
  return static_cast<unsigned char>(hi * 16 + lo);
}

const std::unordered_map<char32_t, unsigned char>& bytelevel_inverse() {
  static const auto table = [] {
    std::unordered_map<char32_t, unsigned char> inv;
    const auto& fwd = bytelevel_alphabet();
    for (unsigned b = 0; b < 256; ++b) inv.emplace(fwd[b], static_cast<unsigned char>(b));
    return inv;
  }();
  return table;
}

// Byte-level BPE stores raw bytes outside the printable ranges as U+0100..U+0143.
bool has_remapped_codepoint(std::string_view piece) {
  if (!utf8::is_valid(piece)) return false;
  for (char32_t cp : utf8::decode(piece)) {
    if (cp >= 0x100 && cp <= 0x143) return true;
  }
  return false;
}

bool looks_sentencepiece(std::string_view piece) {
  return piece.find(kSpMarker) != std::string_view::npos || byte_fallback_value(piece).has_value();
}

struct RawEntry {
  std::uint32_t id;
  std::string piece;
  bool special = false;
  // Added (non-special) tokens are plain text regardless of family.
  bool literal = false;
  std::string where;
};

TokenizerFamily detect_family(const std::vector<RawEntry>& entries) {
  bool remapped = false;
  for (const auto& e : entries) {
    if (e.special || e.literal) continue;
    if (looks_sentencepiece(e.piece)) return TokenizerFamily::SentencePiece;
    remapped = remapped || has_remapped_codepoint(e.piece);
  }
  return remapped ? TokenizerFamily::ByteLevelBpe : TokenizerFamily::PlainTsv;
}

TokenByteRecord decode_entry(const RawEntry& e, TokenizerFamily family,
                             const std::set<std::string>& specials) {
  TokenByteRecord r;
  r.token_id = e.id;
  r.piece = e.piece;
  if (e.special || specials.count(e.piece) != 0) {
    r.kind = TokenKind::Special;
    r.bytes = e.piece;
    return r;
  }
  if (e.literal) {
    r.bytes = e.piece;
    return r;
  }
  switch (family) {
    case TokenizerFamily::ByteLevelBpe:
      try {
        r.bytes = decode_bytelevel_bpe(e.piece);
      } catch (const FormatError& err) {
        throw FormatError(e.where + ": " + err.what());
      }
      break;
    case TokenizerFamily::SentencePiece: {
      auto [bytes, kind] = decode_sentencepiece(e.piece);
      r.bytes = std::move(bytes);
      r.kind = kind;
      break;
    }
    case TokenizerFamily::PlainTsv:
      r.bytes = e.piece;
      break;
  }
  return r;
}

Vocabulary assemble(std::vector<RawEntry> entries, TokenizerFamily family, const LoadOptions& options,
                    std::string name) {
  std::set<std::string> specials = default_special_pieces();
  specials.insert(options.special_pieces.begin(), options.special_pieces.end());

  std::stable_sort(entries.begin(), entries.end(), [](const RawEntry& a, const RawEntry& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && entries[i].id == entries[i - 1].id) {
      throw FormatError(entries[i].where + ": duplicate id " + std::to_string(entries[i].id) + " (also " +
                        entries[i - 1].where + ")");
    }
    if (entries[i].id != i) {
      throw FormatError(entries[i].where + ": ids are not dense, id " + std::to_string(i) + " is missing");
    }
  }
  std::vector<TokenByteRecord> records;
  records.reserve(entries.size());
  for (const auto& e : entries) records.push_back(decode_entry(e, family, specials));

  Vocabulary vocab(std::move(records), family, std::move(name));
  if (options.d_p) vocab.annotate_truncation(*options.d_p);
  return vocab;
}

std::uint32_t checked_id(const json& value, const std::string& where) {
  if (!value.is_number_integer()) throw FormatError(where + ": id is not an integer");
  const auto id = value.get<std::int64_t>();
  if (id < 0 || id > std::int64_t{UINT32_MAX}) throw FormatError(where + ": id out of range");
  return static_cast<std::uint32_t>(id);
}

json parse_json(std::string_view contents, const std::string& name) {
  try {
    return json::parse(contents.begin(), contents.end());
  } catch (const json::parse_error& err) {
    throw FormatError(name + ": " + err.what());
  }
}

Vocabulary parse_gpt2_json(const json& doc, const LoadOptions& options, std::string name) {
  if (!doc.is_object()) throw FormatError(name + ": expected a JSON object mapping piece to id");
  std::vector<RawEntry> entries;
  entries.reserve(doc.size());
  for (const auto& [piece, id] : doc.items()) {
    const std::string where = name + ": entry \"" + piece + "\"";
    entries.push_back({checked_id(id, where), piece, false, false, where});
  }
  return assemble(std::move(entries), TokenizerFamily::ByteLevelBpe, options, std::move(name));
}

Vocabulary parse_tokenizer_json(const json& doc, const LoadOptions& options, std::string name) {
  if (!doc.is_object() || !doc.contains("model") || !doc["model"].is_object() || !doc["model"].contains("vocab")) {
    throw FormatError(name + ": missing model.vocab");
  }
  const json& vocab = doc["model"]["vocab"];
  std::vector<RawEntry> entries;
  if (vocab.is_object()) {
    for (const auto& [piece, id] : vocab.items()) {
      const std::string where = name + ": model.vocab \"" + piece + "\"";
      entries.push_back({checked_id(id, where), piece, false, false, where});
    }
  } else if (vocab.is_array()) {
    // Unigram models list [piece, score] pairs in id order.
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const std::string where = name + ": model.vocab[" + std::to_string(i) + "]";
      const json& item = vocab[i];
      if (!item.is_array() || item.empty() || !item[0].is_string()) {
        throw FormatError(where + ": expected [piece, score]");
      }
      entries.push_back({static_cast<std::uint32_t>(i), item[0].get<std::string>(), false, false, where});
    }
  } else {
    throw FormatError(name + ": model.vocab must be an object or array");
  }

  std::unordered_map<std::uint32_t, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!index.emplace(entries[i].id, i).second) {
      throw FormatError(entries[i].where + ": duplicate id " + std::to_string(entries[i].id));
    }
  }

  if (doc.contains("added_tokens") && !doc["added_tokens"].is_null()) {
    const json& added = doc["added_tokens"];
    if (!added.is_array()) throw FormatError(name + ": added_tokens must be an array");
    for (std::size_t i = 0; i < added.size(); ++i) {
      const std::string where = name + ": added_tokens[" + std::to_string(i) + "]";
      const json& tok = added[i];
      if (!tok.is_object() || !tok.contains("id") || !tok.contains("content") || !tok["content"].is_string()) {
        throw FormatError(where + ": expected {id, content, special}");
      }
      const std::uint32_t id = checked_id(tok["id"], where);
      const auto content = tok["content"].get<std::string>();
      const bool special = tok.value("special", false);
      if (auto it = index.find(id); it != index.end()) {
        RawEntry& existing = entries[it->second];
        if (existing.piece != content) {
          throw FormatError(where + ": id " + std::to_string(id) + " already maps to \"" + existing.piece + "\"");
        }
        existing.special = existing.special || special;
      } else {
        index.emplace(id, entries.size());
        entries.push_back({id, content, special, !special, where});
      }
    }
  }

  const TokenizerFamily family = options.family.value_or(detect_family(entries));
  return assemble(std::move(entries), family, options, std::move(name));
}

std::string unescape_tsv(std::string_view s, const std::string& where) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    const char next = s[i + 1];
    switch (next) {
      case 't': out.push_back('\t'); ++i; break;
      case 'n': out.push_back('\n'); ++i; break;
      case 'r': out.push_back('\r'); ++i; break;
      case '\\': out.push_back('\\'); ++i; break;
      case 'x': {
        const int hi = i + 2 < s.size() ? hex_digit(static_cast<char>(std::toupper(s[i + 2]))) : -1;
        const int lo = i + 3 < s.size() ? hex_digit(static_cast<char>(std::toupper(s[i + 3]))) : -1;
        if (hi < 0 || lo < 0) throw FormatError(where + ": malformed \\x escape");
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 3;
        break;
      }
      default: out.push_back('\\'); break;
    }
  }
  return out;
}

Vocabulary parse_tsv(std::string_view contents, const LoadOptions& options, std::string name) {
  std::vector<RawEntry> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const std::string where = name + ":" + std::to_string(line_no);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw FormatError(where + ": expected <id><TAB><piece>");
    const std::string_view id_text = line.substr(0, tab);
    std::uint64_t id = 0;
    if (id_text.empty() || id_text.size() > 10 ||
        !std::all_of(id_text.begin(), id_text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw FormatError(where + ": invalid id \"" + std::string(id_text) + "\"");
    }
    for (char c : id_text) id = id * 10 + static_cast<std::uint64_t>(c - '0');
    if (id > UINT32_MAX) throw FormatError(where + ": id out of range");
    entries.push_back({static_cast<std::uint32_t>(id), unescape_tsv(line.substr(tab + 1), where), false, false, where});
  }

  TokenizerFamily family = TokenizerFamily::PlainTsv;
  if (options.family) {
    family = *options.family;
  } else if (std::any_of(entries.begin(), entries.end(), [](const RawEntry& e) { return looks_sentencepiece(e.piece); })) {
    family = TokenizerFamily::SentencePiece;
  }
  return assemble(std::move(entries), family, options, std::move(name));
}

}  // namespace

std::string_view to_string(TokenKind kind) noexcept {
  switch (kind) {
    case TokenKind::Normal: return "normal";
    case TokenKind::Special: return "special";
    case TokenKind::ByteFallback: return "byte-fallback";
  }
  return "?";
}

std::string_view to_string(TokenizerFamily family) noexcept {
  switch (family) {
    case TokenizerFamily::ByteLevelBpe: return "byte-level-bpe";
    case TokenizerFamily::SentencePiece: return "sentencepiece";
    case TokenizerFamily::PlainTsv: return "plain";
  }
  return "?";
}

std::string_view to_string(VocabFormat format) noexcept {
  switch (format) {
    case VocabFormat::Gpt2Json: return "gpt2-json";
    case VocabFormat::TokenizerJson: return "tokenizer-json";
    case VocabFormat::Tsv: return "tsv";
    case VocabFormat::Auto: return "auto";
  }
  return "?";
}

VocabFormat parse_vocab_format(std::string_view name) {
  for (auto f : {VocabFormat::Gpt2Json, VocabFormat::TokenizerJson, VocabFormat::Tsv, VocabFormat::Auto}) {
    if (name == to_string(f)) return f;
  }
  throw FormatError("unknown vocabulary format \"" + std::string(name) + "\"");
}

Vocabulary::Vocabulary(std::vector<TokenByteRecord> records, TokenizerFamily family, std::string name)
    : records_(std::move(records)), family_(family), name_(std::move(name)) {
  if (records_.empty()) throw FormatError(name_ + ": vocabulary is empty");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.token_id != i) {
      if (i > 0 && r.token_id == records_[i - 1].token_id) {
        throw FormatError(name_ + ": duplicate id " + std::to_string(r.token_id));
      }
      throw FormatError(name_ + ": ids are not dense, expected " + std::to_string(i) + " but found " +
                        std::to_string(r.token_id));
    }
    if (r.kind == TokenKind::ByteFallback && r.bytes.size() != 1) {
      throw FormatError(name_ + ": byte-fallback token " + std::to_string(i) + " must have exactly one byte");
    }
    by_piece_.emplace(r.piece, r.token_id);
    by_bytes_.emplace(r.bytes, r.token_id);
  }
}

std::optional<std::uint32_t> Vocabulary::find_piece(std::string_view piece) const {
  if (auto it = by_piece_.find(std::string(piece)); it != by_piece_.end()) return it->second;
  return std::nullopt;
}

std::optional<std::uint32_t> Vocabulary::find_bytes(std::string_view bytes) const {
  if (auto it = by_bytes_.find(std::string(bytes)); it != by_bytes_.end()) return it->second;
  return std::nullopt;
}

std::size_t Vocabulary::max_byte_length() const noexcept {
  std::size_t m = 0;
  for (const auto& r : records_) m = std::max(m, r.bytes.size());
  return m;
}

void Vocabulary::annotate_truncation(std::uint32_t d_p) {
  for (auto& r : records_) {
    r.truncated_at = r.bytes.size() > d_p ? std::optional<std::uint32_t>(d_p) : std::nullopt;
  }
}

const std::array<char32_t, 256>& bytelevel_alphabet() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    auto printable = [](unsigned b) {
      return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    };
    char32_t next = 0x100;
    for (unsigned b = 0; b < 256; ++b) t[b] = printable(b) ? static_cast<char32_t>(b) : next++;
    return t;
  }();
  return table;
}

Bytes decode_bytelevel_bpe(std::string_view piece) {
  if (!utf8::is_valid(piece)) throw FormatError("byte-level piece is not valid UTF-8");
  const auto& inv = bytelevel_inverse();
  Bytes out;
  out.reserve(piece.size());
  for (char32_t cp : utf8::decode(piece)) {
    auto it = inv.find(cp);
    if (it == inv.end()) {
      throw FormatError("codepoint " + codepoint_name(cp) + " is outside the byte-level BPE alphabet");
    }
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

std::string encode_bytelevel_bpe(std::string_view bytes) {
  const auto& fwd = bytelevel_alphabet();
  std::string out;
  out.reserve(bytes.size() * 2);
  for (char c : bytes) utf8::append(out, fwd[static_cast<unsigned char>(c)]);
  return out;
}

std::pair<Bytes, TokenKind> decode_sentencepiece(std::string_view piece) {
  if (auto b = byte_fallback_value(piece)) return {Bytes(1, static_cast<char>(*b)), TokenKind::ByteFallback};
  Bytes out;
  out.reserve(piece.size());
  for (std::size_t i = 0; i < piece.size();) {
    if (piece.substr(i, kSpMarker.size()) == kSpMarker) {
      out.push_back(' ');
      i += kSpMarker.size();
    } else {
      out.push_back(piece[i++]);
    }
  }
  return {std::move(out), TokenKind::Normal};
}

const std::set<std::string>& default_special_pieces() {
  static const std::set<std::string> pieces = {"<s>", "</s>", "<pad>", "<unk>", "<|endoftext|>"};
  return pieces;
}

Vocabulary parse_vocab(std::string_view contents, const LoadOptions& options, std::string name) {
  VocabFormat format = options.format;
  std::optional<json> doc;
  if (format == VocabFormat::Auto) {
    const auto first = contents.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
    if (first != std::string_view::npos && contents[first] == '{') {
      doc = parse_json(contents, name);
      const bool has_model = doc->contains("model") && (*doc)["model"].is_object();
      format = has_model ? VocabFormat::TokenizerJson : VocabFormat::Gpt2Json;
    } else {
      format = VocabFormat::Tsv;
    }
  }
  switch (format) {
    case VocabFormat::Gpt2Json:
      if (!doc) doc = parse_json(contents, name);
      return parse_gpt2_json(*doc, options, std::move(name));
    case VocabFormat::TokenizerJson:
      if (!doc) doc = parse_json(contents, name);
      return parse_tokenizer_json(*doc, options, std::move(name));
    case VocabFormat::Tsv:
    case VocabFormat::Auto:
      break;
  }
  return parse_tsv(contents, options, std::move(name));
}

Vocabulary load_vocab(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path.string());
  return parse_vocab(buf.str(), options, path.string());
}

void write_tsv(const Vocabulary& vocab, std::ostream& out) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  for (const auto& r : vocab.records()) {
    std::string line = std::to_string(r.token_id);
    line.push_back('\t');
    for (char c : r.bytes) {
      const auto b = static_cast<unsigned char>(c);
      if (c == '\t') {
        line += "\\t";
      } else if (c == '\n') {
        line += "\\n";
      } else if (c == '\r') {
        line += "\\r";
      } else if (c == '\\') {
        line += "\\\\";
      } else if (b < 0x20 || b == 0x7F) {
        line += "\\x";
        line.push_back(kHex[b >> 4]);
        line.push_back(kHex[b & 0xF]);
      } else {
        line.push_back(c);
      }
    }
    line.push_back('\n');
    out << line;
  }
}

std::vector<double> coverage_stats(const Vocabulary& vocab, const std::vector<std::uint32_t>& dp_values) {
  std::vector<std::size_t> lengths;
  lengths.reserve(vocab.size());
  for (const auto& r : vocab.records()) {
    if (r.kind != TokenKind::Special) lengths.push_back(r.bytes.size());
  }
  std::vector<double> out;
  out.reserve(dp_values.size());
  for (std::uint32_t dp : dp_values) {
    if (lengths.empty()) {
      out.push_back(1.0);
      continue;
    }
    const auto covered = std::count_if(lengths.begin(), lengths.end(), [dp](std::size_t n) { return n <= dp; });
    out.push_back(static_cast<double>(covered) / static_cast<double>(lengths.size()));
  }
  return out;
}

}  // namespace kronembed

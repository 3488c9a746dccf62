#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "kronembed/error.hpp"
#include "kronembed/vocab.hpp"
#include "oracles.hpp"

using namespace kronembed;

namespace {

const std::filesystem::path kGpt2 = std::filesystem::path(KRONEMBED_DATA_DIR) / "gpt2" / "encoder.json";

const Vocabulary& gpt2() {
  static const Vocabulary v = load_vocab(kGpt2);
  return v;
}

std::string hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (char c : bytes) {
    const auto b = static_cast<unsigned char>(c);
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

Vocabulary tsv(std::string_view text, LoadOptions opts = {}) {
  opts.format = VocabFormat::Tsv;
  return parse_vocab(text, opts, "test.tsv");
}

}  // namespace

TEST_CASE("byte-level alphabet is the reference bijection") {
  const auto want = oracle::gpt2_bytes_to_unicode();
  const auto& got = bytelevel_alphabet();
  std::set<char32_t> image;
  for (unsigned b = 0; b < 256; ++b) {
    CHECK(got[b] == want[b]);
    image.insert(got[b]);
  }
  CHECK(image.size() == 256);
  CHECK(got[0x20] == 0x120);
  CHECK(got[0x0A] == 0x10A);

  for (unsigned b = 0; b < 256; ++b) {
    const std::string one(1, static_cast<char>(b));
    CHECK(decode_bytelevel_bpe(encode_bytelevel_bpe(one)) == one);
  }
}

TEST_CASE("decode_bytelevel_bpe") {
  CHECK(decode_bytelevel_bpe("\xC4\xA0run") == " run");
  CHECK(decode_bytelevel_bpe("run") == "run");
  try {
    decode_bytelevel_bpe("\xE2\x82\xAC");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("U+20AC") != std::string::npos);
  }
}

TEST_CASE("decode_sentencepiece") {
  auto [b1, k1] = decode_sentencepiece("<0xC3>");
  CHECK(b1 == "\xC3");
  CHECK(k1 == TokenKind::ByteFallback);

  auto [b2, k2] = decode_sentencepiece("\xE2\x96\x81run");
  CHECK(hex(b2) == "2072756e");
  CHECK(k2 == TokenKind::Normal);

  CHECK(decode_sentencepiece("run").first == "run");
  CHECK(decode_sentencepiece("<0xc3>").second == TokenKind::Normal);
  CHECK(decode_sentencepiece("<0xC3").second == TokenKind::Normal);
}

TEST_CASE("GPT-2 vocabulary spot checks") {
  const Vocabulary& v = gpt2();
  CHECK(v.size() == 50257);
  CHECK(v.family() == TokenizerFamily::ByteLevelBpe);
  // Frozen from an independent decode of the published encoder.json.
  const std::pair<std::uint32_t, const char*> spots[] = {
      {0, "21"},          {11, "2c"},         {198, "0a"},       {220, "20"},
      {262, "20746865"},  {1110, "20646179"}, {5143, "72756e"},  {13945, "a59e"},
      {31204, "969a"},    {50255, "2067617a6564"},
  };
  for (const auto& [id, want] : spots) {
    CAPTURE(id);
    CHECK(hex(v[id].bytes) == want);
  }
  CHECK(v.find_piece("run") == 5143u);
  CHECK(v[50256].kind == TokenKind::Special);
  CHECK(v[50256].bytes == "<|endoftext|>");
  CHECK(v.find_piece("model").has_value());
}

TEST_CASE("TSV format") {
  SUBCASE("entries and specials") {
    const Vocabulary v = tsv("# comment\n0\t<s>\n1\ta\n2\tb\n3\tc\n4\td\n5\te\n6\tf\n7\thello\r\n");
    CHECK(v.size() == 8);
    CHECK(v[7].bytes == "hello");
    CHECK(v[7].kind == TokenKind::Normal);
    CHECK(v[0].kind == TokenKind::Special);
    CHECK(hex(v[0].bytes) == "3c733e");
    CHECK(v.family() == TokenizerFamily::PlainTsv);
  }
  SUBCASE("escapes") {
    const Vocabulary v = tsv("0\ta\\tb\n1\t\\x00\\\\\n");
    CHECK(v[0].bytes == "a\tb");
    CHECK(v[1].bytes == std::string("\0\\", 2));
  }
  SUBCASE("caller specials") {
    LoadOptions opts;
    opts.special_pieces = {"[CLS]"};
    const Vocabulary v = tsv("0\t[CLS]\n1\tx\n", opts);
    CHECK(v[0].kind == TokenKind::Special);
  }
  SUBCASE("sentencepiece markers switch the family") {
    const Vocabulary v = tsv("0\t<unk>\n1\t<0x41>\n2\t\xE2\x96\x81the\n");
    CHECK(v.family() == TokenizerFamily::SentencePiece);
    CHECK(v[1].kind == TokenKind::ByteFallback);
    CHECK(v[1].bytes == "A");
    CHECK(v[2].bytes == " the");
  }
  SUBCASE("gaps, duplicates and malformed lines") {
    CHECK_THROWS_AS(tsv("0\ta\n2\tb\n"), FormatError);
    CHECK_THROWS_AS(tsv(""), FormatError);
    try {
      tsv("0\ta\n1\tb\n1\tc\n");
      FAIL("expected a duplicate-id error");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("duplicate id 1") != std::string::npos);
      CHECK(msg.find("test.tsv:3") != std::string::npos);
    }
    try {
      tsv("0\ta\nbroken line\n");
      FAIL("expected a malformed-line error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("test.tsv:2") != std::string::npos);
    }
  }
}

TEST_CASE("tokenizer-json format") {
  SUBCASE("sentencepiece vocab with added specials") {
    const std::string doc = R"({
      "model": {"vocab": {"<unk>": 0, "<s>": 1, "<0xC3>": 2, "▁run": 3, "run": 4}},
      "added_tokens": [{"id": 1, "content": "<s>", "special": true},
                       {"id": 5, "content": "<mask>", "special": true},
                       {"id": 6, "content": "▁extra", "special": false}]
    })";
    const Vocabulary v = parse_vocab(doc, {}, "tok.json");
    CHECK(v.family() == TokenizerFamily::SentencePiece);
    CHECK(v.size() == 7);
    CHECK(v[2].kind == TokenKind::ByteFallback);
    CHECK(v[2].bytes == "\xC3");
    CHECK(v[3].bytes == " run");
    CHECK(v[5].kind == TokenKind::Special);
    CHECK(v[5].bytes == "<mask>");
    CHECK(v[6].kind == TokenKind::Normal);
    CHECK(v[6].bytes == "\xE2\x96\x81" "extra");
  }
  SUBCASE("unigram array vocab") {
    const std::string doc = R"({"model": {"type": "Unigram", "vocab": [["<unk>", 0.0], ["▁a", -1.5], ["b", -2.0]]}})";
    const Vocabulary v = parse_vocab(doc, {}, "uni.json");
    CHECK(v.size() == 3);
    CHECK(v[1].bytes == " a");
  }
  SUBCASE("byte-level vocab") {
    const std::string doc = R"({"model": {"vocab": {"a": 0, "Ġa": 1}}})";
    const Vocabulary v = parse_vocab(doc, {}, "bl.json");
    CHECK(v.family() == TokenizerFamily::ByteLevelBpe);
    CHECK(v[1].bytes == " a");
  }
  SUBCASE("conflicting added token") {
    const std::string doc = R"({"model": {"vocab": {"a": 0}}, "added_tokens": [{"id": 0, "content": "b", "special": true}]})";
    CHECK_THROWS_AS(parse_vocab(doc, {}, "bad.json"), FormatError);
  }
}

TEST_CASE("gpt2-json format errors") {
  LoadOptions opts;
  opts.format = VocabFormat::Gpt2Json;
  CHECK_THROWS_AS(parse_vocab(R"({"a": 0, "€": 1})", opts), FormatError);
  CHECK_THROWS_AS(parse_vocab(R"({"a": 0, "b": 0})", opts), FormatError);
  CHECK_THROWS_AS(parse_vocab(R"({"a": "zero"})", opts), FormatError);
  CHECK_THROWS_AS(parse_vocab(R"([1, 2])", opts), FormatError);
  CHECK_THROWS_AS(load_vocab("/nonexistent/vocab.json"), IoError);
}

TEST_CASE("byte-fallback records hold the byte named by the piece") {
  std::string text = "0\t<unk>\n";
  for (unsigned b = 0; b < 256; ++b) {
    char piece[8];
    std::snprintf(piece, sizeof piece, "<0x%02X>", b);
    text += std::to_string(b + 1) + "\t" + piece + "\n";
  }
  const Vocabulary v = tsv(text);
  std::size_t fallback = 0;
  for (const auto& r : v.records()) {
    if (r.kind != TokenKind::ByteFallback) continue;
    ++fallback;
    REQUIRE(r.bytes.size() == 1);
    CHECK(static_cast<unsigned char>(r.bytes[0]) == std::stoul(r.piece.substr(3, 2), nullptr, 16));
  }
  CHECK(fallback == 256);
}

TEST_CASE("TSV round trip preserves bytes") {
  SUBCASE("GPT-2") {
    std::ostringstream out;
    write_tsv(gpt2(), out);
    LoadOptions opts;
    opts.family = TokenizerFamily::PlainTsv;
    const Vocabulary back = tsv(out.str(), opts);
    REQUIRE(back.size() == gpt2().size());
    for (std::uint32_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].bytes == gpt2()[i].bytes);
      CHECK(back[i].kind == gpt2()[i].kind);
    }
  }
  SUBCASE("arbitrary bytes") {
    std::mt19937_64 rng(4);
    std::vector<TokenByteRecord> records;
    for (std::uint32_t i = 0; i < 500; ++i) {
      std::string s(1 + rng() % 12, '\0');
      for (auto& c : s) c = static_cast<char>(rng() % 256);
      records.push_back({i, s, s, TokenKind::Normal, std::nullopt});
    }
    const Vocabulary v(records, TokenizerFamily::PlainTsv, "random");
    std::ostringstream out;
    write_tsv(v, out);
    LoadOptions opts;
    opts.family = TokenizerFamily::PlainTsv;
    const Vocabulary back = tsv(out.str(), opts);
    for (std::uint32_t i = 0; i < back.size(); ++i) CHECK(back[i].bytes == v[i].bytes);
  }
}

TEST_CASE("coverage_stats") {
  SUBCASE("GPT-2 counts") {
    // 50256 non-special tokens; 72, 14 and 3 exceed 16, 32 and 64 bytes.
    const auto cov = coverage_stats(gpt2(), {16, 32, 64});
    CHECK(cov[0] == doctest::Approx((50256.0 - 72.0) / 50256.0).epsilon(1e-12));
    CHECK(cov[1] == doctest::Approx((50256.0 - 14.0) / 50256.0).epsilon(1e-12));
    CHECK(cov[2] == doctest::Approx((50256.0 - 3.0) / 50256.0).epsilon(1e-12));
  }
  SUBCASE("monotone in d_p and complete at the max length") {
    std::vector<std::uint32_t> dps;
    for (std::uint32_t d = 1; d <= 130; ++d) dps.push_back(d);
    const auto cov = coverage_stats(gpt2(), dps);
    for (std::size_t i = 1; i < cov.size(); ++i) CHECK(cov[i] >= cov[i - 1]);
    const auto max_len = static_cast<std::uint32_t>(gpt2().max_byte_length());
    CHECK(coverage_stats(gpt2(), {max_len})[0] == 1.0);
  }
  SUBCASE("specials are excluded") {
    const Vocabulary v = tsv("0\t<|endoftext|>\n1\ta\n");
    CHECK(coverage_stats(v, {1})[0] == 1.0);
    CHECK(coverage_stats(tsv("0\ta\n"), {1})[0] == 1.0);
  }
  SUBCASE("truncation annotation") {
    LoadOptions opts;
    opts.d_p = 2;
    const Vocabulary v = tsv("0\tab\n1\tabc\n", opts);
    CHECK_FALSE(v[0].truncated_at.has_value());
    CHECK(v[1].truncated_at == 2u);
  }
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "kronembed/error.hpp"
#include "kronembed/io.hpp"

using namespace kronembed;

namespace {

Vocabulary toy_vocab() {
  std::vector<TokenByteRecord> records;
  const char* pieces[] = {"a", "ab", "abc", "hello", "\xE2\x82\xAC", "xyzzy-long-token"};
  for (std::uint32_t i = 0; i < std::size(pieces); ++i) records.push_back({i, pieces[i], pieces[i], {}, {}});
  return Vocabulary(std::move(records), TokenizerFamily::PlainTsv, "toy");
}

std::string serialize(auto&& write) {
  std::ostringstream out(std::ios::binary);
  write(out);
  return out.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kronembed_test_io_" + name);
}

}  // namespace

TEST_CASE("bfloat16 conversion") {
  CHECK(to_bfloat16(1.0f) == 0x3F80);
  CHECK(from_bfloat16(0x3F80) == 1.0f);
  CHECK(to_bfloat16(-2.0f) == 0xC000);
  // 1 + 2^-8 sits exactly between two bf16 values; ties go to even.
  CHECK(to_bfloat16(1.00390625f) == 0x3F80);
  CHECK(to_bfloat16(1.01171875f) == 0x3F82);
  CHECK(std::isnan(from_bfloat16(to_bfloat16(std::numeric_limits<float>::quiet_NaN()))));
  CHECK(std::isinf(from_bfloat16(to_bfloat16(std::numeric_limits<float>::infinity()))));
  for (float x : {0.0f, 0.5f, 3.140625f, -1e-3f, 123456.0f}) {
    const float back = from_bfloat16(to_bfloat16(x));
    CHECK(std::abs(back - x) <= std::abs(x) * (1.0f / 256.0f));
  }
}

TEST_CASE("codec table round-trip") {
  const Vocabulary v = toy_vocab();
  const CodecTable t = build_table(v, CodecConfig(8));

  SUBCASE("float32 is bit exact") {
    const std::string blob = serialize([&](std::ostream& o) { write_table(o, t); });
    CHECK(blob.size() == kTableHeaderBytes + std::size_t{6} * 2048 * 4);
    CHECK(blob.substr(0, 4) == "KBT1");
    std::istringstream in(blob);
    const CodecTable back = read_table(in);
    CHECK(back.config.d_p() == 8);
    CHECK(back.config.apply_znorm());
    CHECK(back.rows == t.rows);
  }
  SUBCASE("bfloat16 halves the payload") {
    const std::string blob = serialize([&](std::ostream& o) { write_table(o, t, ScalarCode::BFloat16); });
    CHECK(blob.size() == kTableHeaderBytes + std::size_t{6} * 2048 * 2);
    std::istringstream in(blob);
    const CodecTable back = read_table(in);
    for (std::size_t i = 0; i < t.rows.data().size(); ++i) {
      const float x = t.rows.data()[i];
      CHECK(back.rows.data()[i] == from_bfloat16(to_bfloat16(x)));
    }
  }
  SUBCASE("raw mode flag survives") {
    const CodecTable raw = build_table(v, CodecConfig(8, false));
    std::istringstream in(serialize([&](std::ostream& o) { write_table(o, raw); }));
    CHECK_FALSE(read_table(in).config.apply_znorm());
  }
  SUBCASE("file path overloads and detection") {
    const auto path = temp_path("table.kbt");
    write_table(path, t);
    CHECK(detect_artifact(path) == ArtifactKind::CodecTable);
    CHECK(read_table(path).rows == t.rows);
    std::filesystem::remove(path);
  }
}

TEST_CASE("byte buffer round-trip") {
  const Vocabulary v = toy_vocab();
  const ByteBuffer b = build_byte_buffer(v, CodecConfig(8));
  const std::string blob = serialize([&](std::ostream& o) { write_byte_buffer(o, b); });
  CHECK(blob.size() == kByteBufferHeaderBytes + 6 * (8 + 2));
  CHECK(blob.size() == kByteBufferHeaderBytes + b.footprint_bytes());

  std::istringstream in(blob);
  const ByteBuffer back = read_byte_buffer(in, false);
  CHECK(back.vocab_size == 6);
  CHECK(back.bytes == b.bytes);
  CHECK(back.lengths == b.lengths);
  CHECK_FALSE(back.config.apply_znorm());

  SUBCASE("length outside 1..d_p is rejected") {
    std::string bad = blob;
    bad[kByteBufferHeaderBytes + 6 * 8] = 9;
    std::istringstream bin(bad);
    CHECK_THROWS_AS(read_byte_buffer(bin), FormatError);
  }
}

TEST_CASE("projection round-trip") {
  const ProjectionMatrix p = init_projection(64, 12, 99);
  const std::string blob = serialize([&](std::ostream& o) { write_projection(o, p); });
  CHECK(blob.size() == 4 + 8 + 8 + 64 * 12 * 4);
  std::istringstream in(blob);
  const ProjectionMatrix back = read_projection(in);
  CHECK(back.dim == 64);
  CHECK(back.d_model == 12);
  CHECK(back.seed == 99);
  CHECK(back.weights == p.weights);
}

TEST_CASE("embedding round-trip") {
  EmbeddingMatrix e = random_baseline(7, 5, 4);
  const std::string blob = serialize([&](std::ostream& o) { write_embedding(o, e); });
  CHECK(blob.size() == 5 + 8 + 1 + 7 * 5 * 4);
  std::istringstream in(blob);
  const EmbeddingMatrix back = read_embedding(in);
  CHECK(back.rows == e.rows);
  CHECK(back.source == EmbeddingSource::TrainedExternal);
  CHECK_FALSE(back.codec.has_value());

  SUBCASE("non-finite entries are rejected on load") {
    e.rows(3, 2) = std::numeric_limits<float>::infinity();
    std::istringstream bad(serialize([&](std::ostream& o) { write_embedding(o, e); }));
    CHECK_THROWS_AS(read_embedding(bad), DegenerateError);
  }
}

TEST_CASE("malformed artifacts") {
  const CodecTable t = build_table(toy_vocab(), CodecConfig(4));
  const std::string blob = serialize([&](std::ostream& o) { write_table(o, t); });

  SUBCASE("truncated payload") {
    std::istringstream in(blob.substr(0, blob.size() - 3));
    CHECK_THROWS_WITH_AS(read_table(in), "KBT1: truncated file", FormatError);
  }
  SUBCASE("truncated header") {
    std::istringstream in(blob.substr(0, 6));
    CHECK_THROWS_AS(read_table(in), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::istringstream in(blob + "x");
    CHECK_THROWS_AS(read_table(in), FormatError);
  }
  SUBCASE("bad magic") {
    std::istringstream in("KBB1" + blob.substr(4));
    CHECK_THROWS_AS(read_table(in), FormatError);
  }
  SUBCASE("unknown scalar code") {
    std::string bad = blob;
    bad[4 + 16] = 3;
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_table(in), FormatError);
  }
  SUBCASE("wrong byte alphabet") {
    std::string bad = blob;
    bad[4 + 8] = 1;  // d_c low byte
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_table(in), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_table(std::filesystem::path("/nonexistent/table.kbt")), IoError);
  }
}

TEST_CASE("detect_artifact") {
  const auto path = temp_path("detect.bin");
  const auto write_raw = [&](const std::string& s) {
    std::ofstream(path, std::ios::binary) << s;
  };
  write_raw("KBB1....");
  CHECK(detect_artifact(path) == ArtifactKind::ByteBuffer);
  write_raw("KPJ1....");
  CHECK(detect_artifact(path) == ArtifactKind::Projection);
  write_raw("KEMB1...");
  CHECK(detect_artifact(path) == ArtifactKind::Embedding);
  write_raw("{\"a\": 1}");
  CHECK(detect_artifact(path) == ArtifactKind::Unknown);
  write_raw("K");
  CHECK(detect_artifact(path) == ArtifactKind::Unknown);
  std::filesystem::remove(path);
}

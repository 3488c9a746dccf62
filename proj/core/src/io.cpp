#include "kronembed/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "kronembed/error.hpp"

namespace kronembed {
namespace {

constexpr char kTableMagic[] = "KBT1";
constexpr char kBufferMagic[] = "KBB1";
constexpr char kProjectionMagic[] = "KPJ1";
constexpr char kEmbeddingMagic[] = "KEMB1";
constexpr std::uint32_t kTableVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed");
  }
  void magic(const char* m) { bytes(m, std::strlen(m)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    const std::array<unsigned char, 2> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    bytes(b.data(), b.size());
  }
  void u32(std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b.data(), b.size());
  }
  void u64(std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b.data(), b.size());
  }

  // Converts in chunks so large tables are not copied whole.
  void scalars(std::span<const float> values, ScalarCode code) {
    constexpr std::size_t kChunk = 1 << 16;
    std::vector<unsigned char> buf;
    const std::size_t width = static_cast<std::size_t>(code);
    for (std::size_t start = 0; start < values.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, values.size() - start);
      buf.resize(n * width);
      for (std::size_t i = 0; i < n; ++i) {
        const float x = values[start + i];
        std::uint32_t v = code == ScalarCode::Float32 ? std::bit_cast<std::uint32_t>(x) : to_bfloat16(x);
        for (std::size_t k = 0; k < width; ++k) buf[i * width + k] = static_cast<unsigned char>(v >> (8 * k));
      }
      bytes(buf.data(), buf.size());
    }
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": truncated file");
  }
  void magic(const char* m) {
    std::string got(std::strlen(m), '\0');
    bytes(got.data(), got.size());
    if (got != m) throw FormatError(what_ + ": bad magic, expected " + m);
  }
  std::uint8_t u8() {
    std::uint8_t v = 0;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    bytes(b.data(), b.size());
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    std::array<unsigned char, 8> b{};
    bytes(b.data(), b.size());
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  void scalars(std::span<float> out, ScalarCode code) {
    constexpr std::size_t kChunk = 1 << 16;
    const std::size_t width = static_cast<std::size_t>(code);
    std::vector<unsigned char> buf;
    for (std::size_t start = 0; start < out.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, out.size() - start);
      buf.resize(n * width);
      bytes(buf.data(), buf.size());
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t v = 0;
        for (std::size_t k = width; k-- > 0;) v = (v << 8) | buf[i * width + k];
        out[start + i] = code == ScalarCode::Float32 ? std::bit_cast<float>(v)
                                                     : from_bfloat16(static_cast<std::uint16_t>(v));
      }
    }
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes after payload");
  }
  ScalarCode scalar_code() {
    const std::uint8_t code = u8();
    if (code != 2 && code != 4) throw FormatError(what_ + ": unknown scalar code " + std::to_string(code));
    return static_cast<ScalarCode>(code);
  }

 private:
  std::istream& in_;
  std::string what_;
};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

std::uint16_t to_bfloat16(float x) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(x);
  if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0) {
    return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);  // keep NaN quiet
  }
  const std::uint32_t rounding = 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

float from_bfloat16(std::uint16_t bits) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

ArtifactKind detect_artifact(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  char head[5] = {};
  in.read(head, sizeof head);
  const std::string_view h(head, static_cast<std::size_t>(in.gcount()));
  if (h.starts_with(kEmbeddingMagic)) return ArtifactKind::Embedding;
  if (h.starts_with(kTableMagic)) return ArtifactKind::CodecTable;
  if (h.starts_with(kBufferMagic)) return ArtifactKind::ByteBuffer;
  if (h.starts_with(kProjectionMagic)) return ArtifactKind::Projection;
  return ArtifactKind::Unknown;
}

void write_table(std::ostream& out, const CodecTable& table, ScalarCode scalar) {
  Writer w(out);
  w.magic(kTableMagic);
  w.u32(kTableVersion);
  w.u32(table.vocab_size());
  w.u32(table.config.d_c());
  w.u32(table.config.d_p());
  w.u8(static_cast<std::uint8_t>(scalar));
  w.u8(table.config.apply_znorm() ? 1 : 0);
  w.scalars(table.rows.data(), scalar);
}

void write_table(const std::filesystem::path& path, const CodecTable& table, ScalarCode scalar) {
  auto out = open_out(path);
  write_table(out, table, scalar);
}

CodecTable read_table(std::istream& in) {
  Reader r(in, "KBT1");
  r.magic(kTableMagic);
  if (const auto v = r.u32(); v != kTableVersion) throw FormatError("KBT1: unsupported version " + std::to_string(v));
  const std::uint32_t V = r.u32();
  const std::uint32_t d_c = r.u32();
  const std::uint32_t d_p = r.u32();
  if (d_c != kByteAlphabet) throw FormatError("KBT1: d_c must be 256, got " + std::to_string(d_c));
  const ScalarCode scalar = r.scalar_code();
  const std::uint8_t znorm = r.u8();
  if (znorm > 1) throw FormatError("KBT1: znorm flag must be 0 or 1");
  CodecConfig config(d_p, znorm == 1);
  CodecTable table{config, MatrixF(V, config.dim()), {}};
  r.scalars(table.rows.data(), scalar);
  r.expect_end();
  return table;
}

CodecTable read_table(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_table(in);
}

void write_byte_buffer(std::ostream& out, const ByteBuffer& buffer) {
  Writer w(out);
  w.magic(kBufferMagic);
  w.u32(buffer.vocab_size);
  w.u32(buffer.config.d_p());
  w.bytes(buffer.bytes.data(), buffer.bytes.size());
  for (std::int16_t len : buffer.lengths) w.u16(static_cast<std::uint16_t>(len));
}

void write_byte_buffer(const std::filesystem::path& path, const ByteBuffer& buffer) {
  auto out = open_out(path);
  write_byte_buffer(out, buffer);
}

ByteBuffer read_byte_buffer(std::istream& in, bool apply_znorm) {
  Reader r(in, "KBB1");
  r.magic(kBufferMagic);
  const std::uint32_t V = r.u32();
  const std::uint32_t d_p = r.u32();
  ByteBuffer buf{CodecConfig(d_p, apply_znorm), V, {}, {}, {}};
  buf.bytes.resize(std::size_t{V} * d_p);
  r.bytes(buf.bytes.data(), buf.bytes.size());
  buf.lengths.resize(V);
  for (std::uint32_t i = 0; i < V; ++i) {
    std::array<unsigned char, 2> b{};
    r.bytes(b.data(), b.size());
    const auto len = static_cast<std::int16_t>(b[0] | (b[1] << 8));
    if (len < 1 || static_cast<std::uint32_t>(len) > d_p) {
      throw FormatError("KBB1: token " + std::to_string(i) + " has length " + std::to_string(len));
    }
    buf.lengths[i] = len;
  }
  r.expect_end();
  return buf;
}

ByteBuffer read_byte_buffer(const std::filesystem::path& path, bool apply_znorm) {
  auto in = open_in(path);
  return read_byte_buffer(in, apply_znorm);
}

void write_projection(std::ostream& out, const ProjectionMatrix& projection) {
  Writer w(out);
  w.magic(kProjectionMagic);
  w.u32(projection.dim);
  w.u32(projection.d_model);
  w.u64(projection.seed);
  w.scalars(projection.weights.data(), ScalarCode::Float32);
}

void write_projection(const std::filesystem::path& path, const ProjectionMatrix& projection) {
  auto out = open_out(path);
  write_projection(out, projection);
}

ProjectionMatrix read_projection(std::istream& in) {
  Reader r(in, "KPJ1");
  r.magic(kProjectionMagic);
  ProjectionMatrix p;
  p.dim = r.u32();
  p.d_model = r.u32();
  p.seed = r.u64();
  p.weights = MatrixF(p.dim, p.d_model);
  r.scalars(p.weights.data(), ScalarCode::Float32);
  r.expect_end();
  return p;
}

ProjectionMatrix read_projection(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_projection(in);
}

void write_embedding(std::ostream& out, const EmbeddingMatrix& e, ScalarCode scalar) {
  Writer w(out);
  w.magic(kEmbeddingMagic);
  w.u32(static_cast<std::uint32_t>(e.vocab_size()));
  w.u32(static_cast<std::uint32_t>(e.dim()));
  w.u8(static_cast<std::uint8_t>(scalar));
  w.scalars(e.rows.data(), scalar);
}

void write_embedding(const std::filesystem::path& path, const EmbeddingMatrix& e, ScalarCode scalar) {
  auto out = open_out(path);
  write_embedding(out, e, scalar);
}

EmbeddingMatrix read_embedding(std::istream& in) {
  Reader r(in, "KEMB1");
  r.magic(kEmbeddingMagic);
  const std::uint32_t V = r.u32();
  const std::uint32_t dim = r.u32();
  const ScalarCode scalar = r.scalar_code();
  EmbeddingMatrix e{MatrixF(V, dim), EmbeddingSource::TrainedExternal, std::nullopt};
  r.scalars(e.rows.data(), scalar);
  r.expect_end();
  check_finite(e);
  return e;
}

EmbeddingMatrix read_embedding(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_embedding(in);
}

}  // namespace kronembed

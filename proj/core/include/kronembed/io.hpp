#pragma once

// Binary artifacts. All integers and floats are little-endian.
//
//   KBT1  codec table   "KBT1" u32 version=1, u32 V, u32 d_c, u32 d_p,
//                       u8 scalar (4 = float32, 2 = bfloat16), u8 znorm,
//                       V * D scalars row-major
//   KBB1  byte buffer   "KBB1" u32 V, u32 d_p, V * d_p bytes, V * i16 lengths
//   KPJ1  projection    "KPJ1" u32 D, u32 d_model, u64 seed, D * d_model float32
//   KEMB1 embeddings    "KEMB1" u32 V, u32 dim, u8 scalar, V * dim scalars

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "kronembed/backend.hpp"
#include "kronembed/probes.hpp"
#include "kronembed/projection.hpp"

namespace kronembed {

enum class ScalarCode : std::uint8_t { BFloat16 = 2, Float32 = 4 };

enum class ArtifactKind { CodecTable, ByteBuffer, Projection, Embedding, Unknown };

inline constexpr std::size_t kTableHeaderBytes = 4 + 4 * 4 + 2;
inline constexpr std::size_t kByteBufferHeaderBytes = 4 + 4 * 2;

/// Identifies a file by its magic bytes.
ArtifactKind detect_artifact(const std::filesystem::path& path);

/// Round-to-nearest-even float -> bfloat16 bits, and back.
std::uint16_t to_bfloat16(float x) noexcept;
float from_bfloat16(std::uint16_t bits) noexcept;

void write_table(std::ostream& out, const CodecTable& table, ScalarCode scalar = ScalarCode::Float32);
void write_table(const std::filesystem::path& path, const CodecTable& table, ScalarCode scalar = ScalarCode::Float32);
CodecTable read_table(std::istream& in);
CodecTable read_table(const std::filesystem::path& path);

void write_byte_buffer(std::ostream& out, const ByteBuffer& buffer);
void write_byte_buffer(const std::filesystem::path& path, const ByteBuffer& buffer);
/// KBB1 does not record z-normalization; the caller supplies it.
ByteBuffer read_byte_buffer(std::istream& in, bool apply_znorm = true);
ByteBuffer read_byte_buffer(const std::filesystem::path& path, bool apply_znorm = true);

void write_projection(std::ostream& out, const ProjectionMatrix& projection);
void write_projection(const std::filesystem::path& path, const ProjectionMatrix& projection);
ProjectionMatrix read_projection(std::istream& in);
ProjectionMatrix read_projection(const std::filesystem::path& path);

void write_embedding(std::ostream& out, const EmbeddingMatrix& e, ScalarCode scalar = ScalarCode::Float32);
void write_embedding(const std::filesystem::path& path, const EmbeddingMatrix& e,
                     ScalarCode scalar = ScalarCode::Float32);
/// Loaded matrices are tagged TrainedExternal.
EmbeddingMatrix read_embedding(std::istream& in);
EmbeddingMatrix read_embedding(const std::filesystem::path& path);

}  // namespace kronembed

#pragma once

// Two runtime backends producing identical codec rows:
//
//  * CodecTable: every row materialized once, lookup is a gather.
//  * ByteBuffer: d_p raw bytes plus an int16 length per token; rows are
//    rebuilt on demand by scattering 1/sqrt(L) into b_p * d_p + p.

#include <cstdint>
#include <span>
#include <vector>

#include "kronembed/byte_codec.hpp"
#include "kronembed/matrix.hpp"
#include "kronembed/vocab.hpp"

namespace kronembed {

struct CodecTable {
  CodecConfig config;
  MatrixF rows;  // V x D
  /// Ids whose bytes were cut to fit d_p.
  std::vector<std::uint32_t> truncated_ids;

  std::uint32_t vocab_size() const noexcept { return static_cast<std::uint32_t>(rows.rows()); }
};

struct ByteBuffer {
  CodecConfig config;
  std::uint32_t vocab_size = 0;
  std::vector<std::uint8_t> bytes;   // V x d_p, zero past each length
  std::vector<std::int16_t> lengths;  // post-truncation byte count
  std::vector<std::uint32_t> truncated_ids;

  std::uint64_t footprint_bytes() const noexcept {
    return bytes.size() * sizeof(std::uint8_t) + lengths.size() * sizeof(std::int16_t);
  }
};

/// `workers == 0` uses std::thread::hardware_concurrency(). The result does
/// not depend on the worker count. Throws EmptyTokenError naming the lowest
/// id whose bytes are empty after truncation.
CodecTable build_table(const Vocabulary& vocab, const CodecConfig& config, unsigned workers = 0);

ByteBuffer build_byte_buffer(const Vocabulary& vocab, const CodecConfig& config);

/// Gathers table rows. Throws RangeError for ids >= V.
MatrixF lookup(const CodecTable& table, std::span<const std::uint32_t> ids);

/// Rebuilds rows from the byte buffer; matches lookup() on the equivalent
/// table to float precision. Throws RangeError for ids >= V.
MatrixF compute_dynamic(const ByteBuffer& buffer, std::span<const std::uint32_t> ids);

struct MemoryReport {
  std::uint64_t table_bytes;
  std::uint64_t buffer_bytes;
  std::int64_t savings_bytes;
};

/// table = V * D * scalar_bytes; buffer = V * (d_p + 2).
MemoryReport memory_report(std::uint64_t vocab_size, const CodecConfig& config, unsigned scalar_bytes);

}  // namespace kronembed

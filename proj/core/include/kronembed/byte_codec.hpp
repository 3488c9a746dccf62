#pragma once

// Kronecker byte-position codec.
//
// A token with bytes b_0..b_{L-1} maps to a D = 256 * d_p dimensional vector
// with value 1/sqrt(L) at coordinate b_p * d_p + p for every position p, and
// zero elsewhere. Positions are 0-indexed. Tokens longer than d_p bytes are
// truncated (backing off to a codepoint boundary when the input is valid
// UTF-8) and L is the post-truncation length, so the raw vector has unit norm.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kronembed {

using Bytes = std::string;

inline constexpr std::uint32_t kByteAlphabet = 256;

class CodecConfig {
 public:
  static constexpr std::uint32_t kDefaultPositions = 32;
  // Lengths are stored as int16 in the compact byte buffer.
  static constexpr std::uint32_t kMaxPositions = 32767;

  /// Throws RangeError unless 1 <= positions <= kMaxPositions.
  explicit CodecConfig(std::uint32_t positions = kDefaultPositions, bool apply_znorm = true);

  std::uint32_t d_c() const noexcept { return kByteAlphabet; }
  std::uint32_t d_p() const noexcept { return d_p_; }
  std::uint32_t dim() const noexcept { return kByteAlphabet * d_p_; }
  bool apply_znorm() const noexcept { return apply_znorm_; }

  CodecConfig with_znorm(bool on) const { return CodecConfig(d_p_, on); }

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;

 private:
  std::uint32_t d_p_;
  bool apply_znorm_;
};

struct CodecEntry {
  std::uint32_t index;
  double value;

  friend bool operator==(const CodecEntry&, const CodecEntry&) = default;
};

/// Sparse codec vector. Entries are sorted by index and unique.
struct CodecVector {
  std::uint32_t dim = 0;
  std::vector<CodecEntry> entries;
  std::uint32_t source_len = 0;

  double l2_norm() const noexcept;
  std::vector<double> to_dense() const;
};

/// byte_value * d_p + position. Throws RangeError when either is out of range.
std::uint32_t linear_index(std::uint32_t byte_value, std::uint32_t position, const CodecConfig& config);

/// Prefix of at most `d_p` bytes. Valid UTF-8 input is cut at the last
/// codepoint boundary at or before d_p; anything else is cut at byte d_p.
Bytes truncate_utf8_safe(std::string_view bytes, std::uint32_t d_p);

/// Raw (pre-z-norm) codec vector. Throws EmptyTokenError when nothing is left
/// to encode after truncation.
CodecVector encode(std::string_view bytes, const CodecConfig& config);

/// Cosine of the raw codec vectors of `a` and `b`.
double codec_cosine(std::string_view a, std::string_view b, const CodecConfig& config);

/// Dense z-normalization over all D coordinates (population std). Throws
/// DegenerateError for an empty vector or one with zero variance.
std::vector<double> z_normalize(const CodecVector& v);

/// The per-coordinate values of a z-normalized codec vector of length L in
/// dimension D, from the sparse structure alone.
struct ZNormValues {
  double on;   // coordinates set by a (byte, position) pair
  double off;  // every other coordinate
};
ZNormValues znorm_closed_form(std::uint32_t length, std::uint32_t dim);

/// Dense row as stored by the backends: z-normalized when the config asks
/// for it, otherwise the raw codec vector.
std::vector<double> materialize(std::string_view bytes, const CodecConfig& config);

}  // namespace kronembed

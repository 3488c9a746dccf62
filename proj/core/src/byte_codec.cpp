#include "kronembed/byte_codec.hpp"

#include <algorithm>
#include <cmath>

#include "kronembed/error.hpp"
#include "kronembed/utf8.hpp"

namespace kronembed {

CodecConfig::CodecConfig(std::uint32_t positions, bool apply_znorm)
    : d_p_(positions), apply_znorm_(apply_znorm) {
  if (positions < 1 || positions > kMaxPositions) {
    throw RangeError("d_p must be in [1, " + std::to_string(kMaxPositions) + "], got " +
                     std::to_string(positions));
  }
}

double CodecVector::l2_norm() const noexcept {
  double s = 0.0;
  for (const auto& e : entries) s += e.value * e.value;
  return std::sqrt(s);
}

std::vector<double> CodecVector::to_dense() const {
  std::vector<double> out(dim, 0.0);
  for (const auto& e : entries) out[e.index] = e.value;
  return out;
}

std::uint32_t linear_index(std::uint32_t byte_value, std::uint32_t position, const CodecConfig& config) {
  if (byte_value >= config.d_c()) {
    throw RangeError("byte value " + std::to_string(byte_value) + " out of range");
  }
  if (position >= config.d_p()) {
    throw RangeError("position " + std::to_string(position) + " out of range for d_p=" +
                     std::to_string(config.d_p()));
  }
  return byte_value * config.d_p() + position;
}

Bytes truncate_utf8_safe(std::string_view bytes, std::uint32_t d_p) {
  if (bytes.size() <= d_p) return Bytes(bytes);
  if (!utf8::is_valid(bytes)) return Bytes(bytes.substr(0, d_p));
  // bytes[cut] is the first dropped byte; a continuation byte there means the
  // codepoint straddles the limit.
  std::size_t cut = d_p;
  while (cut > 0 && utf8::is_continuation(static_cast<unsigned char>(bytes[cut]))) --cut;
  return Bytes(bytes.substr(0, cut));
}

CodecVector encode(std::string_view bytes, const CodecConfig& config) {
  const Bytes kept = truncate_utf8_safe(bytes, config.d_p());
  if (kept.empty()) throw EmptyTokenError();

  const auto len = static_cast<std::uint32_t>(kept.size());
  const double value = 1.0 / std::sqrt(static_cast<double>(len));

  CodecVector v;
  v.dim = config.dim();
  v.source_len = len;
  v.entries.reserve(len);
  for (std::uint32_t p = 0; p < len; ++p) {
    v.entries.push_back({linear_index(static_cast<unsigned char>(kept[p]), p, config), value});
  }
  std::sort(v.entries.begin(), v.entries.end(),
            [](const CodecEntry& a, const CodecEntry& b) { return a.index < b.index; });
  return v;
}

double codec_cosine(std::string_view a, std::string_view b, const CodecConfig& config) {
  const CodecVector va = encode(a, config);
  const CodecVector vb = encode(b, config);

  double dot = 0.0;
  auto ia = va.entries.begin();
  auto ib = vb.entries.begin();
  while (ia != va.entries.end() && ib != vb.entries.end()) {
    if (ia->index < ib->index) {
      ++ia;
    } else if (ib->index < ia->index) {
      ++ib;
    } else {
      dot += ia->value * ib->value;
      ++ia;
      ++ib;
    }
  }
  return dot / (va.l2_norm() * vb.l2_norm());
}

std::vector<double> z_normalize(const CodecVector& v) {
  if (v.entries.empty()) throw DegenerateError("cannot z-normalize a codec vector with no entries");
  std::vector<double> x = v.to_dense();
  const auto n = static_cast<double>(x.size());

  double sum = 0.0;
  for (double e : x) sum += e;
  const double mean = sum / n;

  double ss = 0.0;
  for (double e : x) ss += (e - mean) * (e - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) throw DegenerateError("codec vector has zero standard deviation");

  for (double& e : x) e = (e - mean) / sd;
  return x;
}

ZNormValues znorm_closed_form(std::uint32_t length, std::uint32_t dim) {
  const double len = length;
  const double d = dim;
  const double mean = std::sqrt(len) / d;
  // E[x^2] = L * (1/L) / D
  const double var = 1.0 / d - mean * mean;
  if (length == 0 || !(var > 0.0)) throw DegenerateError("codec vector has zero standard deviation");
  const double sd = std::sqrt(var);
  return {(1.0 / std::sqrt(len) - mean) / sd, -mean / sd};
}

std::vector<double> materialize(std::string_view bytes, const CodecConfig& config) {
  const CodecVector v = encode(bytes, config);
  return config.apply_znorm() ? z_normalize(v) : v.to_dense();
}

}  // namespace kronembed

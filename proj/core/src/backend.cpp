#include "kronembed/backend.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "kronembed/error.hpp"

namespace kronembed {
namespace {

// Validates every record up front so the reported id is deterministic.
std::vector<Bytes> truncated_bytes(const Vocabulary& vocab, const CodecConfig& config,
                                   std::vector<std::uint32_t>& truncated_ids) {
  std::vector<Bytes> out;
  out.reserve(vocab.size());
  for (const auto& r : vocab.records()) {
    Bytes kept = truncate_utf8_safe(r.bytes, config.d_p());
    if (kept.empty()) throw EmptyTokenError(r.token_id);
    if (kept.size() != r.bytes.size()) truncated_ids.push_back(r.token_id);
    out.push_back(std::move(kept));
  }
  return out;
}

void check_ids(std::span<const std::uint32_t> ids, std::uint32_t vocab_size) {
  for (std::uint32_t id : ids) {
    if (id >= vocab_size) {
      throw RangeError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                       std::to_string(vocab_size));
    }
  }
}

}  // namespace

CodecTable build_table(const Vocabulary& vocab, const CodecConfig& config, unsigned workers) {
  CodecTable table{config, MatrixF(), {}};
  const std::vector<Bytes> kept = truncated_bytes(vocab, config, table.truncated_ids);
  const std::size_t V = kept.size();
  const std::size_t D = config.dim();
  table.rows = MatrixF(V, D);

  auto fill = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::vector<double> row = materialize(kept[i], config);
      std::transform(row.begin(), row.end(), table.rows.row(i).begin(),
                     [](double x) { return static_cast<float>(x); });
    }
  };

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, V));
  if (workers <= 1) {
    fill(0, V);
    return table;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (V + workers - 1) / workers;
  for (std::size_t begin = 0; begin < V; begin += chunk) {
    pool.emplace_back(fill, begin, std::min(V, begin + chunk));
  }
  return table;
}

ByteBuffer build_byte_buffer(const Vocabulary& vocab, const CodecConfig& config) {
  ByteBuffer buf{config, static_cast<std::uint32_t>(vocab.size()), {}, {}, {}};
  const std::vector<Bytes> kept = truncated_bytes(vocab, config, buf.truncated_ids);
  const std::size_t dp = config.d_p();
  buf.bytes.assign(kept.size() * dp, 0);
  buf.lengths.resize(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    std::copy(kept[i].begin(), kept[i].end(), reinterpret_cast<char*>(buf.bytes.data() + i * dp));
    buf.lengths[i] = static_cast<std::int16_t>(kept[i].size());
  }
  return buf;
}

MatrixF lookup(const CodecTable& table, std::span<const std::uint32_t> ids) {
  check_ids(ids, table.vocab_size());
  const std::size_t D = table.config.dim();
  MatrixF out(ids.size(), D);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto src = table.rows.row(ids[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

MatrixF compute_dynamic(const ByteBuffer& buffer, std::span<const std::uint32_t> ids) {
  check_ids(ids, buffer.vocab_size);
  const CodecConfig& config = buffer.config;
  const std::size_t D = config.dim();
  const std::uint32_t dp = config.d_p();
  MatrixF out(ids.size(), D);
  // Accumulate in double and round once so rows agree with the table path.
  std::vector<double> acc(D);
  std::vector<std::uint32_t> lin_idx(dp);

  for (std::size_t j = 0; j < ids.size(); ++j) {
    const std::uint32_t id = ids[j];
    const std::uint32_t len = static_cast<std::uint32_t>(buffer.lengths[id]);
    const std::uint8_t* bytes = buffer.bytes.data() + std::size_t{id} * dp;

    // Linearized indices; positions at or past the length are masked out.
    std::uint32_t n = 0;
    for (std::uint32_t p = 0; p < dp; ++p) {
      if (p < len) lin_idx[n++] = std::uint32_t{bytes[p]} * dp + p;
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(len));
    double base = 0.0;
    double contribution = scale;
    if (config.apply_znorm()) {
      const ZNormValues z = znorm_closed_form(len, static_cast<std::uint32_t>(D));
      base = z.off;
      contribution = z.on - z.off;
    }
    std::fill(acc.begin(), acc.end(), base);
    for (std::uint32_t k = 0; k < n; ++k) acc[lin_idx[k]] += contribution;

    std::transform(acc.begin(), acc.end(), out.row(j).begin(), [](double x) { return static_cast<float>(x); });
  }
  return out;
}

MemoryReport memory_report(std::uint64_t vocab_size, const CodecConfig& config, unsigned scalar_bytes) {
  if (vocab_size == 0) throw RangeError("vocabulary size must be positive");
  if (scalar_bytes != 2 && scalar_bytes != 4) throw RangeError("table scalar size must be 2 or 4 bytes");
  const std::uint64_t table = vocab_size * config.dim() * scalar_bytes;
  const std::uint64_t buffer = vocab_size * (std::uint64_t{config.d_p()} + 2);
  return {table, buffer, static_cast<std::int64_t>(table) - static_cast<std::int64_t>(buffer)};
}

}  // namespace kronembed

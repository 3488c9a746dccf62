#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "kronembed/error.hpp"
#include "kronembed/matrix.hpp"

namespace kronembed {

/// Learned D -> d_model input projection. Weights are D x d_model, row-major.
struct ProjectionMatrix {
  std::uint32_t dim = 0;
  std::uint32_t d_model = 0;
  std::uint64_t seed = 0;
  MatrixF weights;
};

/// Draws i.i.d. N(0, sigma) weights with sigma = 1/sqrt(D) from a
/// mt19937_64 seeded with `seed`. Throws RangeError on zero dims or when
/// D * d_model does not fit in memory addressing.
ProjectionMatrix init_projection(std::uint32_t dim, std::uint32_t d_model, std::uint64_t seed);

/// rows (N x D) times weights (D x d_model). Throws DimensionError on shape mismatch.
template <typename T, typename W>
Matrix<T> project(const Matrix<T>& rows, const Matrix<W>& weights) {
  if (rows.cols() != weights.rows()) {
    throw DimensionError("codec rows have " + std::to_string(rows.cols()) + " columns but the projection expects " +
                         std::to_string(weights.rows()));
  }
  const std::size_t n = rows.rows();
  const std::size_t d = weights.rows();
  const std::size_t m = weights.cols();
  Matrix<T> out(n, m);
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double x = rows(i, k);
      if (x == 0.0) continue;
      const auto w = weights.row(k);
      for (std::size_t j = 0; j < m; ++j) acc[j] += x * static_cast<double>(w[j]);
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  return out;
}

template <typename T>
Matrix<T> project(const Matrix<T>& rows, const ProjectionMatrix& projection) {
  return project(rows, projection.weights);
}

/// Gradient of a scalar loss with respect to the weights, given the
/// upstream gradient dLoss/dOutput (N x d_model): rows^T * upstream.
template <typename T>
Matrix<T> grad_projection(const Matrix<T>& rows, const Matrix<T>& upstream) {
  if (rows.rows() != upstream.rows()) {
    throw DimensionError("codec rows and upstream gradient disagree on batch size");
  }
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  const std::size_t m = upstream.cols();
  Matrix<double> acc(d, m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = upstream.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double x = rows(i, k);
      if (x == 0.0) continue;
      auto out = acc.row(k);
      for (std::size_t j = 0; j < m; ++j) out[j] += x * static_cast<double>(g[j]);
    }
  }
  Matrix<T> out(d, m);
  std::transform(acc.data().begin(), acc.data().end(), out.data().begin(),
                 [](double v) { return static_cast<T>(v); });
  return out;
}

struct ParamAccounting {
  std::uint64_t bpe_input_params;  // V * d_model
  std::uint64_t kron_proj_params;  // D * d_model
  std::uint64_t buffer_bytes;      // V * (d_p + 2)
  double input_side_reduction;     // 1 - kron_proj / bpe_input
  /// Change in total trainable parameters against a tied-embedding baseline:
  /// the untied head replaces the removed table, leaving only the projection.
  std::int64_t net_trainable_delta_vs_tied;
  // Input pathway shipped at 16-bit precision.
  std::uint64_t bpe_fp16_bytes;   // V * d_model * 2
  std::uint64_t kron_fp16_bytes;  // D * d_model * 2 + buffer
};

/// Throws RangeError on zero inputs.
ParamAccounting param_accounting(std::uint64_t vocab_size, std::uint64_t d_model, std::uint64_t dim,
                                 std::uint64_t d_p);

}  // namespace kronembed

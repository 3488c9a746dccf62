#include "kronembed/projection.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace kronembed {

ProjectionMatrix init_projection(std::uint32_t dim, std::uint32_t d_model, std::uint64_t seed) {
  if (dim == 0 || d_model == 0) throw RangeError("projection dimensions must be positive");
  const std::uint64_t count = std::uint64_t{dim} * d_model;
  if (count > std::numeric_limits<std::size_t>::max() / sizeof(float)) {
    throw RangeError("projection of " + std::to_string(dim) + " x " + std::to_string(d_model) + " is too large");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  ProjectionMatrix p{dim, d_model, seed, MatrixF(dim, d_model)};
  for (float& w : p.weights.data()) w = static_cast<float>(normal(rng));
  return p;
}

ParamAccounting param_accounting(std::uint64_t vocab_size, std::uint64_t d_model, std::uint64_t dim,
                                 std::uint64_t d_p) {
  if (vocab_size == 0 || d_model == 0 || dim == 0 || d_p == 0) {
    throw RangeError("accounting inputs must be positive");
  }
  ParamAccounting a{};
  a.bpe_input_params = vocab_size * d_model;
  a.kron_proj_params = dim * d_model;
  a.buffer_bytes = vocab_size * (d_p + 2);
  a.input_side_reduction =
      1.0 - static_cast<double>(a.kron_proj_params) / static_cast<double>(a.bpe_input_params);
  // The Kronecker arm adds an untied V x d_model head and the projection, and
  // drops the tied input table.
  const auto untied_head = static_cast<std::int64_t>(vocab_size * d_model);
  a.net_trainable_delta_vs_tied = untied_head + static_cast<std::int64_t>(a.kron_proj_params) -
                                  static_cast<std::int64_t>(a.bpe_input_params);
  a.bpe_fp16_bytes = a.bpe_input_params * 2;
  a.kron_fp16_bytes = a.kron_proj_params * 2 + a.buffer_bytes;
  return a;
}

}  // namespace kronembed

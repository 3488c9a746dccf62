#include <doctest.h>

#include <cmath>
#include <random>

#include "kronembed/backend.hpp"
#include "kronembed/error.hpp"
#include "kronembed/projection.hpp"
#include "oracles.hpp"

using namespace kronembed;

namespace {

MatrixD random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixD m(r, c);
  for (auto& x : m.data()) x = n(rng);
  return m;
}

MatrixD naive_product(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.rows(), b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  return out;
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("init_projection statistics") {
  const ProjectionMatrix p = init_projection(4096, 768, 1337);
  CHECK(p.dim == 4096);
  CHECK(p.d_model == 768);
  CHECK(p.seed == 1337);
  double mean = 0.0;
  for (float w : p.weights.data()) mean += w;
  mean /= static_cast<double>(p.weights.data().size());
  double var = 0.0;
  for (float w : p.weights.data()) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / static_cast<double>(p.weights.data().size()));
  CHECK(sd >= 0.01531);
  CHECK(sd <= 0.01594);
  CHECK(std::abs(mean) < 3.0 * sd / std::sqrt(static_cast<double>(p.weights.data().size())));
}

TEST_CASE("init_projection determinism and shape") {
  CHECK(init_projection(64, 16, 7).weights == init_projection(64, 16, 7).weights);
  CHECK_FALSE(init_projection(64, 16, 7).weights == init_projection(64, 16, 8).weights);
  const ProjectionMatrix big = init_projection(8192, 4096, 0);
  CHECK(big.weights.data().size() == 33554432u);
  CHECK_THROWS_AS(init_projection(0, 4, 1), RangeError);
  CHECK_THROWS_AS(init_projection(4, 0, 1), RangeError);
}

TEST_CASE("project") {
  std::mt19937_64 rng(21);
  SUBCASE("identity weights") {
    MatrixD eye(6, 6, 0.0);
    for (std::size_t i = 0; i < 6; ++i) eye(i, i) = 1.0;
    const MatrixD x = random_matrix(3, 6, rng);
    CHECK(project(x, eye) == x);
  }
  SUBCASE("zero row") {
    const MatrixD w = random_matrix(5, 4, rng);
    const MatrixD y = project(MatrixD(1, 5, 0.0), w);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("codec batch against the naive product") {
    const CodecConfig cfg(16);
    std::vector<TokenByteRecord> recs;
    const char* words[] = {"run", "kubernetes", "\xC3\xA9t\xC3\xA9", "a"};
    for (std::uint32_t i = 0; i < 4; ++i) recs.push_back({i, words[i], words[i], TokenKind::Normal, {}});
    const CodecTable t = build_table(Vocabulary(recs, TokenizerFamily::PlainTsv, "w"), cfg);
    const ProjectionMatrix w = init_projection(cfg.dim(), 32, 99);

    MatrixD xd(4, cfg.dim());
    std::copy(t.rows.data().begin(), t.rows.data().end(), xd.data().begin());
    MatrixD wd(cfg.dim(), 32);
    std::copy(w.weights.data().begin(), w.weights.data().end(), wd.data().begin());

    const MatrixF got = project(t.rows, w);
    const MatrixD want = naive_product(xd, wd);
    double max_norm = 0.0;
    for (double v : want.data()) max_norm = std::max(max_norm, std::abs(v));
    for (std::size_t i = 0; i < want.data().size(); ++i) {
      CHECK(std::abs(got.data()[i] - want.data()[i]) <= 1e-5 * std::max(std::abs(want.data()[i]), max_norm * 1e-3));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(project(MatrixD(2, 3), MatrixD(4, 2)), DimensionError);
  }
  SUBCASE("linearity") {
    for (int trial = 0; trial < 50; ++trial) {
      const MatrixD a = random_matrix(3, 10, rng);
      const MatrixD b = random_matrix(3, 10, rng);
      const MatrixD w = random_matrix(10, 7, rng);
      const double alpha = 1.7, beta = -0.3;
      MatrixD mix(3, 10);
      for (std::size_t i = 0; i < mix.data().size(); ++i) mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
      const MatrixD lhs = project(mix, w);
      const MatrixD pa = project(a, w);
      const MatrixD pb = project(b, w);
      for (std::size_t i = 0; i < lhs.data().size(); ++i) {
        const double rhs = alpha * pa.data()[i] + beta * pb.data()[i];
        CHECK(std::abs(lhs.data()[i] - rhs) <= 1e-6 * std::max(1.0, std::abs(rhs)));
      }
    }
  }
}

TEST_CASE("grad_projection") {
  std::mt19937_64 rng(8);
  SUBCASE("zero upstream") {
    const MatrixD g = grad_projection(random_matrix(3, 8, rng), MatrixD(3, 5, 0.0));
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("single-entry row touches one weight row") {
    MatrixD x(1, 8, 0.0);
    x(0, 3) = 2.0;
    const MatrixD g = grad_projection(x, random_matrix(1, 5, rng));
    for (std::size_t k = 0; k < 8; ++k)
      for (std::size_t j = 0; j < 5; ++j) CHECK((g(k, j) != 0.0) == (k == 3));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(grad_projection(MatrixD(2, 3), MatrixD(3, 2)), DimensionError);
  }
  SUBCASE("sum-of-outputs loss against central differences") {
    const MatrixD x = random_matrix(3, 8, rng);
    const MatrixD g = grad_projection(x, MatrixD(3, 5, 1.0));
    const std::function<double(const std::vector<double>&)> loss = [&](const std::vector<double>& w) {
      const MatrixD y = project(x, MatrixD(8, 5, w));
      double s = 0.0;
      for (double v : y.data()) s += v;
      return s;
    };
    const std::vector<double> w0 = random_matrix(8, 5, rng).data();
    for (std::size_t i = 0; i < w0.size(); ++i) {
      CHECK(rel_err(oracle::central_difference(loss, w0, i, 1e-4), g.data()[i]) <= 1e-4);
    }
  }
  SUBCASE("nonlinear loss, 100 random instances") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng() % 4, d = 2 + rng() % 8, m = 1 + rng() % 6;
      const MatrixD x = random_matrix(n, d, rng);
      const MatrixD c = random_matrix(n, m, rng);
      const std::vector<double> w0 = random_matrix(d, m, rng).data();
      // loss = sum c * tanh(x w); upstream = c * (1 - tanh^2).
      const std::function<double(const std::vector<double>&)> loss = [&](const std::vector<double>& w) {
        const MatrixD y = project(x, MatrixD(d, m, w));
        double s = 0.0;
        for (std::size_t i = 0; i < y.data().size(); ++i) s += c.data()[i] * std::tanh(y.data()[i]);
        return s;
      };
      const MatrixD y = project(x, MatrixD(d, m, w0));
      MatrixD up(n, m);
      for (std::size_t i = 0; i < up.data().size(); ++i) {
        const double t = std::tanh(y.data()[i]);
        up.data()[i] = c.data()[i] * (1.0 - t * t);
      }
      const MatrixD g = grad_projection(x, up);
      for (std::size_t i = 0; i < w0.size(); ++i) {
        worst = std::max(worst, rel_err(oracle::central_difference(loss, w0, i, 1e-4), g.data()[i]));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("param_accounting") {
  SUBCASE("GPT-2 124M") {
    const ParamAccounting a = param_accounting(50272, 768, 4096, 16);
    CHECK(a.bpe_input_params == 38608896u);
    CHECK(a.kron_proj_params == 3145728u);
    CHECK(a.buffer_bytes == 904896u);
    CHECK(a.net_trainable_delta_vs_tied == 3145728);
    CHECK(a.input_side_reduction == doctest::Approx(1.0 - 3145728.0 / 38608896.0));
    CHECK(a.input_side_reduction == doctest::Approx(0.919).epsilon(1e-3));
    CHECK(a.bpe_fp16_bytes == 77217792u);
    CHECK(a.kron_fp16_bytes == 2u * 3145728u + 904896u);
  }
  SUBCASE("120B-MoE") {
    const ParamAccounting a = param_accounting(131072, 4096, 8192, 32);
    CHECK(a.bpe_input_params == 536870912u);
    CHECK(a.kron_proj_params == 33554432u);
    CHECK(a.buffer_bytes == 4456448u);
    CHECK(a.input_side_reduction == doctest::Approx(0.9375));
  }
  SUBCASE("unit case") {
    const ParamAccounting a = param_accounting(1, 1, 1, 1);
    CHECK(a.bpe_input_params == 1u);
    CHECK(a.kron_proj_params == 1u);
    CHECK(a.input_side_reduction == 0.0);
  }
  SUBCASE("zeros") {
    CHECK_THROWS_AS(param_accounting(0, 1, 1, 1), RangeError);
    CHECK_THROWS_AS(param_accounting(1, 1, 0, 1), RangeError);
  }
}

#pragma once

// Nearest-neighbor probes over embedding matrices: mean-centered cosine
// retrieval, canonical-form morphology scores, anisotropy and cross-vocabulary
// agreement. Works on codec tables and on externally trained matrices alike.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kronembed/backend.hpp"
#include "kronembed/byte_codec.hpp"
#include "kronembed/matrix.hpp"
#include "kronembed/vocab.hpp"

namespace kronembed {

enum class EmbeddingSource { KroneckerCodec, TrainedExternal, RandomGaussian };

std::string_view to_string(EmbeddingSource source) noexcept;

struct EmbeddingMatrix {
  MatrixF rows;  // V x dim
  EmbeddingSource source = EmbeddingSource::TrainedExternal;
  /// Present for codec spaces; needed to encode probe strings directly.
  std::optional<CodecConfig> codec;

  std::size_t vocab_size() const noexcept { return rows.rows(); }
  std::size_t dim() const noexcept { return rows.cols(); }
};

EmbeddingMatrix from_codec_table(CodecTable table);

/// Throws DegenerateError naming the first non-finite entry.
void check_finite(const EmbeddingMatrix& e);

std::vector<double> column_mean(const EmbeddingMatrix& e);
EmbeddingMatrix mean_center(const EmbeddingMatrix& e);
void mean_center_in_place(EmbeddingMatrix& e);

struct NeighborHit {
  std::uint32_t token_id = 0;
  std::string piece;
  double cosine = 0.0;
  std::string canonical;
};

struct NeighborResult {
  std::vector<NeighborHit> hits;
  std::size_t zero_rows_skipped = 0;
};

/// Top-k rows by cosine to `query`, ties broken by ascending id. Rows in
/// `exclude` are never returned and zero-norm rows are skipped and counted.
/// When `vocab` is given, piece and canonical form are filled in.
NeighborResult top_k_neighbors(const EmbeddingMatrix& e, std::span<const double> query, std::size_t k,
                               const std::set<std::uint32_t>& exclude = {}, const Vocabulary* vocab = nullptr);

enum class QueryMode { CodecEncode, ExactPiece, ExplicitIds };

std::string_view to_string(QueryMode mode) noexcept;
/// Accepts codec, piece, ids.
QueryMode parse_query_mode(std::string_view name);

struct Query {
  std::vector<double> vector;
  /// Vocabulary rows that are the probe itself; excluded from retrieval.
  std::set<std::uint32_t> self_ids;
};

/// CodecEncode runs the probe through the codec (codec spaces only).
/// ExactPiece looks up the probe, then " " + probe, then U+2581 + probe, by
/// stored piece or decoded bytes. ExplicitIds averages the given rows.
Query make_query(std::string_view probe, const EmbeddingMatrix& e, const Vocabulary& vocab, QueryMode mode,
                 std::span<const std::uint32_t> ids = {});

/// Replace U+2581 and U+0120 with a space, strip the punctuation set
/// " \t\n\r.,;:!?\"'`()[]{}_-/\\<>" from both ends, then casefold.
std::string canonical_form(std::string_view s);

/// Fraction of hits whose canonical form differs from the probe's.
double loose_morph_at_k(std::string_view probe, std::span<const NeighborHit> hits);

struct FamilyScores {
  double strict;      // canonical form is a (canonicalized) family member
  double root_score;  // canonical form contains the root
};

FamilyScores strict_and_root_morph(std::string_view probe, std::span<const NeighborHit> hits,
                                   const std::set<std::string>& family, std::string_view root);

struct AnisotropyReport {
  double mean_norm;
  double pairwise_cosine;
  double pairwise_stderr;
  std::size_t pairs;
};

/// Exact norm of the column mean, plus raw (uncentered) mean pairwise cosine
/// estimated from `pair_samples` uniform random pairs of distinct nonzero rows.
AnisotropyReport anisotropy(const EmbeddingMatrix& e, std::size_t pair_samples, std::uint64_t seed = 0);

/// Jaccard index of the canonical-form sets of the first k hits of each list.
double jaccard_canonical_topk(std::span<const NeighborHit> a, std::span<const NeighborHit> b, std::size_t k);

/// i.i.d. standard normal entries; deterministic for a given seed.
EmbeddingMatrix random_baseline(std::uint32_t vocab_size, std::uint32_t dim, std::uint64_t seed);

struct ProbeFamily {
  std::string family;
  std::string root;
  std::vector<std::string> probes;
  std::vector<std::string> strict_family;
};

/// Reads a JSON array of {family, root, probes, strict_family}.
std::vector<ProbeFamily> parse_probe_families(const nlohmann::json& doc);
std::vector<ProbeFamily> load_probe_families(const std::filesystem::path& path);

struct MorphReport {
  std::string probe;
  std::string space;
  std::size_t k = 0;
  std::vector<NeighborHit> hits;
  double loose_score = 0.0;
  std::optional<double> root_score;
  std::optional<double> strict_score;
  std::size_t zero_rows_skipped = 0;
};

nlohmann::json to_json(const MorphReport& report);

/// A mean-centered retrieval space. Queries built from vocabulary rows come
/// from the centered rows; codec-encoded queries have the same mean removed.
class ProbeSpace {
 public:
  ProbeSpace(EmbeddingMatrix e, const Vocabulary& vocab, std::string name);

  const EmbeddingMatrix& centered() const noexcept { return centered_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  const std::string& name() const noexcept { return name_; }

  Query query(std::string_view probe, QueryMode mode, std::span<const std::uint32_t> ids = {}) const;

  /// k is clamped to the number of retrievable rows.
  MorphReport probe(std::string_view probe, QueryMode mode, std::size_t k, std::span<const std::uint32_t> ids = {},
                    const ProbeFamily* family = nullptr) const;

 private:
  EmbeddingMatrix centered_;
  std::vector<double> mean_;
  const Vocabulary* vocab_;
  std::string name_;
};

}  // namespace kronembed

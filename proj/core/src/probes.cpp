#include "kronembed/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "kronembed/casefold.hpp"
#include "kronembed/error.hpp"

namespace kronembed {
namespace {

constexpr std::string_view kStripSet = " \t\n\r.,;:!?\"'`()[]{}_-/\\<>";
constexpr std::string_view kSpMarker = "\xE2\x96\x81";   // U+2581
constexpr std::string_view kGpt2Space = "\xC4\xA0";      // U+0120

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double row_dot(std::span<const float> row, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) s += static_cast<double>(row[i]) * q[i];
  return s;
}

double row_norm(std::span<const float> row) {
  double s = 0.0;
  for (float x : row) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::vector<double> row_as_double(const EmbeddingMatrix& e, std::uint32_t id) {
  const auto r = e.rows.row(id);
  return {r.begin(), r.end()};
}

std::string require_string(const nlohmann::json& obj, const char* key, std::size_t index) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    throw FormatError("probe family " + std::to_string(index) + ": missing string field \"" + key + "\"");
  }
  return obj[key].get<std::string>();
}

std::vector<std::string> string_list(const nlohmann::json& obj, const char* key, std::size_t index) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  if (!obj[key].is_array()) {
    throw FormatError("probe family " + std::to_string(index) + ": \"" + key + "\" must be an array");
  }
  for (const auto& v : obj[key]) {
    if (!v.is_string()) throw FormatError("probe family " + std::to_string(index) + ": non-string in " + key);
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string_view to_string(EmbeddingSource source) noexcept {
  switch (source) {
    case EmbeddingSource::KroneckerCodec: return "kronecker";
    case EmbeddingSource::TrainedExternal: return "trained";
    case EmbeddingSource::RandomGaussian: return "random";
  }
  return "?";
}

std::string_view to_string(QueryMode mode) noexcept {
  switch (mode) {
    case QueryMode::CodecEncode: return "codec";
    case QueryMode::ExactPiece: return "piece";
    case QueryMode::ExplicitIds: return "ids";
  }
  return "?";
}

QueryMode parse_query_mode(std::string_view name) {
  for (auto m : {QueryMode::CodecEncode, QueryMode::ExactPiece, QueryMode::ExplicitIds}) {
    if (name == to_string(m)) return m;
  }
  throw ModeError("unknown query mode \"" + std::string(name) + "\"");
}

EmbeddingMatrix from_codec_table(CodecTable table) {
  return {std::move(table.rows), EmbeddingSource::KroneckerCodec, table.config};
}

void check_finite(const EmbeddingMatrix& e) {
  const auto& d = e.rows.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw DegenerateError("non-finite entry at row " + std::to_string(i / e.dim()) + ", column " +
                            std::to_string(i % e.dim()));
    }
  }
}

std::vector<double> column_mean(const EmbeddingMatrix& e) {
  std::vector<double> mean(e.dim(), 0.0);
  for (std::size_t r = 0; r < e.vocab_size(); ++r) {
    const auto row = e.rows.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c];
  }
  if (e.vocab_size() > 0) {
    for (double& m : mean) m /= static_cast<double>(e.vocab_size());
  }
  return mean;
}

void mean_center_in_place(EmbeddingMatrix& e) {
  const std::vector<double> mean = column_mean(e);
  for (std::size_t r = 0; r < e.vocab_size(); ++r) {
    auto row = e.rows.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<float>(row[c] - mean[c]);
  }
}

EmbeddingMatrix mean_center(const EmbeddingMatrix& e) {
  EmbeddingMatrix out = e;
  mean_center_in_place(out);
  return out;
}

NeighborResult top_k_neighbors(const EmbeddingMatrix& e, std::span<const double> query, std::size_t k,
                               const std::set<std::uint32_t>& exclude, const Vocabulary* vocab) {
  if (k == 0) throw RangeError("k must be at least 1");
  if (query.size() != e.dim()) {
    throw DimensionError("query has " + std::to_string(query.size()) + " components but the space has " +
                         std::to_string(e.dim()));
  }
  const double qn = norm(query);
  if (!(qn > 0.0)) throw DegenerateError("query vector has zero norm");

  NeighborResult result;
  std::vector<std::pair<double, std::uint32_t>> scored;
  scored.reserve(e.vocab_size());
  for (std::size_t r = 0; r < e.vocab_size(); ++r) {
    const auto id = static_cast<std::uint32_t>(r);
    if (exclude.count(id) != 0) continue;
    const auto row = e.rows.row(r);
    const double rn = row_norm(row);
    if (!(rn > 0.0)) {
      ++result.zero_rows_skipped;
      continue;
    }
    scored.emplace_back(row_dot(row, query) / (qn * rn), id);
  }

  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  result.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    NeighborHit hit;
    hit.token_id = scored[i].second;
    hit.cosine = scored[i].first;
    if (vocab != nullptr) {
      hit.piece = (*vocab)[hit.token_id].piece;
      hit.canonical = canonical_form(hit.piece);
    }
    result.hits.push_back(std::move(hit));
  }
  return result;
}

Query make_query(std::string_view probe, const EmbeddingMatrix& e, const Vocabulary& vocab, QueryMode mode,
                 std::span<const std::uint32_t> ids) {
  Query q;
  switch (mode) {
    case QueryMode::CodecEncode: {
      if (e.source != EmbeddingSource::KroneckerCodec || !e.codec) {
        throw ModeError("codec-encoded queries need a Kronecker codec space");
      }
      q.vector = materialize(probe, *e.codec);
      // An in-vocabulary probe is its own nearest row; an OOV string has no self.
      const Bytes kept = truncate_utf8_safe(probe, e.codec->d_p());
      for (const auto& r : vocab.records()) {
        if (truncate_utf8_safe(r.bytes, e.codec->d_p()) == kept) q.self_ids.insert(r.token_id);
      }
      return q;
    }
    case QueryMode::ExactPiece: {
      const std::string variants[] = {std::string(probe), " " + std::string(probe),
                                      std::string(kSpMarker) + std::string(probe)};
      for (const auto& v : variants) {
        auto id = vocab.find_piece(v);
        if (!id) id = vocab.find_bytes(v);
        if (id) {
          if (*id >= e.vocab_size()) throw RangeError("token id " + std::to_string(*id) + " has no embedding row");
          q.vector = row_as_double(e, *id);
          q.self_ids.insert(*id);
          return q;
        }
      }
      throw NotFoundError("probe \"" + std::string(probe) + "\" not found in " + vocab.name() + " (tried \"" +
                          variants[0] + "\", \"" + variants[1] + "\", \"" + variants[2] + "\")");
    }
    case QueryMode::ExplicitIds: {
      if (ids.empty()) throw RangeError("explicit-id query needs at least one id");
      q.vector.assign(e.dim(), 0.0);
      for (std::uint32_t id : ids) {
        if (id >= e.vocab_size()) throw RangeError("token id " + std::to_string(id) + " out of range");
        const auto row = e.rows.row(id);
        for (std::size_t c = 0; c < row.size(); ++c) q.vector[c] += row[c];
      }
      for (double& x : q.vector) x /= static_cast<double>(ids.size());
      if (ids.size() == 1) q.self_ids.insert(ids.front());
      return q;
    }
  }
  throw ModeError("unknown query mode");
}

std::string canonical_form(std::string_view s) {
  std::string out = replace_all(std::string(s), kSpMarker, " ");
  out = replace_all(std::move(out), kGpt2Space, " ");
  const std::size_t first = out.find_first_not_of(kStripSet);
  if (first == std::string::npos) return {};
  const std::size_t last = out.find_last_not_of(kStripSet);
  return casefold(std::string_view(out).substr(first, last - first + 1));
}

double loose_morph_at_k(std::string_view probe, std::span<const NeighborHit> hits) {
  if (hits.empty()) throw RangeError("loose morph@K needs at least one hit");
  const std::string target = canonical_form(probe);
  const auto differing = std::count_if(hits.begin(), hits.end(), [&](const NeighborHit& h) {
    return canonical_form(h.piece) != target;
  });
  return static_cast<double>(differing) / static_cast<double>(hits.size());
}

FamilyScores strict_and_root_morph(std::string_view /*probe*/, std::span<const NeighborHit> hits,
                                   const std::set<std::string>& family, std::string_view root) {
  if (family.empty() || root.empty()) throw RangeError("family and root must be non-empty");
  if (hits.empty()) throw RangeError("family scores need at least one hit");
  std::set<std::string> members;
  for (const auto& f : family) members.insert(canonical_form(f));
  const std::string root_c = canonical_form(root);

  std::size_t strict = 0;
  std::size_t rooted = 0;
  for (const auto& h : hits) {
    const std::string c = canonical_form(h.piece);
    strict += members.count(c);
    rooted += c.find(root_c) != std::string::npos ? 1 : 0;
  }
  const auto n = static_cast<double>(hits.size());
  return {static_cast<double>(strict) / n, static_cast<double>(rooted) / n};
}

AnisotropyReport anisotropy(const EmbeddingMatrix& e, std::size_t pair_samples, std::uint64_t seed) {
  if (e.vocab_size() < 2) throw RangeError("anisotropy needs at least two rows");
  if (pair_samples == 0) throw RangeError("pair sample count must be positive");

  const std::vector<double> mean = column_mean(e);
  AnisotropyReport report{norm(mean), 0.0, 0.0, pair_samples};

  std::vector<std::uint32_t> live;
  std::vector<double> norms(e.vocab_size());
  for (std::size_t r = 0; r < e.vocab_size(); ++r) {
    norms[r] = row_norm(e.rows.row(r));
    if (norms[r] > 0.0) live.push_back(static_cast<std::uint32_t>(r));
  }
  if (live.size() < 2) throw DegenerateError("fewer than two nonzero rows");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < pair_samples; ++s) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    const auto ra = e.rows.row(live[a]);
    const auto rb = e.rows.row(live[b]);
    double dot = 0.0;
    for (std::size_t c = 0; c < ra.size(); ++c) dot += static_cast<double>(ra[c]) * rb[c];
    const double cos = dot / (norms[live[a]] * norms[live[b]]);
    sum += cos;
    sum_sq += cos * cos;
  }
  const auto n = static_cast<double>(pair_samples);
  report.pairwise_cosine = sum / n;
  if (pair_samples > 1) {
    const double var = std::max(0.0, (sum_sq - n * report.pairwise_cosine * report.pairwise_cosine) / (n - 1.0));
    report.pairwise_stderr = std::sqrt(var / n);
  }
  return report;
}

double jaccard_canonical_topk(std::span<const NeighborHit> a, std::span<const NeighborHit> b, std::size_t k) {
  if (k == 0) throw RangeError("k must be at least 1");
  if (a.size() < k || b.size() < k) throw RangeError("hit lists are shorter than k");
  std::set<std::string> sa;
  std::set<std::string> sb;
  for (std::size_t i = 0; i < k; ++i) {
    sa.insert(canonical_form(a[i].piece));
    sb.insert(canonical_form(b[i].piece));
  }
  std::vector<std::string> inter;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  const std::size_t uni = sa.size() + sb.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

EmbeddingMatrix random_baseline(std::uint32_t vocab_size, std::uint32_t dim, std::uint64_t seed) {
  if (vocab_size == 0 || dim == 0) throw RangeError("random baseline dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EmbeddingMatrix e{MatrixF(vocab_size, dim), EmbeddingSource::RandomGaussian, std::nullopt};
  for (float& x : e.rows.data()) x = static_cast<float>(normal(rng));
  return e;
}

std::vector<ProbeFamily> parse_probe_families(const nlohmann::json& doc) {
  if (!doc.is_array()) throw FormatError("probe family file must hold a JSON array");
  std::vector<ProbeFamily> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    if (!obj.is_object()) throw FormatError("probe family " + std::to_string(i) + " is not an object");
    ProbeFamily f;
    f.family = require_string(obj, "family", i);
    f.root = require_string(obj, "root", i);
    f.probes = string_list(obj, "probes", i);
    f.strict_family = string_list(obj, "strict_family", i);
    if (f.probes.empty()) throw FormatError("probe family \"" + f.family + "\" has no probes");
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<ProbeFamily> load_probe_families(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe family file " + path.string());
  try {
    return parse_probe_families(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& err) {
    throw FormatError(path.string() + ": " + err.what());
  }
}

nlohmann::json to_json(const MorphReport& report) {
  nlohmann::json hits = nlohmann::json::array();
  for (const auto& h : report.hits) {
    hits.push_back({{"id", h.token_id}, {"piece", h.piece}, {"cosine", h.cosine}, {"canonical", h.canonical}});
  }
  nlohmann::json j = {{"probe", report.probe},
                      {"space", report.space},
                      {"k", report.k},
                      {"hits", std::move(hits)},
                      {"loose_morph", report.loose_score},
                      {"root_morph", nullptr},
                      {"strict_morph", nullptr}};
  if (report.root_score) j["root_morph"] = *report.root_score;
  if (report.strict_score) j["strict_morph"] = *report.strict_score;
  if (report.zero_rows_skipped > 0) j["zero_rows_skipped"] = report.zero_rows_skipped;
  return j;
}

ProbeSpace::ProbeSpace(EmbeddingMatrix e, const Vocabulary& vocab, std::string name)
    : centered_(std::move(e)), vocab_(&vocab), name_(std::move(name)) {
  if (centered_.vocab_size() != vocab.size()) {
    throw DimensionError("embedding has " + std::to_string(centered_.vocab_size()) + " rows but the vocabulary has " +
                         std::to_string(vocab.size()) + " entries");
  }
  mean_ = column_mean(centered_);
  mean_center_in_place(centered_);
}

Query ProbeSpace::query(std::string_view probe, QueryMode mode, std::span<const std::uint32_t> ids) const {
  Query q = make_query(probe, centered_, *vocab_, mode, ids);
  if (mode == QueryMode::CodecEncode) {
    for (std::size_t c = 0; c < q.vector.size(); ++c) q.vector[c] -= mean_[c];
  }
  return q;
}

MorphReport ProbeSpace::probe(std::string_view probe, QueryMode mode, std::size_t k,
                              std::span<const std::uint32_t> ids, const ProbeFamily* family) const {
  const Query q = query(probe, mode, ids);
  const std::size_t available = centered_.vocab_size() - q.self_ids.size();
  const std::size_t k_eff = std::max<std::size_t>(1, std::min(k, available));
  NeighborResult res = top_k_neighbors(centered_, q.vector, k_eff, q.self_ids, vocab_);

  MorphReport report;
  report.probe = std::string(probe);
  report.space = name_;
  report.k = k_eff;
  report.zero_rows_skipped = res.zero_rows_skipped;
  report.hits = std::move(res.hits);
  if (!report.hits.empty()) {
    report.loose_score = loose_morph_at_k(probe, report.hits);
    if (family != nullptr && !family->strict_family.empty()) {
      const std::set<std::string> members(family->strict_family.begin(), family->strict_family.end());
      const FamilyScores s = strict_and_root_morph(probe, report.hits, members, family->root);
      report.strict_score = s.strict;
      report.root_score = s.root_score;
    }
  }
  return report;
}

}  // namespace kronembed

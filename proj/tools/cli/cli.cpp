#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kronembed/backend.hpp"
#include "kronembed/byte_codec.hpp"
#include "kronembed/error.hpp"
#include "kronembed/io.hpp"
#include "kronembed/probes.hpp"
#include "kronembed/projection.hpp"
#include "kronembed/vocab.hpp"

namespace kronembed::cli {
namespace {

using nlohmann::json;

// Flag combinations CLI11 cannot express; reported with the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VocabFlags {
  std::string format = "auto";
  std::vector<std::string> special;
};

struct CodecFlags {
  std::uint32_t d_p = CodecConfig::kDefaultPositions;
  bool no_znorm = false;

  CodecConfig config() const { return CodecConfig(d_p, !no_znorm); }
};

void add_vocab_flags(CLI::App* cmd, VocabFlags& f) {
  cmd->add_option("--format", f.format, "Vocabulary file format")
      ->check(CLI::IsMember({"gpt2-json", "tokenizer-json", "tsv", "auto"}))
      ->capture_default_str();
  cmd->add_option("--special", f.special, "Extra special-token piece (repeatable)")->allow_extra_args(false);
}

void add_codec_flags(CLI::App* cmd, CodecFlags& f) {
  cmd->add_option("--dp", f.d_p, "Maximum encoded byte positions")
      ->check(CLI::Range(1u, CodecConfig::kMaxPositions))
      ->capture_default_str();
  cmd->add_flag("--no-znorm", f.no_znorm, "Store raw unit-norm codec rows");
}

LoadOptions load_options(const VocabFlags& f, std::optional<std::uint32_t> d_p = std::nullopt) {
  LoadOptions opts;
  opts.format = parse_vocab_format(f.format);
  opts.special_pieces.insert(f.special.begin(), f.special.end());
  opts.d_p = d_p;
  return opts;
}

std::ostream& report_stream(const std::string& path, std::ostream& out, std::unique_ptr<std::ofstream>& file) {
  if (path.empty()) return out;
  file = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*file) throw IoError("cannot open " + path + " for writing");
  return *file;
}

std::string format_bytes(double bytes) {
  const char* units[] = {"B", "KB", "MB", "GB", "TB"};
  int u = 0;
  while (bytes >= 1000.0 && u < 4) {
    bytes /= 1000.0;
    ++u;
  }
  std::ostringstream s;
  s.precision(u == 0 ? 0 : 2);
  s << std::fixed << bytes << ' ' << units[u];
  return s.str();
}

EmbeddingMatrix load_space(const std::string& path, bool apply_znorm) {
  switch (detect_artifact(path)) {
    case ArtifactKind::CodecTable:
      return from_codec_table(read_table(std::filesystem::path(path)));
    case ArtifactKind::ByteBuffer: {
      const ByteBuffer buf = read_byte_buffer(std::filesystem::path(path), apply_znorm);
      std::vector<std::uint32_t> ids(buf.vocab_size);
      std::iota(ids.begin(), ids.end(), 0u);
      return from_codec_table(CodecTable{buf.config, compute_dynamic(buf, ids), {}});
    }
    case ArtifactKind::Embedding:
      return read_embedding(std::filesystem::path(path));
    case ArtifactKind::Projection:
      throw FormatError(path + " is a projection matrix, not an embedding space");
    case ArtifactKind::Unknown:
      break;
  }
  throw FormatError(path + " is not a KBT1, KBB1 or KEMB1 file");
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const EmptyTokenError*>(&e)) return "empty_token";
  if (dynamic_cast<const RangeError*>(&e)) return "range";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const NotFoundError*>(&e)) return "not_found";
  if (dynamic_cast<const DegenerateError*>(&e)) return "degenerate";
  if (dynamic_cast<const ModeError*>(&e)) return "mode";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const CLI::Error*>(&e)) return "usage";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "format";
  return "runtime";
}

// ---------------------------------------------------------------- commands

struct BuildTableCmd {
  std::string vocab;
  VocabFlags vf;
  CodecFlags cf;
  std::string out;
  std::string scalar = "f32";
  unsigned workers = 0;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("build-table", "Precompute the dense codec table (KBT1)");
    c->add_option("--vocab", vocab, "Vocabulary file")->required();
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    c->add_option("--out", out, "Output KBT1 path")->required();
    c->add_option("--scalar", scalar, "Stored scalar type")->check(CLI::IsMember({"f32", "bf16"}))->capture_default_str();
    c->add_option("--workers", workers, "Build threads (0 = all cores)");
  }

  int run(std::ostream& out_s, std::ostream& err) const {
    const CodecConfig config = cf.config();
    const Vocabulary v = load_vocab(vocab, load_options(vf, config.d_p()));
    const CodecTable table = build_table(v, config, workers);
    write_table(std::filesystem::path(out), table, scalar == "bf16" ? ScalarCode::BFloat16 : ScalarCode::Float32);
    if (!table.truncated_ids.empty()) {
      err << "warning: " << table.truncated_ids.size() << " tokens truncated to d_p=" << config.d_p() << '\n';
    }
    out_s << json{{"command", "build-table"},
                  {"vocab", v.name()},
                  {"vocab_size", table.vocab_size()},
                  {"d_p", config.d_p()},
                  {"dim", config.dim()},
                  {"znorm", config.apply_znorm()},
                  {"scalar", scalar},
                  {"truncated", table.truncated_ids.size()},
                  {"out", out}}
                 .dump()
          << '\n';
    return kExitOk;
  }
};

struct BuildBufferCmd {
  std::string vocab;
  VocabFlags vf;
  CodecFlags cf;
  std::string out;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("build-buffer", "Store the compact byte buffer (KBB1)");
    c->add_option("--vocab", vocab, "Vocabulary file")->required();
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    c->add_option("--out", out, "Output KBB1 path")->required();
  }

  int run(std::ostream& out_s, std::ostream& err) const {
    const CodecConfig config = cf.config();
    const Vocabulary v = load_vocab(vocab, load_options(vf, config.d_p()));
    const ByteBuffer buf = build_byte_buffer(v, config);
    write_byte_buffer(std::filesystem::path(out), buf);
    if (!buf.truncated_ids.empty()) {
      err << "warning: " << buf.truncated_ids.size() << " tokens truncated to d_p=" << config.d_p() << '\n';
    }
    out_s << json{{"command", "build-buffer"},
                  {"vocab", v.name()},
                  {"vocab_size", buf.vocab_size},
                  {"d_p", config.d_p()},
                  {"footprint_bytes", buf.footprint_bytes()},
                  {"out", out}}
                 .dump()
          << '\n';
    return kExitOk;
  }
};

struct InitProjectionCmd {
  std::uint32_t dim = 0;
  std::uint32_t d_p = 0;
  std::uint32_t d_model = 0;
  std::uint64_t seed = 0;
  std::string out;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("init-projection", "Initialize a D x d_model projection (KPJ1)");
    auto* dim_opt = c->add_option("--dim", dim, "Codec dimension D")->check(CLI::PositiveNumber);
    c->add_option("--dp", d_p, "Derive D = 256 * d_p")->check(CLI::Range(1u, CodecConfig::kMaxPositions))->excludes(dim_opt);
    c->add_option("--d-model", d_model, "Output width")->required()->check(CLI::PositiveNumber);
    c->add_option("--seed", seed, "RNG seed")->capture_default_str();
    c->add_option("--out", out, "Output KPJ1 path")->required();
  }

  int run(std::ostream& out_s, std::ostream&) const {
    if (dim == 0 && d_p == 0) throw UsageError("init-projection needs --dim or --dp");
    const std::uint32_t D = dim != 0 ? dim : CodecConfig(d_p).dim();
    const ProjectionMatrix p = init_projection(D, d_model, seed);
    write_projection(std::filesystem::path(out), p);
    out_s << json{{"command", "init-projection"},
                  {"dim", p.dim},
                  {"d_model", p.d_model},
                  {"seed", p.seed},
                  {"params", std::uint64_t{p.dim} * p.d_model},
                  {"out", out}}
                 .dump()
          << '\n';
    return kExitOk;
  }
};

struct EmbedCmd {
  std::string text;
  std::vector<std::uint32_t> ids;
  std::string backend;
  std::string projection;
  CodecFlags cf;
  bool sparse = false;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("embed", "Embed a string or vocabulary ids");
    auto* text_opt = c->add_option("text", text, "UTF-8 string to encode");
    c->add_option("--ids", ids, "Token ids to look up (needs --backend)")->delimiter(',')->excludes(text_opt);
    c->add_option("--backend", backend, "KBT1 table or KBB1 buffer");
    c->add_option("--projection", projection, "KPJ1 projection to apply");
    add_codec_flags(c, cf);
    c->add_flag("--sparse", sparse, "Print only nonzero coordinates");
  }

  void emit(std::ostream& out, json head, std::span<const double> values) const {
    head["dim"] = values.size();
    if (sparse) {
      json entries = json::array();
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] != 0.0) entries.push_back(json::array({i, values[i]}));
      }
      head["entries"] = std::move(entries);
    } else {
      head["values"] = std::vector<double>(values.begin(), values.end());
    }
    out << head.dump() << '\n';
  }

  int run(std::ostream& out, std::ostream& err) const {
    const bool text_mode = !text.empty();
    if (!text_mode && ids.empty()) throw UsageError("embed needs a string or --ids");
    if (!text_mode && backend.empty()) throw UsageError("embed --ids needs --backend");

    std::optional<ProjectionMatrix> proj;
    if (!projection.empty()) proj = read_projection(std::filesystem::path(projection));

    CodecConfig config = cf.config();
    std::optional<CodecTable> table;
    std::optional<ByteBuffer> buffer;
    if (!backend.empty()) {
      const auto kind = detect_artifact(backend);
      if (kind == ArtifactKind::CodecTable) {
        table = read_table(std::filesystem::path(backend));
        config = table->config;
      } else if (kind == ArtifactKind::ByteBuffer) {
        buffer = read_byte_buffer(std::filesystem::path(backend), !cf.no_znorm);
        config = buffer->config;
      } else {
        throw FormatError(backend + " is not a KBT1 table or KBB1 buffer");
      }
    }
    if (proj && proj->dim != config.dim()) {
      throw DimensionError("projection expects D=" + std::to_string(proj->dim) + " but the codec has D=" +
                           std::to_string(config.dim()));
    }

    auto finish = [&](json head, MatrixD rows) {
      if (proj) rows = project(rows, proj->weights);
      emit(out, std::move(head), rows.row(0));
    };

    if (text_mode) {
      const Bytes kept = truncate_utf8_safe(text, config.d_p());
      if (kept.size() < text.size()) {
        err << "warning: input is " << text.size() << " bytes; encoded the first " << kept.size()
            << " (d_p=" << config.d_p() << ")\n";
      }
      std::vector<double> row = materialize(text, config);
      const std::size_t width = row.size();
      json head{{"input", text}, {"length", kept.size()}, {"truncated", kept.size() < text.size()},
                {"d_p", config.d_p()}, {"znorm", config.apply_znorm()}, {"projected", proj.has_value()}};
      finish(std::move(head), MatrixD(1, width, std::move(row)));
      return kExitOk;
    }

    const MatrixF rows = table ? lookup(*table, ids) : compute_dynamic(*buffer, ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto r = rows.row(i);
      MatrixD one(1, r.size(), std::vector<double>(r.begin(), r.end()));
      finish(json{{"id", ids[i]}, {"d_p", config.d_p()}, {"znorm", config.apply_znorm()},
                  {"projected", proj.has_value()}},
             std::move(one));
    }
    return kExitOk;
  }
};

struct NeighborsCmd {
  std::vector<std::string> probes;
  std::string vocab;
  VocabFlags vf;
  CodecFlags cf;
  std::string space;
  std::uint32_t random_dim = 0;
  std::uint64_t seed = 0;
  std::size_t k = 5;
  std::string mode = "codec";
  std::vector<std::uint32_t> ids;
  std::string families;
  std::string out;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("neighbors", "Top-k mean-centered cosine neighbors with morph scores");
    c->add_option("probes", probes, "Probe strings");
    c->add_option("--vocab", vocab, "Vocabulary file")->required();
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    auto* space_opt = c->add_option("--space", space, "KBT1, KBB1 or KEMB1 file (default: codec table built from --vocab)");
    c->add_option("--random-dim", random_dim, "Use a Gaussian random table of this width")
        ->check(CLI::PositiveNumber)
        ->excludes(space_opt);
    c->add_option("--seed", seed, "Seed for --random-dim")->capture_default_str();
    c->add_option("--k", k, "Neighbors per probe")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--mode", mode, "Query formation")->check(CLI::IsMember({"codec", "piece", "ids"}))->capture_default_str();
    c->add_option("--ids", ids, "Token ids averaged into the query (mode ids)")->delimiter(',');
    c->add_option("--families", families, "Probe-family JSON; adds root and strict scores");
    c->add_option("--out", out, "Write JSON lines here instead of stdout");
  }

  int run(std::ostream& out_s, std::ostream& err) const {
    const QueryMode qm = parse_query_mode(mode);
    if (qm == QueryMode::ExplicitIds && ids.empty()) throw UsageError("--mode ids needs --ids");
    if (qm != QueryMode::ExplicitIds && !ids.empty()) throw UsageError("--ids only applies to --mode ids");
    if (probes.empty() && families.empty()) throw UsageError("neighbors needs probe strings or --families");
    if (qm == QueryMode::ExplicitIds && probes.size() != 1) throw UsageError("--mode ids takes exactly one probe label");

    std::vector<ProbeFamily> fams;
    if (!families.empty()) fams = load_probe_families(families);
    std::vector<std::string> todo = probes;
    if (todo.empty()) {
      for (const auto& f : fams) todo.insert(todo.end(), f.probes.begin(), f.probes.end());
    }
    auto family_of = [&](const std::string& p) -> const ProbeFamily* {
      for (const auto& f : fams) {
        if (std::find(f.probes.begin(), f.probes.end(), p) != f.probes.end()) return &f;
      }
      return nullptr;
    };

    const CodecConfig config = cf.config();
    const Vocabulary v = load_vocab(vocab, load_options(vf, config.d_p()));
    EmbeddingMatrix e;
    std::string name;
    if (random_dim != 0) {
      e = random_baseline(static_cast<std::uint32_t>(v.size()), random_dim, seed);
      name = "random";
    } else if (!space.empty()) {
      e = load_space(space, config.apply_znorm());
      name = std::filesystem::path(space).filename().string();
    } else {
      e = from_codec_table(build_table(v, config));
      name = "kronecker";
    }
    const ProbeSpace ps(std::move(e), v, name);

    std::unique_ptr<std::ofstream> file;
    std::ostream& sink = report_stream(out, out_s, file);
    for (const auto& p : todo) {
      const MorphReport r = ps.probe(p, qm, k, ids, family_of(p));
      if (r.k < k) err << "warning: k=" << k << " clamped to " << r.k << " retrievable rows for probe '" << p << "'\n";
      if (r.zero_rows_skipped > 0) err << "warning: skipped " << r.zero_rows_skipped << " zero-norm rows\n";
      sink << to_json(r).dump() << '\n';
    }
    return kExitOk;
  }
};

struct CoverageCmd {
  std::vector<std::string> vocabs;
  VocabFlags vf;
  std::vector<std::uint32_t> dps;
  std::string report = "json";

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("coverage", "Fraction of non-special tokens that fit in d_p bytes");
    c->add_option("--vocab", vocabs, "Vocabulary files (repeat the flag)")->required()->allow_extra_args(false);
    add_vocab_flags(c, vf);
    c->add_option("--dp", dps, "Comma-separated d_p values")
        ->required()
        ->delimiter(',')
        ->check(CLI::Range(1u, CodecConfig::kMaxPositions));
    c->add_option("--report", report, "Output format")->check(CLI::IsMember({"json", "tsv"}))->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    if (dps.empty()) throw UsageError("--dp needs at least one value");
    if (report == "tsv") out << "vocab\tfamily\ttokens\td_p\tcoverage_pct\n";
    for (const auto& path : vocabs) {
      const Vocabulary v = load_vocab(path, load_options(vf));
      const auto fractions = coverage_stats(v, dps);
      const auto counted = std::count_if(v.records().begin(), v.records().end(),
                                         [](const TokenByteRecord& r) { return r.kind != TokenKind::Special; });
      if (report == "tsv") {
        for (std::size_t i = 0; i < dps.size(); ++i) {
          out << v.name() << '\t' << to_string(v.family()) << '\t' << counted << '\t' << dps[i] << '\t'
              << fractions[i] * 100.0 << '\n';
        }
        continue;
      }
      json cov = json::object();
      for (std::size_t i = 0; i < dps.size(); ++i) cov[std::to_string(dps[i])] = fractions[i];
      out << json{{"vocab", v.name()},
                  {"family", to_string(v.family())},
                  {"tokens_counted", counted},
                  {"max_byte_length", v.max_byte_length()},
                  {"coverage", cov}}
                 .dump()
          << '\n';
    }
    return kExitOk;
  }
};

struct JaccardCmd {
  std::vector<std::string> vocabs;
  VocabFlags vf;
  CodecFlags cf;
  std::vector<std::string> probes;
  std::size_t k = 5;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("jaccard", "Cross-vocabulary agreement of top-k codec neighborhoods");
    c->add_option("--vocab", vocabs, "Two or more vocabulary files (repeat the flag)")->required()->allow_extra_args(false);
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    c->add_option("probes", probes, "Probe strings")->required();
    c->add_option("--k", k, "Neighbors per probe")->check(CLI::PositiveNumber)->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    if (vocabs.size() < 2) throw UsageError("jaccard needs at least two --vocab files");
    const CodecConfig config = cf.config();

    // One space at a time keeps peak memory at a single table.
    std::vector<std::string> names;
    std::vector<std::vector<std::vector<NeighborHit>>> hits;  // [vocab][probe]
    for (const auto& path : vocabs) {
      const Vocabulary v = load_vocab(path, load_options(vf, config.d_p()));
      const ProbeSpace ps(from_codec_table(build_table(v, config)), v, v.name());
      auto& per_probe = hits.emplace_back();
      for (const auto& p : probes) per_probe.push_back(ps.probe(p, QueryMode::CodecEncode, k).hits);
      names.push_back(v.name());
    }

    double total = 0.0;
    std::size_t count = 0;
    json per_probe = json::array();
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
      json matrix = json::array();
      double sum = 0.0;
      std::size_t pairs = 0;
      for (std::size_t a = 0; a < vocabs.size(); ++a) {
        json row = json::array();
        for (std::size_t b = 0; b < vocabs.size(); ++b) {
          const std::size_t kk = std::min({k, hits[a][pi].size(), hits[b][pi].size()});
          const double j = jaccard_canonical_topk(hits[a][pi], hits[b][pi], kk);
          row.push_back(j);
          if (a < b) {
            sum += j;
            ++pairs;
          }
        }
        matrix.push_back(std::move(row));
      }
      per_probe.push_back({{"probe", probes[pi]}, {"matrix", std::move(matrix)}, {"mean", sum / static_cast<double>(pairs)}});
      total += sum;
      count += pairs;
    }
    out << json{{"vocabs", names}, {"k", k}, {"probes", per_probe}, {"mean", total / static_cast<double>(count)}}.dump()
        << '\n';
    return kExitOk;
  }
};

struct AccountingCmd {
  std::uint64_t vocab_size = 0;
  std::uint64_t d_model = 0;
  std::uint64_t dim = 0;
  std::uint32_t d_p = 0;
  std::string report = "json";

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("accounting", "Input-side parameter accounting, BPE table vs. codec + projection");
    c->add_option("--vocab-size", vocab_size, "Vocabulary size V")->required()->check(CLI::PositiveNumber);
    c->add_option("--d-model", d_model, "Model width")->required()->check(CLI::PositiveNumber);
    c->add_option("--dp", d_p, "Codec positions")->required()->check(CLI::Range(1u, CodecConfig::kMaxPositions));
    c->add_option("--dim", dim, "Codec dimension (default 256 * d_p)")->check(CLI::PositiveNumber);
    c->add_option("--report", report, "Output format")->check(CLI::IsMember({"json", "tsv"}))->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    const std::uint64_t D = dim != 0 ? dim : std::uint64_t{kByteAlphabet} * d_p;
    const ParamAccounting a = param_accounting(vocab_size, d_model, D, d_p);
    if (report == "tsv") {
      out << "V\td_model\tD\td_p\tbpe_input_params\tkron_proj_params\tbuffer_bytes\treduction_pct\tnet_delta_vs_tied\t"
             "bpe_fp16_bytes\tkron_fp16_bytes\n";
      out << vocab_size << '\t' << d_model << '\t' << D << '\t' << d_p << '\t' << a.bpe_input_params << '\t'
          << a.kron_proj_params << '\t' << a.buffer_bytes << '\t' << a.input_side_reduction * 100.0 << '\t'
          << a.net_trainable_delta_vs_tied << '\t' << a.bpe_fp16_bytes << '\t' << a.kron_fp16_bytes << '\n';
      return kExitOk;
    }
    out << json{{"vocab_size", vocab_size},
                {"d_model", d_model},
                {"dim", D},
                {"d_p", d_p},
                {"bpe_input_params", a.bpe_input_params},
                {"kron_proj_params", a.kron_proj_params},
                {"buffer_bytes", a.buffer_bytes},
                {"input_side_reduction", a.input_side_reduction},
                {"net_trainable_delta_vs_tied", a.net_trainable_delta_vs_tied},
                {"bpe_fp16_bytes", a.bpe_fp16_bytes},
                {"kron_fp16_bytes", a.kron_fp16_bytes}}
               .dump()
        << '\n';
    return kExitOk;
  }
};

struct MemoryCmd {
  std::uint64_t vocab_size = 0;
  std::uint32_t d_p = CodecConfig::kDefaultPositions;
  unsigned scalar_bytes = 2;
  std::string report = "json";

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("memory", "Dense table vs. byte buffer footprint");
    c->add_option("--vocab-size", vocab_size, "Vocabulary size V")->required()->check(CLI::PositiveNumber);
    c->add_option("--dp", d_p, "Codec positions")->check(CLI::Range(1u, CodecConfig::kMaxPositions))->capture_default_str();
    c->add_option("--scalar-bytes", scalar_bytes, "Bytes per table scalar")->check(CLI::IsMember({2u, 4u}))->capture_default_str();
    c->add_option("--report", report, "Output format")->check(CLI::IsMember({"json", "tsv"}))->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    const CodecConfig config(d_p);
    const MemoryReport m = memory_report(vocab_size, config, scalar_bytes);
    if (report == "tsv") {
      out << "V\td_p\tD\tscalar_bytes\ttable_bytes\tbuffer_bytes\tsavings_bytes\n"
          << vocab_size << '\t' << d_p << '\t' << config.dim() << '\t' << scalar_bytes << '\t' << m.table_bytes << '\t'
          << m.buffer_bytes << '\t' << m.savings_bytes << '\n';
      return kExitOk;
    }
    out << json{{"vocab_size", vocab_size},
                {"d_p", d_p},
                {"dim", config.dim()},
                {"scalar_bytes", scalar_bytes},
                {"table_bytes", m.table_bytes},
                {"buffer_bytes", m.buffer_bytes},
                {"savings_bytes", m.savings_bytes},
                {"table", format_bytes(static_cast<double>(m.table_bytes))},
                {"buffer", format_bytes(static_cast<double>(m.buffer_bytes))},
                {"savings", format_bytes(static_cast<double>(m.savings_bytes))}}
               .dump()
        << '\n';
    return kExitOk;
  }
};

struct AnisotropyCmd {
  std::string space;
  std::string vocab;
  VocabFlags vf;
  CodecFlags cf;
  std::size_t pairs = 10000;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("anisotropy", "Mean-vector norm and raw mean pairwise cosine");
    auto* space_opt = c->add_option("--space", space, "KBT1, KBB1 or KEMB1 file");
    c->add_option("--vocab", vocab, "Build a codec table from this vocabulary instead")->excludes(space_opt);
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    c->add_option("--pairs", pairs, "Random row pairs sampled")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    if (space.empty() && vocab.empty()) throw UsageError("anisotropy needs --space or --vocab");
    EmbeddingMatrix e;
    if (!space.empty()) {
      e = load_space(space, cf.config().apply_znorm());
    } else {
      const CodecConfig config = cf.config();
      e = from_codec_table(build_table(load_vocab(vocab, load_options(vf, config.d_p())), config));
    }
    const AnisotropyReport a = anisotropy(e, pairs, seed);
    out << json{{"space", space.empty() ? vocab : space},
                {"source", to_string(e.source)},
                {"vocab_size", e.vocab_size()},
                {"dim", e.dim()},
                {"mean_norm", a.mean_norm},
                {"pairwise_cosine", a.pairwise_cosine},
                {"pairwise_stderr", a.pairwise_stderr},
                {"pairs", a.pairs}}
               .dump()
        << '\n';
    return kExitOk;
  }
};

struct BenchCmd {
  std::string vocab;
  VocabFlags vf;
  CodecFlags cf;
  std::string table_path;
  std::string buffer_path;
  std::size_t batch = 4096;
  std::size_t iters = 20;
  std::size_t warmup = 3;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("bench", "Gather from the table vs. rebuild from the byte buffer");
    auto* vocab_opt = c->add_option("--vocab", vocab, "Build both backends from this vocabulary");
    c->add_option("--table", table_path, "KBT1 file")->excludes(vocab_opt);
    c->add_option("--buffer", buffer_path, "KBB1 file")->excludes(vocab_opt);
    add_vocab_flags(c, vf);
    add_codec_flags(c, cf);
    c->add_option("--batch", batch, "Ids per call")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--iters", iters, "Timed iterations")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--warmup", warmup, "Discarded iterations")->capture_default_str();
    c->add_option("--seed", seed, "Seed for the id stream")->capture_default_str();
  }

  int run(std::ostream& out, std::ostream&) const {
    if (vocab.empty() && (table_path.empty() || buffer_path.empty())) {
      throw UsageError("bench needs --vocab, or both --table and --buffer");
    }
    std::optional<CodecTable> table;
    std::optional<ByteBuffer> buffer;
    if (!vocab.empty()) {
      const CodecConfig config = cf.config();
      const Vocabulary v = load_vocab(vocab, load_options(vf, config.d_p()));
      table = build_table(v, config);
      buffer = build_byte_buffer(v, config);
    } else {
      table = read_table(std::filesystem::path(table_path));
      buffer = read_byte_buffer(std::filesystem::path(buffer_path), table->config.apply_znorm());
    }
    if (table->vocab_size() != buffer->vocab_size || !(table->config == buffer->config)) {
      throw DimensionError("table and buffer disagree on vocabulary size or codec config");
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint32_t> pick(0, table->vocab_size() - 1);
    std::vector<std::uint32_t> ids(batch);
    for (auto& id : ids) id = pick(rng);

    auto time_it = [&](auto&& fn) {
      for (std::size_t i = 0; i < warmup; ++i) fn();
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < iters; ++i) fn();
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      return static_cast<double>(batch * iters) / dt.count();
    };
    const double table_tps = time_it([&] { return lookup(*table, ids); });
    const double dynamic_tps = time_it([&] { return compute_dynamic(*buffer, ids); });

    const MatrixF a = lookup(*table, ids);
    const MatrixF b = compute_dynamic(*buffer, ids);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
      max_diff = std::max(max_diff, static_cast<double>(std::abs(a.data()[i] - b.data()[i])));
    }
    out << json{{"vocab_size", table->vocab_size()},
                {"d_p", table->config.d_p()},
                {"dim", table->config.dim()},
                {"batch", batch},
                {"iters", iters},
                {"table_tokens_per_sec", table_tps},
                {"dynamic_tokens_per_sec", dynamic_tps},
                {"table_bytes", table->rows.data().size() * sizeof(float)},
                {"buffer_bytes", buffer->footprint_bytes()},
                {"max_abs_diff", max_diff}}
               .dump()
        << '\n';
    return kExitOk;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const bool json_errors = std::find(args.begin(), args.end(), "--json-errors") != args.end();
  auto fail = [&](const std::exception& e, int code) {
    if (json_errors) {
      err << json{{"error", error_kind(e)}, {"message", e.what()}, {"exit_code", code}}.dump() << '\n';
    } else {
      err << "error: " << e.what() << '\n';
    }
    return code;
  };

  CLI::App app{"Kronecker byte-position embedding codec"};
  app.name("kronembed");
  app.require_subcommand(1);
  bool json_errors_flag = false;
  app.add_flag("--json-errors", json_errors_flag, "Report errors as JSON on stderr");
  // Lets --json-errors appear after the subcommand name too.
  app.fallthrough();

  BuildTableCmd build_table_cmd;
  BuildBufferCmd build_buffer_cmd;
  InitProjectionCmd init_projection_cmd;
  EmbedCmd embed_cmd;
  NeighborsCmd neighbors_cmd;
  CoverageCmd coverage_cmd;
  JaccardCmd jaccard_cmd;
  AccountingCmd accounting_cmd;
  MemoryCmd memory_cmd;
  AnisotropyCmd anisotropy_cmd;
  BenchCmd bench_cmd;

  std::vector<std::pair<std::string, std::function<int()>>> commands;
  auto attach = [&](auto& cmd, const char* name) {
    cmd.attach(app);
    commands.emplace_back(name, [&cmd, &out, &err] { return cmd.run(out, err); });
  };
  attach(build_table_cmd, "build-table");
  attach(build_buffer_cmd, "build-buffer");
  attach(init_projection_cmd, "init-projection");
  attach(embed_cmd, "embed");
  attach(neighbors_cmd, "neighbors");
  attach(coverage_cmd, "coverage");
  attach(jaccard_cmd, "jaccard");
  attach(accounting_cmd, "accounting");
  attach(memory_cmd, "memory");
  attach(anisotropy_cmd, "anisotropy");
  attach(bench_cmd, "bench");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    // Prints the help of the subcommand that saw --help.
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(e, kExitUsage);
  }

  try {
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) return fn();
    }
    return fail(UsageError("no command given"), kExitUsage);
  } catch (const UsageError& e) {
    return fail(e, kExitUsage);
  } catch (const std::exception& e) {
    return fail(e, kExitRuntime);
  }
}

}  // namespace kronembed::cli

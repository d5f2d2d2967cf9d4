#include "protex/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "protex/error.hpp"
#include "protex/random.hpp"

namespace protex {

namespace {

constexpr std::string_view kEmbMagic = "PTEB";
constexpr std::string_view kIdxMagic = "PTIX";
constexpr std::uint16_t kEmbVersion = 1;
constexpr std::uint16_t kFlagWordLevel = 0x1;

struct Record {
  std::string id;
  int label = 0;
  std::string text;
  std::vector<std::string> tokens;
  std::optional<Split> split;
};

std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  const std::string content = detail::read_file(path);
  std::vector<Record> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Record r;
      r.id = j.at("id").get<std::string>();
      r.label = j.at("label").get<int>();
      r.text = j.at("text").get<std::string>();
      r.tokens = j.at("tokens").get<std::vector<std::string>>();
      if (auto it = j.find("split"); it != j.end()) r.split = parse_split(it->get<std::string>());
      if (r.label < 0)
        throw Error(ErrorCode::ParseError, "negative label for id " + r.id);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct EmbeddingBlob {
  bool word_level = false;
  std::size_t dim = 0;
  std::size_t rows = 0;
  std::vector<float> values;
};

EmbeddingBlob read_embeddings(const std::filesystem::path& path) {
  const std::string content = detail::read_file(path);
  detail::ByteReader r(content, path.string());
  if (content.size() < 4 || r.bytes(4) != kEmbMagic)
    throw Error(ErrorCode::MagicMismatch, path.string() + ": expected magic PTEB");
  const auto version = r.u16();
  if (version != kEmbVersion)
    throw Error(ErrorCode::VersionMismatch,
                path.string() + ": unsupported version " + std::to_string(version));
  const auto flags = r.u16();
  EmbeddingBlob blob;
  blob.word_level = (flags & kFlagWordLevel) != 0;
  blob.dim = r.u32();
  blob.rows = r.u64();
  if (blob.dim == 0) throw Error(ErrorCode::DimMismatch, path.string() + ": dim is 0");
  const std::uint64_t expected = static_cast<std::uint64_t>(blob.rows) * blob.dim * 4;
  if (r.remaining() != expected)
    throw Error(ErrorCode::CountMismatch,
                path.string() + ": header declares " + std::to_string(blob.rows) + " rows of dim " +
                    std::to_string(blob.dim) + " but payload has " +
                    std::to_string(r.remaining()) + " bytes");
  blob.values.resize(blob.rows * blob.dim);
  for (auto& v : blob.values) v = r.f32();
  return blob;
}

struct OffsetEntry {
  std::uint64_t start = 0;
  std::uint32_t count = 0;
};

std::vector<OffsetEntry> read_offsets(const std::filesystem::path& path) {
  const std::string content = detail::read_file(path);
  detail::ByteReader r(content, path.string());
  if (content.size() < 4 || r.bytes(4) != kIdxMagic)
    throw Error(ErrorCode::MagicMismatch, path.string() + ": expected magic PTIX");
  const auto n = r.u64();
  if (r.remaining() != n * 16)
    throw Error(ErrorCode::CountMismatch,
                path.string() + ": header declares " + std::to_string(n) +
                    " examples but payload has " + std::to_string(r.remaining()) + " bytes");
  std::vector<OffsetEntry> out(n);
  for (auto& e : out) {
    e.start = r.u64();
    e.count = r.u32();
    if (r.u32() != 0) throw Error(ErrorCode::ParseError, path.string() + ": reserved field nonzero");
  }
  return out;
}

bool all_finite(std::span<const float> xs) {
  return std::all_of(xs.begin(), xs.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

std::string_view to_string(Mode m) noexcept { return m == Mode::word ? "word" : "sentence"; }

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Mode parse_mode(std::string_view s) {
  if (s == "sentence") return Mode::sentence;
  if (s == "word") return Mode::word;
  throw Error(ErrorCode::ParseError, "unknown mode '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::ParseError, "unknown split '" + std::string(s) + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].split == s) out.push_back(i);
  return out;
}

std::vector<int> Dataset::labels(Split s) const {
  std::vector<int> out;
  for (const auto& e : examples)
    if (e.split == s) out.push_back(e.label);
  return out;
}

const EmbeddedExample* Dataset::find(std::string_view id) const {
  for (const auto& e : examples)
    if (e.id == id) return &e;
  return nullptr;
}

void Dataset::validate() const {
  PROTEX_THROW_IF(dim == 0, ErrorCode::DimMismatch, "dataset dim is 0");
  for (const auto& e : examples) {
    PROTEX_THROW_IF(e.label < 0 || e.label >= classes, ErrorCode::ParseError,
                    "label out of range for id " + e.id);
    PROTEX_THROW_IF(e.tokens.size() > max_tokens, ErrorCode::CountMismatch,
                    "example " + e.id + " exceeds max_tokens");
    if (mode == Mode::sentence) {
      PROTEX_THROW_IF(!e.sentence_vec || e.token_vecs, ErrorCode::ModeMismatch,
                      "sentence-mode example " + e.id + " must carry only a sentence vector");
      PROTEX_THROW_IF(e.sentence_vec->size() != dim, ErrorCode::DimMismatch,
                      "example " + e.id + " has dim " + std::to_string(e.sentence_vec->size()));
      PROTEX_THROW_IF(!all_finite(*e.sentence_vec), ErrorCode::NonFinite,
                      "example " + e.id + " has a non-finite component");
    } else {
      PROTEX_THROW_IF(!e.token_vecs || e.sentence_vec, ErrorCode::ModeMismatch,
                      "word-mode example " + e.id + " must carry only token vectors");
      PROTEX_THROW_IF(e.token_vecs->cols() != dim, ErrorCode::DimMismatch,
                      "example " + e.id + " has dim " + std::to_string(e.token_vecs->cols()));
      PROTEX_THROW_IF(e.token_vecs->rows() != e.tokens.size(), ErrorCode::TokenCountMismatch,
                      "example " + e.id + " has " + std::to_string(e.tokens.size()) +
                          " tokens but " + std::to_string(e.token_vecs->rows()) + " rows");
      PROTEX_THROW_IF(!all_finite(e.token_vecs->flat()), ErrorCode::NonFinite,
                      "example " + e.id + " has a non-finite component");
    }
  }
}

bool bit_equal(const Dataset& a, const Dataset& b) {
  auto same_bits = [](std::span<const float> x, std::span<const float> y) {
    return x.size() == y.size() &&
           (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  };
  if (a.mode != b.mode || a.dim != b.dim || a.classes != b.classes ||
      a.examples.size() != b.examples.size())
    return false;
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    const auto& x = a.examples[i];
    const auto& y = b.examples[i];
    if (x.id != y.id || x.label != y.label || x.text != y.text || x.tokens != y.tokens ||
        x.split != y.split)
      return false;
    if (x.sentence_vec.has_value() != y.sentence_vec.has_value()) return false;
    if (x.sentence_vec && !same_bits(*x.sentence_vec, *y.sentence_vec)) return false;
    if (x.token_vecs.has_value() != y.token_vecs.has_value()) return false;
    if (x.token_vecs &&
        (x.token_vecs->rows() != y.token_vecs->rows() ||
         !same_bits(x.token_vecs->flat(), y.token_vecs->flat())))
      return false;
  }
  return true;
}

void assign_default_split(Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix64(seed));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n = order.size();
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;
  for (std::size_t r = 0; r < n; ++r) {
    auto& e = ds.examples[order[r]];
    e.split = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
}

Dataset load_dataset(const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& embeddings_path,
                     const std::optional<std::filesystem::path>& offsets_path,
                     const LoadOptions& opts) {
  auto records = read_jsonl(jsonl_path);
  const auto blob = read_embeddings(embeddings_path);
  const bool word = offsets_path.has_value();

  if (blob.word_level != word)
    throw Error(ErrorCode::ModeMismatch,
                embeddings_path.string() + ": word-level flag is " +
                    (blob.word_level ? "set" : "clear") + " but offsets file is " +
                    (word ? "present" : "absent"));
  if (opts.expected_dim && *opts.expected_dim != blob.dim)
    throw Error(ErrorCode::DimMismatch,
                embeddings_path.string() + ": dim " + std::to_string(blob.dim) + ", expected " +
                    std::to_string(*opts.expected_dim));

  Dataset ds;
  ds.mode = word ? Mode::word : Mode::sentence;
  ds.dim = blob.dim;
  ds.max_tokens = opts.max_tokens;

  auto row = [&](std::size_t r) {
    return std::span<const float>(blob.values.data() + r * blob.dim, blob.dim);
  };

  std::vector<OffsetEntry> offsets;
  if (word) {
    offsets = read_offsets(*offsets_path);
    if (offsets.size() != records.size())
      throw Error(ErrorCode::CountMismatch,
                  offsets_path->string() + ": " + std::to_string(offsets.size()) +
                      " entries but " + jsonl_path.string() + " has " +
                      std::to_string(records.size()) + " records");
  } else if (blob.rows != records.size()) {
    throw Error(ErrorCode::CountMismatch,
                embeddings_path.string() + ": row_count " + std::to_string(blob.rows) + " but " +
                    jsonl_path.string() + " has " + std::to_string(records.size()) + " records");
  }

  bool any_split = false, all_split = true;
  for (const auto& r : records) {
    any_split |= r.split.has_value();
    all_split &= r.split.has_value();
  }
  if (any_split && !all_split)
    throw Error(ErrorCode::ParseError, jsonl_path.string() + ": split field present on only some records");

  int max_label = -1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    EmbeddedExample ex;
    if (word) {
      const auto& off = offsets[i];
      if (off.count != rec.tokens.size())
        throw Error(ErrorCode::TokenCountMismatch,
                    offsets_path->string() + ": example " + rec.id + " has " +
                        std::to_string(rec.tokens.size()) + " tokens but offsets say " +
                        std::to_string(off.count));
      if (off.start + off.count > blob.rows)
        throw Error(ErrorCode::CountMismatch,
                    offsets_path->string() + ": example " + rec.id + " rows [" +
                        std::to_string(off.start) + ", " + std::to_string(off.start + off.count) +
                        ") exceed row_count " + std::to_string(blob.rows));
      FMat m(off.count, blob.dim);
      for (std::size_t t = 0; t < off.count; ++t) {
        auto src = row(off.start + t);
        std::copy(src.begin(), src.end(), m.row(t).begin());
      }
      ex.token_vecs = std::move(m);
    } else {
      auto src = row(i);
      ex.sentence_vec = std::vector<float>(src.begin(), src.end());
    }
    if (rec.tokens.size() > opts.max_tokens) continue;
    max_label = std::max(max_label, rec.label);
    ex.id = std::move(rec.id);
    ex.label = rec.label;
    ex.text = std::move(rec.text);
    ex.tokens = std::move(rec.tokens);
    ex.split = rec.split.value_or(Split::train);
    ds.examples.push_back(std::move(ex));
  }
  ds.classes = max_label + 1;
  if (!any_split) assign_default_split(ds, opts.split_seed);

  for (const auto& e : ds.examples) {
    const bool finite = e.sentence_vec ? all_finite(*e.sentence_vec) : all_finite(e.token_vecs->flat());
    if (!finite)
      throw Error(ErrorCode::NonFinite, embeddings_path.string() + ": example " + e.id +
                                            " has a non-finite component");
  }
  ds.validate();
  return ds;
}

Dataset load_dataset_dir(const std::filesystem::path& dir, const LoadOptions& opts) {
  const auto offsets = dir / "offsets.idx";
  std::optional<std::filesystem::path> off;
  if (std::filesystem::exists(offsets)) off = offsets;
  return load_dataset(dir / "dataset.jsonl", dir / "embeddings.bin", off, opts);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& jsonl_path,
                   const std::filesystem::path& embeddings_path,
                   const std::optional<std::filesystem::path>& offsets_path) {
  ds.validate();
  const bool word = ds.mode == Mode::word;
  if (word != offsets_path.has_value())
    throw Error(ErrorCode::ModeMismatch, "offsets path must be given iff dataset is word level");

  std::string jsonl;
  for (const auto& e : ds.examples) {
    nlohmann::json j;
    j["id"] = e.id;
    j["label"] = e.label;
    j["text"] = e.text;
    j["tokens"] = e.tokens;
    j["split"] = std::string(to_string(e.split));
    jsonl += j.dump();
    jsonl += '\n';
  }
  detail::write_file(jsonl_path, jsonl);

  std::uint64_t rows = 0;
  for (const auto& e : ds.examples) rows += word ? e.token_vecs->rows() : 1;

  detail::ByteWriter w;
  w.bytes(kEmbMagic);
  w.u16(kEmbVersion);
  w.u16(word ? kFlagWordLevel : 0);
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u64(rows);
  for (const auto& e : ds.examples) {
    if (word) {
      for (float v : e.token_vecs->flat()) w.f32(v);
    } else {
      for (float v : *e.sentence_vec) w.f32(v);
    }
  }
  detail::write_file(embeddings_path, w.str());

  if (word) {
    detail::ByteWriter idx;
    idx.bytes(kIdxMagic);
    idx.u64(ds.examples.size());
    std::uint64_t start = 0;
    for (const auto& e : ds.examples) {
      idx.u64(start);
      idx.u32(static_cast<std::uint32_t>(e.token_vecs->rows()));
      idx.u32(0);
      start += e.token_vecs->rows();
    }
    detail::write_file(*offsets_path, idx.str());
  }
}

void write_dataset_dir(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::optional<std::filesystem::path> off;
  if (ds.mode == Mode::word) off = dir / "offsets.idx";
  else std::filesystem::remove(dir / "offsets.idx");
  write_dataset(ds, dir / "dataset.jsonl", dir / "embeddings.bin", off);
}

}  // namespace protex

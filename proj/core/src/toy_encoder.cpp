#include <cmath>
#include <cctype>

#include "protex/error.hpp"
#include "protex/provider.hpp"
#include "protex/random.hpp"

namespace protex {

Embedding StoredOnlyProvider::embed(std::span<const std::string>) const {
  throw Error(ErrorCode::ProviderCapability,
              "stored_only provider cannot embed novel text");
}

std::vector<float> hashed_unit_vector(std::string_view token, std::size_t dim, std::uint64_t seed) {
  Rng rng(mix64(fnv1a64(token) ^ mix64(seed)));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

ToyEncoder::ToyEncoder(std::size_t dim, std::uint64_t seed, TokenTable table)
    : dim_(dim), seed_(seed), table_(std::move(table)) {
  PROTEX_THROW_IF(dim_ == 0, ErrorCode::DimMismatch, "toy encoder dim is 0");
  for (const auto& [tok, vec] : table_)
    PROTEX_THROW_IF(vec.size() != dim_, ErrorCode::DimMismatch,
                    "table entry '" + tok + "' has dim " + std::to_string(vec.size()));
}

std::vector<float> ToyEncoder::token_vector(std::string_view token) const {
  if (auto it = table_.find(token); it != table_.end()) return it->second;
  return hashed_unit_vector(token, dim_, seed_);
}

std::vector<float> mean_rows(const FMat& rows) {
  std::vector<double> acc(rows.cols(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += row[c];
  }
  std::vector<float> out(acc.size());
  const double n = static_cast<double>(rows.rows());
  for (std::size_t c = 0; c < acc.size(); ++c) out[c] = static_cast<float>(acc[c] / n);
  return out;
}

Embedding ToyEncoder::embed(std::span<const std::string> tokens) const {
  PROTEX_THROW_IF(tokens.empty(), ErrorCode::EmptyInput, "toy encoder received zero tokens");
  Embedding e;
  e.tokens = FMat(tokens.size(), dim_);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto v = token_vector(tokens[i]);
    std::copy(v.begin(), v.end(), e.tokens.row(i).begin());
  }
  e.sentence = mean_rows(e.tokens);
  return e;
}

Embedding toy_encode(std::span<const std::string> tokens, const TokenTable& table, std::size_t dim,
                     std::uint64_t seed) {
  return ToyEncoder(dim, seed, table).embed(tokens);
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

EmbeddedExample embed_example(std::string id, int label, std::vector<std::string> tokens, Mode mode,
                              const EmbeddingProvider& provider) {
  PROTEX_THROW_IF(!provider.supports_novel_text(), ErrorCode::ProviderCapability,
                  "provider cannot embed novel text");
  auto emb = provider.embed(tokens);
  PROTEX_THROW_IF(emb.sentence.size() != provider.dim() && mode == Mode::sentence,
                  ErrorCode::DimMismatch, "provider returned wrong sentence dim");
  EmbeddedExample ex;
  ex.id = std::move(id);
  ex.label = label;
  ex.text = join_tokens(tokens);
  ex.tokens = std::move(tokens);
  if (mode == Mode::sentence) ex.sentence_vec = std::move(emb.sentence);
  else ex.token_vecs = std::move(emb.tokens);
  return ex;
}

EmbeddedExample perturb(const EmbeddedExample& example, std::span<const std::uint8_t> rationale_mask,
                        Keep keep, const EmbeddingProvider& provider) {
  PROTEX_THROW_IF(rationale_mask.size() != example.tokens.size(), ErrorCode::MaskLengthMismatch,
                  "mask has " + std::to_string(rationale_mask.size()) + " entries for " +
                      std::to_string(example.tokens.size()) + " tokens");
  PROTEX_THROW_IF(!provider.supports_novel_text(), ErrorCode::ProviderCapability,
                  "perturbation needs a novel_text provider");
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < example.tokens.size(); ++i) {
    const bool in_rationale = rationale_mask[i] != 0;
    if (in_rationale == (keep == Keep::rationale_only)) kept.push_back(example.tokens[i]);
  }
  PROTEX_THROW_IF(kept.empty(), ErrorCode::AllTokensRemoved,
                  "perturbation of " + example.id + " retains no tokens");
  const Mode mode = example.token_vecs ? Mode::word : Mode::sentence;
  auto out = embed_example(example.id, example.label, std::move(kept), mode, provider);
  out.split = example.split;
  return out;
}

}  // namespace protex

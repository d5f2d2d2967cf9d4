#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "protex/embedding_store.hpp"
#include "protex/matrix.hpp"

namespace protex {

struct Embedding {
  std::vector<float> sentence;
  FMat tokens;  // one row per input token
};

/// Source of embeddings for novel token sequences. A stored_only provider can
/// serve nothing beyond what the dataset already holds.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t dim() const = 0;
  virtual bool supports_novel_text() const = 0;
  virtual bool deterministic() const = 0;
  /// When false, callers must serialize embed() calls.
  virtual bool thread_safe() const { return true; }

  virtual Embedding embed(std::span<const std::string> tokens) const = 0;
};

class StoredOnlyProvider final : public EmbeddingProvider {
 public:
  explicit StoredOnlyProvider(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const override { return dim_; }
  bool supports_novel_text() const override { return false; }
  bool deterministic() const override { return true; }
  Embedding embed(std::span<const std::string> tokens) const override;

 private:
  std::size_t dim_;
};

using TokenTable = std::map<std::string, std::vector<float>, std::less<>>;

/// Bag-of-token-vectors stand-in for a frozen encoder. Known tokens map
/// through the table; unknown tokens get a unit vector seeded by a hash of
/// the token and the encoder seed. Sentence vector = mean of token vectors,
/// summed in token order in double precision.
class ToyEncoder final : public EmbeddingProvider {
 public:
  ToyEncoder(std::size_t dim, std::uint64_t seed, TokenTable table = {});

  std::size_t dim() const override { return dim_; }
  bool supports_novel_text() const override { return true; }
  bool deterministic() const override { return true; }
  Embedding embed(std::span<const std::string> tokens) const override;

  std::vector<float> token_vector(std::string_view token) const;

  std::uint64_t seed() const noexcept { return seed_; }
  const TokenTable& table() const noexcept { return table_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  TokenTable table_;
};

/// Deterministic unit vector for an out-of-table token.
std::vector<float> hashed_unit_vector(std::string_view token, std::size_t dim, std::uint64_t seed);

Embedding toy_encode(std::span<const std::string> tokens, const TokenTable& table,
                     std::size_t dim, std::uint64_t seed = 0);

/// Mean of rows, accumulated in double in row order, rounded once to float.
std::vector<float> mean_rows(const FMat& rows);

enum class Keep { rationale_only, rationale_removed };

/// Re-embeds the retained token subsequence. `mask[i]` marks token i as part
/// of the rationale. The result keeps the source example's mode.
EmbeddedExample perturb(const EmbeddedExample& example, std::span<const std::uint8_t> rationale_mask,
                        Keep keep, const EmbeddingProvider& provider);

/// Builds an example from tokens via a provider, in the given mode.
EmbeddedExample embed_example(std::string id, int label, std::vector<std::string> tokens, Mode mode,
                              const EmbeddingProvider& provider);

std::string join_tokens(std::span<const std::string> tokens);
std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace protex

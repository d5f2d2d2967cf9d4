#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "protex/matrix.hpp"

namespace protex {

enum class SimKind : std::uint8_t { cosine = 0, neg_l2 = 1 };

std::string_view to_string(SimKind k) noexcept;
SimKind parse_sim_kind(std::string_view s);

/// cosine: a·b / (|a||b|), throws ZeroVector for a zero argument.
/// neg_l2: -|a - b|.
double similarity(std::span<const double> a, std::span<const double> b, SimKind kind);

/// grad_b += scale * d sim(a, b) / d b. By symmetry the gradient with respect
/// to `a` is obtained by swapping the arguments. At a == b, neg_l2 is not
/// differentiable and contributes the zero subgradient.
void accumulate_similarity_grad(std::span<const double> a, std::span<const double> b, SimKind kind,
                                double scale, std::span<double> grad_b);

/// A k-token subsequence of one input, pooled to the mean of its rows.
struct Patch {
  std::vector<std::size_t> token_indices;  // strictly increasing
  std::vector<double> vec;
};

enum class SelectorKind : std::uint8_t { brute_force = 0, sliding = 1, attention = 2 };

std::string_view to_string(SelectorKind k) noexcept;
SelectorKind parse_selector_kind(std::string_view s);

struct SelectorConfig {
  SelectorKind kind = SelectorKind::sliding;
  std::size_t k = 4;
  std::size_t dilation = 0;
  std::size_t k_lim = 10;
  std::uint64_t enum_cap = 1'000'000;

  void validate() const;
  bool operator==(const SelectorConfig&) const = default;
};

/// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k) noexcept;

/// Mean of the selected rows, summed in index order.
std::vector<double> pool_rows(const FMat& token_vecs, std::span<const std::size_t> indices);

/// All C(l, k) index sets in lexicographic order.
std::vector<Patch> enumerate_patches(const FMat& token_vecs, std::size_t k,
                                     std::uint64_t cap = 1'000'000);

/// Stride-1 windows of k tokens spaced dilation+1 apart.
std::vector<Patch> sliding_patches(const FMat& token_vecs, std::size_t k, std::size_t dilation);

/// Parameter-free single-head attention received per token:
/// mean over query rows of softmax(E E^T / sqrt(d)).
std::vector<double> attention_scores(const FMat& token_vecs);

struct AttentionSelection {
  std::vector<std::size_t> selected;  // ascending token order
  std::vector<double> scores;
  std::vector<Patch> patches;
};

/// n_w = min(k_lim, 2k, l) top-scoring tokens (ties to the lower index), then
/// every k-combination of them in original token order.
AttentionSelection attention_select(const FMat& token_vecs, const SelectorConfig& cfg);

std::vector<Patch> select_patches(const FMat& token_vecs, const SelectorConfig& cfg);

}  // namespace protex

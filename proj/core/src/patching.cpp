#include "protex/patching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "protex/error.hpp"

namespace protex {

std::string_view to_string(SimKind k) noexcept { return k == SimKind::cosine ? "cosine" : "l2"; }

SimKind parse_sim_kind(std::string_view s) {
  if (s == "cosine" || s == "cos") return SimKind::cosine;
  if (s == "l2" || s == "neg_l2") return SimKind::neg_l2;
  throw Error(ErrorCode::ParseError, "unknown similarity '" + std::string(s) + "'");
}

std::string_view to_string(SelectorKind k) noexcept {
  switch (k) {
    case SelectorKind::brute_force: return "brute";
    case SelectorKind::sliding: return "sliding";
    case SelectorKind::attention: return "attention";
  }
  return "sliding";
}

SelectorKind parse_selector_kind(std::string_view s) {
  if (s == "brute" || s == "brute_force") return SelectorKind::brute_force;
  if (s == "sliding") return SelectorKind::sliding;
  if (s == "attention") return SelectorKind::attention;
  throw Error(ErrorCode::ParseError, "unknown selector '" + std::string(s) + "'");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_dims(std::span<const double> a, std::span<const double> b) {
  PROTEX_THROW_IF(a.size() != b.size(), ErrorCode::DimMismatch,
                  "similarity of dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
}

}  // namespace

double similarity(std::span<const double> a, std::span<const double> b, SimKind kind) {
  check_dims(a, b);
  if (kind == SimKind::cosine) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    PROTEX_THROW_IF(na == 0.0 || nb == 0.0, ErrorCode::ZeroVector, "cosine of a zero vector");
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return -std::sqrt(d2);
}

void accumulate_similarity_grad(std::span<const double> a, std::span<const double> b, SimKind kind,
                                double scale, std::span<double> grad_b) {
  check_dims(a, b);
  if (scale == 0.0) return;
  if (kind == SimKind::cosine) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    PROTEX_THROW_IF(na == 0.0 || nb == 0.0, ErrorCode::ZeroVector, "cosine of a zero vector");
    const double ab = dot(a, b);
    const double c1 = scale / (na * nb);
    const double c2 = scale * ab / (na * nb * nb * nb);
    for (std::size_t i = 0; i < b.size(); ++i) grad_b[i] += c1 * a[i] - c2 * b[i];
    return;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  if (d2 == 0.0) return;
  const double inv = scale / std::sqrt(d2);
  for (std::size_t i = 0; i < b.size(); ++i) grad_b[i] += (a[i] - b[i]) * inv;
}

void SelectorConfig::validate() const {
  PROTEX_THROW_IF(k < 1, ErrorCode::ConfigInvalid, "selector.k must be >= 1");
  PROTEX_THROW_IF(kind == SelectorKind::attention && k_lim < k, ErrorCode::ConfigInvalid,
                  "selector.k_lim must be >= k");
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) noexcept {
  if (k > n) return 0;
  k = std::min(k, n - k);
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // r * (n-k+i) / i is exact; divide out gcd(r, i) first to stay in range
    const std::uint64_t g = std::gcd(r, i);
    const std::uint64_t a = r / g, b = (n - k + i) / (i / g);
    if (b != 0 && a > kMax / b) return kMax;
    r = a * b;
  }
  return r;
}

std::vector<double> pool_rows(const FMat& token_vecs, std::span<const std::size_t> indices) {
  std::vector<double> acc(token_vecs.cols(), 0.0);
  for (std::size_t idx : indices) {
    auto row = token_vecs.row(idx);
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += row[c];
  }
  const double n = static_cast<double>(indices.size());
  for (auto& v : acc) v /= n;
  return acc;
}

namespace {

Patch make_patch(const FMat& token_vecs, std::vector<std::size_t> idx) {
  Patch p;
  p.vec = pool_rows(token_vecs, idx);
  p.token_indices = std::move(idx);
  return p;
}

// Lexicographic k-combinations of `pool` (already ascending).
std::vector<Patch> combinations(const FMat& token_vecs, std::span<const std::size_t> pool, std::size_t k) {
  std::vector<Patch> out;
  const std::size_t n = pool.size();
  if (k > n) return out;
  out.reserve(static_cast<std::size_t>(binomial(n, k)));
  std::vector<std::size_t> pos(k);
  std::iota(pos.begin(), pos.end(), 0);
  while (true) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = pool[pos[i]];
    out.push_back(make_patch(token_vecs, std::move(idx)));
    std::size_t i = k;
    while (i > 0 && pos[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) break;
    ++pos[i - 1];
    for (std::size_t j = i; j < k; ++j) pos[j] = pos[j - 1] + 1;
  }
  return out;
}

}  // namespace

std::vector<Patch> enumerate_patches(const FMat& token_vecs, std::size_t k, std::uint64_t cap) {
  const std::size_t l = token_vecs.rows();
  PROTEX_THROW_IF(k < 1, ErrorCode::ConfigInvalid, "patch length must be >= 1");
  PROTEX_THROW_IF(l < k, ErrorCode::TooShort,
                  "sequence of " + std::to_string(l) + " tokens is shorter than k=" + std::to_string(k));
  const auto count = binomial(l, k);
  PROTEX_THROW_IF(count > cap, ErrorCode::Overflow,
                  "C(" + std::to_string(l) + "," + std::to_string(k) + ") exceeds cap " + std::to_string(cap));
  std::vector<std::size_t> pool(l);
  std::iota(pool.begin(), pool.end(), 0);
  return combinations(token_vecs, pool, k);
}

std::vector<Patch> sliding_patches(const FMat& token_vecs, std::size_t k, std::size_t dilation) {
  const std::size_t l = token_vecs.rows();
  PROTEX_THROW_IF(k < 1, ErrorCode::ConfigInvalid, "patch length must be >= 1");
  const std::size_t span = (k - 1) * (dilation + 1);
  PROTEX_THROW_IF(l < span + 1, ErrorCode::TooShort,
                  "sequence of " + std::to_string(l) + " tokens cannot hold a window of k=" +
                      std::to_string(k) + ", dilation=" + std::to_string(dilation));
  std::vector<Patch> out;
  out.reserve(l - span);
  for (std::size_t s = 0; s + span < l; ++s) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = s + i * (dilation + 1);
    out.push_back(make_patch(token_vecs, std::move(idx)));
  }
  return out;
}

std::vector<double> attention_scores(const FMat& token_vecs) {
  const std::size_t l = token_vecs.rows();
  const std::size_t d = token_vecs.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> scores(l, 0.0);
  std::vector<double> logits(l);
  for (std::size_t q = 0; q < l; ++q) {
    auto qr = token_vecs.row(q);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < l; ++k) {
      auto kr = token_vecs.row(k);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(qr[c]) * kr[c];
      logits[k] = s * inv_sqrt_d;
      mx = std::max(mx, logits[k]);
    }
    double z = 0.0;
    for (auto& v : logits) {
      v = std::exp(v - mx);
      z += v;
    }
    for (std::size_t k = 0; k < l; ++k) scores[k] += logits[k] / z;
  }
  for (auto& s : scores) s /= static_cast<double>(l);
  return scores;
}

AttentionSelection attention_select(const FMat& token_vecs, const SelectorConfig& cfg) {
  cfg.validate();
  const std::size_t l = token_vecs.rows();
  PROTEX_THROW_IF(l < cfg.k, ErrorCode::TooShort,
                  "sequence of " + std::to_string(l) + " tokens is shorter than k=" + std::to_string(cfg.k));
  AttentionSelection sel;
  sel.scores = attention_scores(token_vecs);
  const std::size_t n_w = std::min({cfg.k_lim, 2 * cfg.k, l});
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sel.scores[a] > sel.scores[b]; });
  sel.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_w));
  std::sort(sel.selected.begin(), sel.selected.end());
  sel.patches = combinations(token_vecs, sel.selected, cfg.k);
  return sel;
}

std::vector<Patch> select_patches(const FMat& token_vecs, const SelectorConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case SelectorKind::brute_force: return enumerate_patches(token_vecs, cfg.k, cfg.enum_cap);
    case SelectorKind::sliding: return sliding_patches(token_vecs, cfg.k, cfg.dilation);
    case SelectorKind::attention: return attention_select(token_vecs, cfg).patches;
  }
  return {};
}

}  // namespace protex

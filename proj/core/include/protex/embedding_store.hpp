#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "protex/matrix.hpp"

namespace protex {

enum class Mode : std::uint8_t { sentence = 0, word = 1 };
enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string_view to_string(Mode m) noexcept;
std::string_view to_string(Split s) noexcept;
Mode parse_mode(std::string_view s);
Split parse_split(std::string_view s);

/// One instance. Exactly one of sentence_vec / token_vecs is set, matching
/// the owning dataset's mode.
struct EmbeddedExample {
  std::string id;
  int label = 0;
  std::string text;
  std::vector<std::string> tokens;
  std::optional<std::vector<float>> sentence_vec;
  std::optional<FMat> token_vecs;
  Split split = Split::train;

  bool operator==(const EmbeddedExample&) const = default;
};

struct Dataset {
  Mode mode = Mode::sentence;
  std::size_t dim = 0;
  int classes = 0;
  std::vector<EmbeddedExample> examples;
  std::size_t max_tokens = 40;

  std::vector<std::size_t> indices(Split s) const;
  std::vector<int> labels(Split s) const;
  const EmbeddedExample* find(std::string_view id) const;

  /// Throws on any violated invariant (label range, dims, finiteness,
  /// token/row agreement, mode exclusivity).
  void validate() const;
};

/// Byte-level equality, including float bit patterns (distinguishes -0.0
/// from 0.0, unlike operator==).
bool bit_equal(const Dataset& a, const Dataset& b);

struct LoadOptions {
  std::size_t max_tokens = 40;
  std::optional<std::size_t> expected_dim;
  /// Used only when the jsonl carries no split field: deterministic
  /// 70/15/15 partition.
  std::uint64_t split_seed = 0;
};

/// Reads dataset.jsonl + embeddings.bin (+ offsets.idx for word level).
Dataset load_dataset(const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& embeddings_path,
                     const std::optional<std::filesystem::path>& offsets_path,
                     const LoadOptions& opts = {});

/// Directory convenience: dataset.jsonl, embeddings.bin, optional offsets.idx.
Dataset load_dataset_dir(const std::filesystem::path& dir, const LoadOptions& opts = {});

void write_dataset(const Dataset& ds, const std::filesystem::path& jsonl_path,
                   const std::filesystem::path& embeddings_path,
                   const std::optional<std::filesystem::path>& offsets_path);

void write_dataset_dir(const Dataset& ds, const std::filesystem::path& dir);

/// Deterministic 70/15/15 assignment by seeded shuffle.
void assign_default_split(Dataset& ds, std::uint64_t seed);

}  // namespace protex

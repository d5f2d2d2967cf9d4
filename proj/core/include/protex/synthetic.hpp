#pragma once

#include <cstdint>
#include <vector>

#include "protex/embedding_store.hpp"
#include "protex/faithfulness.hpp"
#include "protex/provider.hpp"

namespace protex {

/// Isotropic Gaussian blobs in sentence mode. Splits are written in order
/// (train, val, test) with labels cycling through the classes.
struct ClusterSpec {
  std::size_t dim = 8;
  int classes = 2;
  std::size_t n_train = 400, n_val = 100, n_test = 100;
  double radius = 3.0;  // centroid c = radius * e_c unless `centroids` is given
  double noise = 0.3;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> centroids;
};

Dataset make_gaussian_clusters(const ClusterSpec& spec);
std::vector<std::vector<double>> cluster_centroids(const ClusterSpec& spec);

/// Token task whose label is carried by a single planted token: class c
/// plants "key<c>", mapped by the toy table to planted_scale * e_c; filler
/// tokens "w<i>" fall back to hashed unit vectors.
struct PlantedSpec {
  std::size_t dim = 8;
  int classes = 2;
  std::size_t n_train = 200, n_val = 50, n_test = 50;
  std::size_t filler_len = 9;
  std::size_t vocab = 40;
  double planted_scale = 6.0;
  Mode mode = Mode::sentence;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 0;
};

struct PlantedTask {
  Dataset data;
  TokenTable table;
  RationaleSet rationales;  // the planted token of every example
  std::uint64_t encoder_seed = 0;

  ToyEncoder encoder() const { return ToyEncoder(data.dim, encoder_seed, table); }
};

PlantedTask make_planted_task(const PlantedSpec& spec);

}  // namespace protex

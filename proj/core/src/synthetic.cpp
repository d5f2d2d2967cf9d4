#include "protex/synthetic.hpp"

#include <string>

#include "protex/error.hpp"
#include "protex/random.hpp"

namespace protex {

namespace {

constexpr Split kSplits[] = {Split::train, Split::val, Split::test};

}  // namespace

std::vector<std::vector<double>> cluster_centroids(const ClusterSpec& spec) {
  if (!spec.centroids.empty()) {
    PROTEX_THROW_IF(spec.centroids.size() != static_cast<std::size_t>(spec.classes), ErrorCode::ConfigInvalid,
                    "need one centroid per class");
    for (const auto& c : spec.centroids)
      PROTEX_THROW_IF(c.size() != spec.dim, ErrorCode::DimMismatch, "centroid dim differs from spec dim");
    return spec.centroids;
  }
  PROTEX_THROW_IF(spec.dim < static_cast<std::size_t>(spec.classes), ErrorCode::ConfigInvalid,
                  "axis centroids need dim >= classes");
  std::vector<std::vector<double>> out(static_cast<std::size_t>(spec.classes), std::vector<double>(spec.dim, 0.0));
  for (std::size_t c = 0; c < out.size(); ++c) out[c][c] = spec.radius;
  return out;
}

Dataset make_gaussian_clusters(const ClusterSpec& spec) {
  PROTEX_THROW_IF(spec.classes < 2, ErrorCode::ConfigInvalid, "need at least two classes");
  const auto centroids = cluster_centroids(spec);
  Dataset ds;
  ds.mode = Mode::sentence;
  ds.dim = spec.dim;
  ds.classes = spec.classes;
  Rng rng(mix64(spec.seed ^ 0x636c7573746572ULL));
  const std::size_t sizes[] = {spec.n_train, spec.n_val, spec.n_test};
  std::size_t id = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < sizes[s]; ++i, ++id) {
      EmbeddedExample ex;
      ex.id = "e" + std::to_string(id);
      ex.label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
      ex.text = "cluster " + std::to_string(ex.label) + " point " + std::to_string(id);
      ex.tokens = split_whitespace(ex.text);
      std::vector<float> v(spec.dim);
      for (std::size_t k = 0; k < spec.dim; ++k)
        v[k] = static_cast<float>(centroids[static_cast<std::size_t>(ex.label)][k] + spec.noise * rng.normal());
      ex.sentence_vec = std::move(v);
      ex.split = kSplits[s];
      ds.examples.push_back(std::move(ex));
    }
  ds.validate();
  return ds;
}

PlantedTask make_planted_task(const PlantedSpec& spec) {
  PROTEX_THROW_IF(spec.classes < 2, ErrorCode::ConfigInvalid, "need at least two classes");
  PROTEX_THROW_IF(spec.dim < static_cast<std::size_t>(spec.classes), ErrorCode::ConfigInvalid,
                  "planted directions need dim >= classes");
  PROTEX_THROW_IF(spec.vocab == 0, ErrorCode::ConfigInvalid, "vocab must be positive");
  PlantedTask task;
  task.encoder_seed = spec.encoder_seed;
  for (int c = 0; c < spec.classes; ++c) {
    std::vector<float> v(spec.dim, 0.0f);
    v[static_cast<std::size_t>(c)] = static_cast<float>(spec.planted_scale);
    task.table.emplace("key" + std::to_string(c), std::move(v));
  }
  const ToyEncoder enc(spec.dim, spec.encoder_seed, task.table);

  Dataset& ds = task.data;
  ds.mode = spec.mode;
  ds.dim = spec.dim;
  ds.classes = spec.classes;
  Rng rng(mix64(spec.seed ^ 0x706c616e746564ULL));
  const std::size_t sizes[] = {spec.n_train, spec.n_val, spec.n_test};
  std::size_t id = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < sizes[s]; ++i, ++id) {
      const int label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
      std::vector<std::string> tokens;
      for (std::size_t t = 0; t < spec.filler_len; ++t)
        tokens.push_back("w" + std::to_string(rng.uniform_index(spec.vocab)));
      const std::size_t pos = rng.uniform_index(spec.filler_len + 1);
      tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos), "key" + std::to_string(label));
      std::vector<std::uint8_t> mask(tokens.size(), 0);
      mask[pos] = 1;
      auto ex = embed_example("e" + std::to_string(id), label, std::move(tokens), spec.mode, enc);
      ex.split = kSplits[s];
      task.rationales.masks.emplace(ex.id, std::move(mask));
      ds.examples.push_back(std::move(ex));
    }
  ds.validate();
  return task;
}

}  // namespace protex

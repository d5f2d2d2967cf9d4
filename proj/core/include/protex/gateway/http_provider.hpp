#pragma once

#include <memory>
#include <string>

#include "protex/config.hpp"
#include "protex/provider.hpp"

namespace protex::gateway {

/// Client for an external embedding sidecar:
///   POST <url>/embed {"tokens": [str, ...]}
///   -> {"sentence": [d floats], "tokens": [[d floats], ...]}
/// Responses of the wrong dimension or row count are rejected.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string url, std::size_t dim);

  std::size_t dim() const override { return dim_; }
  bool supports_novel_text() const override { return true; }
  bool deterministic() const override { return true; }
  Embedding embed(std::span<const std::string> tokens) const override;

 private:
  std::string url_;
  std::size_t dim_;
};

/// make_provider plus the http kind.
std::unique_ptr<EmbeddingProvider> make_gateway_provider(const ProviderSpec& spec);

}  // namespace protex::gateway

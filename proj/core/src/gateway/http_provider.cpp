#include "protex/gateway/http_provider.hpp"

#include <cmath>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "protex/error.hpp"

namespace protex::gateway {

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string url, std::size_t dim) : url_(std::move(url)), dim_(dim) {
  while (!url_.empty() && url_.back() == '/') url_.pop_back();
  PROTEX_THROW_IF(url_.empty(), ErrorCode::ConfigInvalid, "provider url is empty");
}

Embedding HttpEmbeddingProvider::embed(std::span<const std::string> tokens) const {
  PROTEX_THROW_IF(tokens.empty(), ErrorCode::EmptyInput, "cannot embed an empty token list");
  httplib::Client cli(url_);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(60);
  const nlohmann::json body{{"tokens", std::vector<std::string>(tokens.begin(), tokens.end())}};
  const auto res = cli.Post("/embed", body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::IoError, url_ + "/embed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::IoError, url_ + "/embed: HTTP " + std::to_string(res->status) + ": " + res->body);

  Embedding out;
  try {
    const auto j = nlohmann::json::parse(res->body);
    out.sentence = j.at("sentence").get<std::vector<float>>();
    const auto rows = j.at("tokens").get<std::vector<std::vector<float>>>();
    PROTEX_THROW_IF(rows.size() != tokens.size(), ErrorCode::TokenCountMismatch,
                    url_ + "/embed returned " + std::to_string(rows.size()) + " token rows for " +
                        std::to_string(tokens.size()) + " tokens");
    out.tokens = FMat(rows.size(), dim_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      PROTEX_THROW_IF(rows[r].size() != dim_, ErrorCode::DimMismatch,
                      url_ + "/embed returned token dim " + std::to_string(rows[r].size()) + ", expected " +
                          std::to_string(dim_));
      std::copy(rows[r].begin(), rows[r].end(), out.tokens.row(r).begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, url_ + "/embed: " + e.what());
  }
  PROTEX_THROW_IF(out.sentence.size() != dim_, ErrorCode::DimMismatch,
                  url_ + "/embed returned dim " + std::to_string(out.sentence.size()) + ", expected " +
                      std::to_string(dim_));
  for (float v : out.sentence) PROTEX_THROW_IF(!std::isfinite(v), ErrorCode::NonFinite, url_ + "/embed: non-finite");
  for (float v : out.tokens.flat()) PROTEX_THROW_IF(!std::isfinite(v), ErrorCode::NonFinite, url_ + "/embed: non-finite");
  return out;
}

std::unique_ptr<EmbeddingProvider> make_gateway_provider(const ProviderSpec& spec) {
  if (spec.kind == ProviderKind::http) return std::make_unique<HttpEmbeddingProvider>(spec.url, spec.dim);
  return make_provider(spec);
}

}  // namespace protex::gateway

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "protex/provider.hpp"
#include "protex/trainer.hpp"

namespace protex {

/// Flat `key = value` text; `#` starts a comment. Keys not present keep the
/// value from `base`. Errors are ConfigInvalid naming source, line and key.
TrainConfig parse_config(std::string_view text, const std::string& source, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Renders every key; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& cfg);

/// Recognized config keys, in documentation order.
const std::vector<std::string>& config_keys();

enum class ProviderKind { stored_only, toy, http };

/// provider.json next to a dataset: how novel text gets embedded.
struct ProviderSpec {
  ProviderKind kind = ProviderKind::stored_only;
  std::size_t dim = 0;
  std::uint64_t seed = 0;  // toy
  TokenTable table;        // toy
  std::string url;         // http, e.g. http://127.0.0.1:8900

  nlohmann::json to_json() const;
  static ProviderSpec from_json(const nlohmann::json& j, const std::string& source);
};

/// Reads <dir>/provider.json; absent file means stored_only with `dim`.
ProviderSpec load_provider_spec(const std::filesystem::path& dir, std::size_t dim);
void save_provider_spec(const ProviderSpec& spec, const std::filesystem::path& dir);

/// stored_only and toy providers. http needs the gateway library
/// (make_gateway_provider) and raises ProviderCapability here.
std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSpec& spec);

}  // namespace protex

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "protex/protonet.hpp"

namespace protex {

// Layout is documented in docs/formats.md ("Checkpoint"). All parameters are
// stored as f32; Model::quantize() keeps in-memory values float-exact so the
// round trip is bit-exact.

std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace protex

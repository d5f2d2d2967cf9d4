#include "protex/checkpoint.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "protex/error.hpp"

namespace protex {

namespace {

constexpr std::string_view kMagic = "PTCK";
constexpr std::uint16_t kVersion = 1;

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  model.check_consistent();
  const std::size_t m = model.num_prototypes();
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u8(static_cast<std::uint8_t>(model.mode));
  w.u8(static_cast<std::uint8_t>(model.sim));
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(m));
  w.u32(static_cast<std::uint32_t>(model.classes));
  w.u8(static_cast<std::uint8_t>(model.selector.kind));
  w.u8(0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(model.selector.k));
  w.u32(static_cast<std::uint32_t>(model.selector.dilation));
  w.u32(static_cast<std::uint32_t>(model.selector.k_lim));
  w.u64(model.selector.enum_cap);
  w.u64(model.seed);
  w.u32(model.epoch);
  for (std::size_t j = 0; j < m; ++j) w.u32(static_cast<std::uint32_t>(model.protos.class_of[j]));
  for (std::size_t j = 0; j < m; ++j) w.u8(model.protos.frozen[j] ? 1 : 0);
  for (double v : model.protos.vecs.flat()) w.f32(static_cast<float>(v));
  for (double v : model.head.flat()) w.f32(static_cast<float>(v));

  nlohmann::json display = nlohmann::json::array();
  for (const auto& d : model.protos.display) {
    if (d) display.push_back({{"source_id", d->source_id}, {"text", d->text}});
    else display.push_back(nullptr);
  }
  const std::string js = display.dump();
  w.u64(js.size());
  w.bytes(js);
  return w.take();
}

Model parse_checkpoint(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < 4 || r.bytes(4) != kMagic)
    throw Error(ErrorCode::MagicMismatch, source + ": expected magic PTCK");
  const auto version = r.u16();
  if (version != kVersion)
    throw Error(ErrorCode::VersionMismatch, source + ": unsupported checkpoint version " + std::to_string(version));
  Model model;
  const auto mode = r.u8();
  const auto sim = r.u8();
  if (mode > 1 || sim > 1) throw Error(ErrorCode::ParseError, source + ": bad mode/sim code");
  model.mode = static_cast<Mode>(mode);
  model.sim = static_cast<SimKind>(sim);
  model.dim = r.u32();
  const std::size_t m = r.u32();
  model.classes = static_cast<int>(r.u32());
  const auto sel = r.u8();
  if (sel > 2) throw Error(ErrorCode::ParseError, source + ": bad selector code");
  model.selector.kind = static_cast<SelectorKind>(sel);
  r.u8();
  r.u16();
  model.selector.k = r.u32();
  model.selector.dilation = r.u32();
  model.selector.k_lim = r.u32();
  model.selector.enum_cap = r.u64();
  model.seed = r.u64();
  model.epoch = r.u32();

  model.protos.class_of.resize(m);
  for (auto& c : model.protos.class_of) c = static_cast<int>(r.u32());
  model.protos.frozen.resize(m);
  for (auto& f : model.protos.frozen) f = r.u8();
  model.protos.vecs = Mat(m, model.dim);
  for (auto& v : model.protos.vecs.flat()) v = r.f32();
  model.head = Mat(static_cast<std::size_t>(model.classes), m);
  for (auto& v : model.head.flat()) v = r.f32();

  const auto js_len = r.u64();
  const auto js = r.bytes(js_len);
  if (r.remaining() != 0)
    throw Error(ErrorCode::CountMismatch, source + ": " + std::to_string(r.remaining()) + " trailing bytes");
  try {
    const auto display = nlohmann::json::parse(js);
    if (!display.is_array() || display.size() != m)
      throw Error(ErrorCode::CountMismatch, source + ": display table has wrong length");
    for (const auto& d : display) {
      if (d.is_null()) model.protos.display.emplace_back();
      else model.protos.display.push_back(PrototypeDisplay{d.at("source_id").get<std::string>(), d.at("text").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, source + ": display table: " + e.what());
  }
  for (double v : model.protos.vecs.flat())
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, source + ": non-finite prototype");
  model.check_consistent();
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file(path), path.string());
}

}  // namespace protex

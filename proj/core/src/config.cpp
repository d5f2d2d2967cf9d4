#include "protex/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>

#include "binary_io.hpp"
#include "protex/error.hpp"

namespace protex {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw std::invalid_argument("expected a number");
  return out;
}

std::size_t parse_size(std::string_view v) { return parse_number<std::size_t>(v); }
double parse_real(std::string_view v) { return parse_number<double>(v); }

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false");
}

// shortest text that parses back to the same double
std::string real_str(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

using Setter = std::function<void(TrainConfig&, std::string_view)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Key {
  std::string name;
  Setter set;
  Getter get;
};

#define PROTEX_SIZE_KEY(name, field)                                                      \
  Key {                                                                                   \
    name, [](TrainConfig& c, std::string_view v) { c.field = parse_size(v); },            \
        [](const TrainConfig& c) { return std::to_string(c.field); }                      \
  }
#define PROTEX_REAL_KEY(name, field)                                                      \
  Key {                                                                                   \
    name, [](TrainConfig& c, std::string_view v) { c.field = parse_real(v); },            \
        [](const TrainConfig& c) { return real_str(c.field); }                            \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k{
      PROTEX_SIZE_KEY("epochs", epochs),
      PROTEX_REAL_KEY("lr", lr_base),
      PROTEX_SIZE_KEY("batch_size", batch_size),
      Key{"seed", [](TrainConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>(v); },
          [](const TrainConfig& c) { return std::to_string(c.seed); }},
      PROTEX_SIZE_KEY("prototypes", prototypes),
      PROTEX_SIZE_KEY("validate_every", validate_every),
      Key{"project_at_epoch",
          [](TrainConfig& c, std::string_view v) {
            if (v == "auto") c.project_at_epoch.reset();
            else c.project_at_epoch = parse_size(v);
          },
          [](const TrainConfig& c) {
            return c.project_at_epoch ? std::to_string(*c.project_at_epoch) : std::string("auto");
          }},
      PROTEX_SIZE_KEY("head_finetune_epochs", head_finetune_epochs),
      PROTEX_SIZE_KEY("relearn_epochs", relearn_epochs),
      PROTEX_REAL_KEY("adam_beta1", adam.beta1),
      PROTEX_REAL_KEY("adam_beta2", adam.beta2),
      PROTEX_REAL_KEY("adam_eps", adam.eps),
      PROTEX_REAL_KEY("lambda_clst", loss.clst),
      PROTEX_REAL_KEY("lambda_sep", loss.sep),
      PROTEX_REAL_KEY("lambda_distr", loss.distr),
      PROTEX_REAL_KEY("lambda_divers", loss.divers),
      PROTEX_REAL_KEY("lambda_l1", loss.l1),
      PROTEX_REAL_KEY("lambda_interact", loss.interact),
      Key{"literal_min", [](TrainConfig& c, std::string_view v) { c.loss.literal_min = parse_bool(v); },
          [](const TrainConfig& c) { return std::string(c.loss.literal_min ? "true" : "false"); }},
      Key{"sim", [](TrainConfig& c, std::string_view v) { c.sim = parse_sim_kind(v); },
          [](const TrainConfig& c) { return std::string(to_string(c.sim)); }},
      Key{"selector", [](TrainConfig& c, std::string_view v) { c.selector.kind = parse_selector_kind(v); },
          [](const TrainConfig& c) { return std::string(to_string(c.selector.kind)); }},
      PROTEX_SIZE_KEY("k", selector.k),
      PROTEX_SIZE_KEY("dilation", selector.dilation),
      PROTEX_SIZE_KEY("k_lim", selector.k_lim),
      Key{"enum_cap", [](TrainConfig& c, std::string_view v) { c.selector.enum_cap = parse_number<std::uint64_t>(v); },
          [](const TrainConfig& c) { return std::to_string(c.selector.enum_cap); }},
  };
  return k;
}

#undef PROTEX_SIZE_KEY
#undef PROTEX_REAL_KEY

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

TrainConfig parse_config(std::string_view text, const std::string& source, TrainConfig base) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::ConfigInvalid, where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& ks = keys();
    const auto it = std::find_if(ks.begin(), ks.end(), [&](const Key& k) { return k.name == key; });
    if (it == ks.end()) throw Error(ErrorCode::ConfigInvalid, where + ": unknown key '" + std::string(key) + "'");
    try {
      it->set(base, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigInvalid, where + ": key '" + std::string(key) + "': " + e.detail());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ConfigInvalid,
                  where + ": key '" + std::string(key) + "': " + e.what() + ", got '" + std::string(value) + "'");
    }
  }
  try {
    base.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, source + ": " + e.detail());
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  return parse_config(detail::read_file(path), path.string(), std::move(base));
}

std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

nlohmann::json ProviderSpec::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case ProviderKind::stored_only: j["kind"] = "stored_only"; break;
    case ProviderKind::toy: j["kind"] = "toy"; break;
    case ProviderKind::http: j["kind"] = "http"; break;
  }
  j["dim"] = dim;
  if (kind == ProviderKind::toy) {
    j["seed"] = seed;
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [tok, v] : table) t[tok] = v;
    j["table"] = std::move(t);
  }
  if (kind == ProviderKind::http) j["url"] = url;
  return j;
}

ProviderSpec ProviderSpec::from_json(const nlohmann::json& j, const std::string& source) {
  ProviderSpec s;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "stored_only") s.kind = ProviderKind::stored_only;
    else if (kind == "toy") s.kind = ProviderKind::toy;
    else if (kind == "http") s.kind = ProviderKind::http;
    else throw Error(ErrorCode::ConfigInvalid, source + ": kind: unknown provider '" + kind + "'");
    s.dim = j.at("dim").get<std::size_t>();
    if (s.kind == ProviderKind::toy) {
      s.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("table"))
        for (auto it = j["table"].begin(); it != j["table"].end(); ++it) {
          auto v = it.value().get<std::vector<float>>();
          if (v.size() != s.dim)
            throw Error(ErrorCode::ConfigInvalid, source + ": table." + it.key() + ": wrong dimension");
          s.table.emplace(it.key(), std::move(v));
        }
    }
    if (s.kind == ProviderKind::http) s.url = j.at("url").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, source + ": " + e.what());
  }
  return s;
}

ProviderSpec load_provider_spec(const std::filesystem::path& dir, std::size_t dim) {
  const auto path = dir / "provider.json";
  if (!std::filesystem::exists(path)) {
    ProviderSpec s;
    s.dim = dim;
    return s;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  auto s = ProviderSpec::from_json(j, path.string());
  PROTEX_THROW_IF(s.dim != dim, ErrorCode::DimMismatch,
                  path.string() + ": provider dim " + std::to_string(s.dim) + " != dataset dim " + std::to_string(dim));
  return s;
}

void save_provider_spec(const ProviderSpec& spec, const std::filesystem::path& dir) {
  detail::write_file(dir / "provider.json", spec.to_json().dump(2) + "\n");
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSpec& spec) {
  switch (spec.kind) {
    case ProviderKind::stored_only: return std::make_unique<StoredOnlyProvider>(spec.dim);
    case ProviderKind::toy: return std::make_unique<ToyEncoder>(spec.dim, spec.seed, spec.table);
    case ProviderKind::http: break;
  }
  throw Error(ErrorCode::ProviderCapability, "http provider is only available through the gateway library");
}

}  // namespace protex

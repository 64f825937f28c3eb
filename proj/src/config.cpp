#include "wv/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace wv {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "variant",     "stem_channels", "mid_channels", "head_channels", "n_heads",    "sa_heads",
      "dropout",     "ca_placement",  "dense_units",  "attention_norm", "ca_index_order",
      "lr",          "lr_decay",      "batch_size",   "max_epochs",    "patience",   "loss",
      "focal_alpha", "focal_gamma",   "seed"};
  return keys;
}

void apply_config_key(RunConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  auto& a = cfg.arch;
  auto& t = cfg.train;
  try {
    if (key == "variant") a.variant = parse_variant(value);
    else if (key == "stem_channels") a.stem_channels = parse_number<std::size_t>(key, value);
    else if (key == "mid_channels") a.mid_channels = parse_number<std::size_t>(key, value);
    else if (key == "head_channels") a.head_channels = parse_number<std::size_t>(key, value);
    else if (key == "n_heads") a.n_heads = parse_number<std::size_t>(key, value);
    else if (key == "sa_heads") a.sa_heads = parse_number<std::size_t>(key, value);
    else if (key == "dropout") a.dropout_rate = parse_number<double>(key, value);
    else if (key == "ca_placement") a.ca_placement = parse_number<std::size_t>(key, value);
    else if (key == "dense_units") a.dense_units = parse_number<std::size_t>(key, value);
    else if (key == "attention_norm") a.attention_norm = parse_bool(key, value);
    else if (key == "ca_index_order") {
      if (value == "query_major") a.ca_index_order = attn::IndexOrder::query_major;
      else if (value == "literal") a.ca_index_order = attn::IndexOrder::literal;
      else throw ConfigError("ca_index_order must be query_major or literal");
    } else if (key == "lr") t.lr = parse_number<double>(key, value);
    else if (key == "lr_decay") t.lr_decay = parse_number<double>(key, value);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "max_epochs") t.max_epochs = parse_number<std::size_t>(key, value);
    else if (key == "patience") t.patience = parse_number<std::size_t>(key, value);
    else if (key == "loss") {
      if (value == "focal") t.loss.kind = LossConfig::Kind::focal;
      else if (value == "cce") t.loss.kind = LossConfig::Kind::cce;
      else throw ConfigError("loss must be focal or cce");
    } else if (key == "focal_alpha") t.loss.focal.alpha = parse_number<double>(key, value);
    else if (key == "focal_gamma") t.loss.focal.gamma = parse_number<double>(key, value);
    else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

RunConfig read_config(const std::filesystem::path& path, RunConfig base, std::vector<std::string>* keys_seen) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read config file: " + path.string());
  std::string line;
  for (std::size_t lineno = 1; std::getline(f, line); ++lineno) {
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(s.substr(0, eq));
    try {
      apply_config_key(base, key, s.substr(eq + 1));
      if (keys_seen) keys_seen->emplace_back(key);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.arch.validate();
  base.train.validate();
  return base;
}

std::string config_to_text(const RunConfig& cfg) {
  const auto& a = cfg.arch;
  const auto& t = cfg.train;
  std::ostringstream os;
  os << "variant = " << variant_name(a.variant) << '\n'
     << "stem_channels = " << a.stem_channels << '\n'
     << "mid_channels = " << a.mid_channels << '\n'
     << "head_channels = " << a.head_channels << '\n'
     << "n_heads = " << a.n_heads << '\n'
     << "sa_heads = " << a.sa_heads << '\n'
     << "dropout = " << fmt_double(a.dropout_rate) << '\n'
     << "ca_placement = " << a.ca_placement << '\n'
     << "dense_units = " << a.dense_units << '\n'
     << "attention_norm = " << (a.attention_norm ? "true" : "false") << '\n'
     << "ca_index_order = " << (a.ca_index_order == attn::IndexOrder::literal ? "literal" : "query_major") << '\n'
     << "lr = " << fmt_double(t.lr) << '\n'
     << "lr_decay = " << fmt_double(t.lr_decay) << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "max_epochs = " << t.max_epochs << '\n'
     << "patience = " << t.patience << '\n'
     << "loss = " << (t.loss.kind == LossConfig::Kind::cce ? "cce" : "focal") << '\n'
     << "focal_alpha = " << fmt_double(t.loss.focal.alpha) << '\n'
     << "focal_gamma = " << fmt_double(t.loss.focal.gamma) << '\n'
     << "seed = " << t.seed << '\n';
  return os.str();
}

}  // namespace wv

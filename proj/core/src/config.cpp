#include "multimodel/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + v + "' for " + key);
}

std::string show(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Entry {
  const char* key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define MM_SIZE(name, field)                                                     \
  Entry {                                                                        \
    name, [](const Config& c) { return std::to_string(c.field); },               \
        [](Config& c, const std::string& v) { c.field = parse_number<std::size_t>(name, v); } \
  }
#define MM_U64(name, field)                                                      \
  Entry {                                                                        \
    name, [](const Config& c) { return std::to_string(c.field); },               \
        [](Config& c, const std::string& v) { c.field = parse_number<std::uint64_t>(name, v); } \
  }
#define MM_REAL(name, field)                                                     \
  Entry {                                                                        \
    name, [](const Config& c) { return show(c.field); },                         \
        [](Config& c, const std::string& v) { c.field = parse_number<double>(name, v); } \
  }
#define MM_BOOL(name, field)                                                     \
  Entry {                                                                        \
    name, [](const Config& c) { return std::string(c.field ? "true" : "false"); }, \
        [](Config& c, const std::string& v) { c.field = parse_bool(name, v); }   \
  }
#define MM_TEXT(name, field)                                                     \
  Entry {                                                                        \
    name, [](const Config& c) { return c.field; }, [](Config& c, const std::string& v) { c.field = v; } \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e{
      MM_SIZE("depth", train.model.depth),
      MM_SIZE("heads", train.model.heads),
      MM_SIZE("experts", train.model.experts),
      MM_SIZE("k", train.model.k),
      MM_SIZE("expert_hidden", train.model.expert_hidden),
      MM_REAL("balance_weight", train.model.balance_weight),
      MM_REAL("dropout", train.model.dropout),
      MM_BOOL("use_moe", train.model.use_moe),
      MM_BOOL("use_attention", train.model.use_attention),
      MM_SIZE("encoder_blocks", train.model.encoder_blocks),
      MM_SIZE("encoder_moe_after", train.model.encoder_moe_after),
      MM_SIZE("mixer_blocks", train.model.mixer_blocks),
      MM_SIZE("decoder_units", train.model.decoder_units),
      MM_SIZE("decoder_moe_after", train.model.decoder_moe_after),
      Entry{"tasks",
            [](const Config& c) {
              std::string s;
              for (const auto& t : c.train.tasks) s += (s.empty() ? "" : ",") + t;
              return s;
            },
            [](Config& c, const std::string& v) {
              c.train.tasks.clear();
              std::stringstream ss(v);
              std::string t;
              while (std::getline(ss, t, ',')) {
                t = trim(t);
                if (t.empty()) throw ConfigError("empty task name in '" + v + "'");
                c.train.tasks.push_back(t);
              }
              if (c.train.tasks.empty()) throw ConfigError("tasks must name at least one task");
            }},
      MM_REAL("lr", train.adam.lr),
      MM_REAL("beta1", train.adam.beta1),
      MM_REAL("beta2", train.adam.beta2),
      MM_REAL("eps", train.adam.eps),
      MM_REAL("clip_norm", train.adam.clip_norm),
      MM_SIZE("batch", train.batch),
      MM_SIZE("steps", train.steps),
      MM_SIZE("eval_every", train.eval_every),
      MM_SIZE("dev_size", train.dev_size),
      MM_U64("seed", train.seed),
      MM_U64("world_seed", train.world_seed),
      MM_SIZE("parse_budget", train.parse_budget),
      MM_SIZE("threads", train.threads),
      MM_SIZE("battery_steps", battery_steps),
      MM_TEXT("log", train.log_path),
      MM_TEXT("ckpt", ckpt),
      MM_TEXT("out", out),
  };
  return e;
}

#undef MM_SIZE
#undef MM_U64
#undef MM_REAL
#undef MM_BOOL
#undef MM_TEXT

}  // namespace

void set_config_value(Config& c, const std::string& key, const std::string& value) {
  for (const auto& e : entries())
    if (key == e.key) {
      e.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.emplace_back(e.key);
  return keys;
}

Config parse_config(std::string_view text, Config base) {
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

Config load_config(const std::string& path, Config base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string serialize_config(const Config& c) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + " = " + e.get(c) + "\n";
  return out;
}

}  // namespace mm

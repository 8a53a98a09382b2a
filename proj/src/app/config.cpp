#include <charconv>
#include <fstream>
#include <sstream>

#include "agcrf/app.hpp"
#include "agcrf/io.hpp"

namespace agcrf::app {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

std::string fmt(double x) { return format_double(x); }

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(n) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

KeyValues merge(KeyValues base, const KeyValues& over) {
  for (const auto& [k, v] : over) base[k] = v;
  return base;
}

RunConfig RunConfig::from_pairs(const KeyValues& kv) {
  RunConfig rc;
  KeyValues net_kv;
  for (const auto& [k, v] : kv) {
    if (k == "lr") rc.train.lr = parse_number<double>(k, v);
    else if (k == "momentum") rc.train.momentum = parse_number<double>(k, v);
    else if (k == "weight_decay") rc.train.weight_decay = parse_number<double>(k, v);
    else if (k == "epochs") rc.train.epochs = parse_number<int>(k, v);
    else if (k == "batch") rc.train.batch = parse_number<int>(k, v);
    else if (k == "seed") rc.train.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "threads") rc.train.threads = parse_number<int>(k, v);
    else if (k == "max_steps") rc.train.max_steps = parse_number<int>(k, v);
    else if (k == "clip_norm") rc.train.clip_norm = parse_number<double>(k, v);
    else if (k == "hed_beta") rc.train.hed_beta = net::parse_switch(v, k);
    else if (k == "in_channels" || k == "out_channels") throw ConfigError("key '" + k + "' is set from the dataset");
    else if (k == "sign") net_kv[k] = v == "+" ? "1" : v == "-" ? "-1" : v;
    else net_kv[k] = v;
  }
  try {
    rc.net = net::NetSpec::from_pairs(net_kv);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  rc.task_explicit = kv.count("task") > 0;
  if (rc.net.attention_sign != 1 && rc.net.attention_sign != -1) throw ConfigError("sign must be + or -");
  if (rc.train.epochs < 0 || rc.train.batch < 1 || rc.train.threads < 1 || rc.train.max_steps < 0)
    throw ConfigError("epochs, max_steps must be >= 0 and batch, threads >= 1");
  if (!(rc.train.lr >= 0) || !(rc.train.momentum >= 0) || !(rc.train.weight_decay >= 0) ||
      !(rc.train.clip_norm >= 0))
    throw ConfigError("lr, momentum, weight_decay and clip_norm must be >= 0");
  return rc;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "batch=" << train.batch << "\n";
  os << "clip_norm=" << fmt(train.clip_norm) << "\n";
  os << "epochs=" << train.epochs << "\n";
  os << "hed_beta=" << (train.hed_beta ? "on" : "off") << "\n";
  os << "lr=" << fmt(train.lr) << "\n";
  os << "max_steps=" << train.max_steps << "\n";
  os << "momentum=" << fmt(train.momentum) << "\n";
  os << "seed=" << train.seed << "\n";
  os << "threads=" << train.threads << "\n";
  os << "weight_decay=" << fmt(train.weight_decay) << "\n";
  // Network keys, already sorted.
  return os.str() + net.echo();
}

}  // namespace agcrf::app

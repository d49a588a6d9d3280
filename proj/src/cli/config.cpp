#include "stairpool/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "stairpool/error.hpp"

namespace stairpool {

namespace {

[[noreturn]] void fail(const std::string& what) { throw Error(Errc::InvalidConfig, what); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(const std::string& key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(key + ": expected an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_double(const std::string& key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(key + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(key + ": expected true or false, got '" + std::string(v) + "'");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(const std::string&, std::string_view)>;

std::map<std::string, Setter> model_setters(ModelConfig& m) {
  std::map<std::string, Setter> s;
  s["model.ndim"] = [&m](const std::string& k, std::string_view v) { m.ndim = parse_int<int>(k, v); };
  s["model.in_channels"] = [&m](const std::string& k, std::string_view v) { m.in_channels = parse_int<std::int64_t>(k, v); };
  s["model.num_classes"] = [&m](const std::string& k, std::string_view v) { m.num_classes = parse_int<std::int64_t>(k, v); };
  s["model.base_channels"] = [&m](const std::string& k, std::string_view v) { m.base_channels = parse_int<std::int64_t>(k, v); };
  s["model.max_channels"] = [&m](const std::string& k, std::string_view v) { m.max_channels = parse_int<std::int64_t>(k, v); };
  s["model.stair_init_noise"] = [&m](const std::string& k, std::string_view v) { m.stair_init_noise = parse_double(k, v); };
  for (int l = 1; l <= kUNetDepth; ++l) {
    s["model.pooling.step" + std::to_string(l)] = [&m, l](const std::string& k, std::string_view v) {
      try {
        m.pooling[static_cast<std::size_t>(l - 1)] = PoolingChoice::parse(v);
      } catch (const Error& e) {
        fail(k + ": " + e.what());
      }
    };
  }
  return s;
}

void apply_lines(std::string_view text, std::map<std::string, Setter>& setters) {
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) fail("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) fail("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (value.empty()) fail(key + ": missing value");
    it->second(key, value);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.n_train < 1) fail("data.n_train: must be at least 1");
  if (data.n_val < 0) fail("data.n_val: must be non-negative");
  if (data.size < 16 || data.size % 8 != 0) fail("data.size: must be a multiple of 8 and at least 16");
  if (model.in_channels != 1) fail("model.in_channels: synthetic data has one channel");
  if (model.num_classes < 3 || model.num_classes > 5) fail("model.num_classes: synthetic data supports 3 to 5 classes");
  if (search.samples < 0) fail("search.samples: must be non-negative");
  if (correlate_variants < 2) fail("correlate.variants: must be at least 2");
}

DatasetSpec RunConfig::train_spec() const { return {data.n_train, data.size, model.num_classes, data.seed, model.ndim}; }

DatasetSpec RunConfig::val_spec() const {
  // Validation draws from a stream disjoint from training.
  return {data.n_val, data.size, model.num_classes, data.seed ^ 0x5EED0000F00Dull, model.ndim};
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  auto s = model_setters(c.model);
  s["model.seed"] = [&c](const std::string& k, std::string_view v) { c.model_seed = parse_int<std::uint64_t>(k, v); };
  s["train.lr"] = [&c](const std::string& k, std::string_view v) { c.train.lr = parse_double(k, v); };
  s["train.momentum"] = [&c](const std::string& k, std::string_view v) { c.train.momentum = parse_double(k, v); };
  s["train.weight_decay"] = [&c](const std::string& k, std::string_view v) { c.train.weight_decay = parse_double(k, v); };
  s["train.epochs"] = [&c](const std::string& k, std::string_view v) { c.train.epochs = parse_int<int>(k, v); };
  s["train.batch_size"] = [&c](const std::string& k, std::string_view v) { c.train.batch_size = parse_int<std::size_t>(k, v); };
  s["train.seed"] = [&c](const std::string& k, std::string_view v) { c.train.seed = parse_int<std::uint64_t>(k, v); };
  s["train.augmentation"] = [&c](const std::string& k, std::string_view v) { c.train.augmentation = parse_bool(k, v); };
  s["data.n_train"] = [&c](const std::string& k, std::string_view v) { c.data.n_train = parse_int<std::int64_t>(k, v); };
  s["data.n_val"] = [&c](const std::string& k, std::string_view v) { c.data.n_val = parse_int<std::int64_t>(k, v); };
  s["data.size"] = [&c](const std::string& k, std::string_view v) { c.data.size = parse_int<std::int64_t>(k, v); };
  s["data.seed"] = [&c](const std::string& k, std::string_view v) { c.data.seed = parse_int<std::uint64_t>(k, v); };
  s["search.joint"] = [&c](const std::string& k, std::string_view v) { c.search.joint = parse_bool(k, v); };
  s["search.samples"] = [&c](const std::string& k, std::string_view v) { c.search.samples = parse_int<std::int64_t>(k, v); };
  s["correlate.variants"] = [&c](const std::string& k, std::string_view v) {
    c.correlate_variants = parse_int<std::int64_t>(k, v);
  };
  apply_lines(text, s);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string model_config_text(const ModelConfig& m) {
  std::ostringstream o;
  o << "model.ndim = " << m.ndim << "\n"
    << "model.in_channels = " << m.in_channels << "\n"
    << "model.num_classes = " << m.num_classes << "\n"
    << "model.base_channels = " << m.base_channels << "\n"
    << "model.max_channels = " << m.max_channels << "\n"
    << "model.stair_init_noise = " << num(m.stair_init_noise) << "\n";
  for (int l = 1; l <= kUNetDepth; ++l) {
    o << "model.pooling.step" << l << " = " << m.pooling[static_cast<std::size_t>(l - 1)].to_string() << "\n";
  }
  return o.str();
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig m;
  auto s = model_setters(m);
  apply_lines(text, s);
  m.validate();
  return m;
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  o << model_config_text(c.model);
  o << "model.seed = " << c.model_seed << "\n"
    << "train.lr = " << num(c.train.lr) << "\n"
    << "train.momentum = " << num(c.train.momentum) << "\n"
    << "train.weight_decay = " << num(c.train.weight_decay) << "\n"
    << "train.epochs = " << c.train.epochs << "\n"
    << "train.batch_size = " << c.train.batch_size << "\n"
    << "train.seed = " << c.train.seed << "\n"
    << "train.augmentation = " << (c.train.augmentation ? "true" : "false") << "\n"
    << "data.n_train = " << c.data.n_train << "\n"
    << "data.n_val = " << c.data.n_val << "\n"
    << "data.size = " << c.data.size << "\n"
    << "data.seed = " << c.data.seed << "\n"
    << "search.joint = " << (c.search.joint ? "true" : "false") << "\n"
    << "search.samples = " << c.search.samples << "\n"
    << "correlate.variants = " << c.correlate_variants << "\n";
  return o.str();
}

}  // namespace stairpool

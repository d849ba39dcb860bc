#pragma once

// Run configuration: a flat set of dotted keys with typed values. Documents
// are either `key = value` lines (# comments) or a JSON object whose nested
// objects flatten to dotted keys.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kamim/error.hpp"
#include "kamim/train.hpp"

namespace kamim {

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Config {
 public:
  enum class Kind { integer, real, boolean, text };

  Config() {
    def("seed", Kind::integer, "0");
    def("objective", Kind::text, "kamim");
    def("model.img_size", Kind::integer, "32");
    def("model.patch_size", Kind::integer, "4");
    def("model.embed_dim", Kind::integer, "64");
    def("model.depth", Kind::integer, "4");
    def("model.heads", Kind::integer, "4");
    def("model.mlp_ratio", Kind::integer, "4");
    def("model.channels", Kind::integer, "3");
    def("mask.patch_size", Kind::integer, "8");
    def("mask.ratio", Kind::real, "0.6");
    def("weight.wps", Kind::integer, "4");
    def("weight.T", Kind::real, "0.25");
    def("weight.threshold", Kind::integer, "20");
    def("optim.lr", Kind::real, "8e-4");
    def("optim.weight_decay", Kind::real, "0.05");
    def("optim.beta1", Kind::real, "0.9");
    def("optim.beta2", Kind::real, "0.999");
    def("optim.eps", Kind::real, "1e-8");
    def("optim.epochs", Kind::integer, "30");
    def("optim.warmup_epochs", Kind::integer, "3");
    def("optim.batch_size", Kind::integer, "64");
    def("train.flips", Kind::boolean, "true");
    def("train.resample_masks", Kind::boolean, "true");
    def("data.train", Kind::text, "");
    def("data.test", Kind::text, "");
    def("data.mean", Kind::real, "0.5");
    def("data.std", Kind::real, "0.5");
    def("probe.layer", Kind::integer, "3");
    def("probe.layernorm", Kind::boolean, "false");
    def("probe.lr", Kind::real, "5e-3");
    def("probe.weight_decay", Kind::real, "0.05");
    def("probe.epochs", Kind::integer, "50");
    def("probe.warmup_epochs", Kind::integer, "5");
    def("probe.batch_size", Kind::integer, "64");
    def("finetune.layer", Kind::integer, "-1");
    def("finetune.layernorm", Kind::boolean, "true");
    def("finetune.lr", Kind::real, "5e-3");
    def("finetune.weight_decay", Kind::real, "0.05");
    def("finetune.epochs", Kind::integer, "10");
    def("finetune.warmup_epochs", Kind::integer, "1");
    def("finetune.batch_size", Kind::integer, "64");
    def("finetune.flips", Kind::boolean, "false");
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Sets a known key; the value is checked against the key's type and
  /// stored in canonical form.
  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = canonical(key, kinds_.at(key), value);
  }

  /// Applies a "key=value" override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void parse(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
      }
      flatten(doc, "");
      return;
    }
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), unquote(trim(line.substr(eq + 1))));
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    parse(ss.str());
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  std::int64_t get_int(const std::string& key) const { return std::stoll(get(key)); }
  double get_real(const std::string& key) const { return std::stod(get(key)); }
  bool get_bool(const std::string& key) const { return get(key) == "true"; }

  /// Sorted key=value lines; identical settings give identical text.
  std::string canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const { return hex64(fnv1a64(canonical_text())); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  ViTConfig model() const {
    ViTConfig c;
    c.img_size = as_int("model.img_size");
    c.patch_size = as_int("model.patch_size");
    c.embed_dim = as_int("model.embed_dim");
    c.depth = as_int("model.depth");
    c.heads = as_int("model.heads");
    c.mlp_ratio = as_int("model.mlp_ratio");
    c.channels = as_int("model.channels");
    checked([&] { c.validate(); });
    return c;
  }

  Normalization normalization() const {
    Normalization n;
    n.mean = {static_cast<float>(get_real("data.mean"))};
    n.std = {static_cast<float>(get_real("data.std"))};
    if (!(n.std[0] > 0.0f)) throw ConfigError("data.std must be > 0");
    return n;
  }

  PretrainConfig pretrain() const {
    PretrainConfig p;
    p.model = model();
    p.mask.mask_patch_size = as_int("mask.patch_size");
    p.mask.ratio = get_real("mask.ratio");
    p.mask.seed = static_cast<std::uint64_t>(get_int("seed"));
    const std::string& objective = get("objective");
    if (objective == "kamim") {
      p.weight = WeightConfig{as_int("weight.wps"), get_real("weight.T")};
      checked([&] { p.weight->validate(); });
    } else if (objective != "simmim") {
      throw ConfigError("objective must be 'kamim' or 'simmim', got '" + objective + "'");
    }
    p.fast_threshold = as_int("weight.threshold");
    p.optim = optim("optim");
    p.norm = normalization();
    p.flips = get_bool("train.flips");
    p.resample_masks = get_bool("train.resample_masks");
    checked([&] { p.mask.validate(p.model.img_size); });
    return p;
  }

  ProbeConfig probe() const {
    ProbeConfig p;
    p.layer = as_int("probe.layer");
    p.use_layernorm = get_bool("probe.layernorm");
    p.optim = optim("probe");
    p.norm = normalization();
    return p;
  }

  FinetuneConfig finetune() const {
    FinetuneConfig f;
    f.layer = as_int("finetune.layer");
    f.use_layernorm = get_bool("finetune.layernorm");
    f.optim = optim("finetune");
    f.norm = normalization();
    f.flips = get_bool("finetune.flips");
    return f;
  }

 private:
  void def(const std::string& key, Kind kind, const std::string& value) {
    kinds_[key] = kind;
    values_[key] = canonical(key, kind, value);
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
  }

  static std::string canonical(const std::string& key, Kind kind, const std::string& raw) {
    const std::string v = trim(raw);
    auto bad = [&](const char* what) {
      return ConfigError("config key '" + key + "': expected " + what + ", got '" + raw + "'");
    };
    switch (kind) {
      case Kind::integer: {
        std::size_t used = 0;
        long long x = 0;
        try {
          x = std::stoll(v, &used);
        } catch (const std::exception&) {
          throw bad("an integer");
        }
        if (used != v.size()) throw bad("an integer");
        return std::to_string(x);
      }
      case Kind::real: {
        std::size_t used = 0;
        double x = 0;
        try {
          x = std::stod(v, &used);
        } catch (const std::exception&) {
          throw bad("a number");
        }
        if (used != v.size() || !std::isfinite(x)) throw bad("a finite number");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return buf;
      }
      case Kind::boolean:
        if (v == "true" || v == "1") return "true";
        if (v == "false" || v == "0") return "false";
        throw bad("true or false");
      case Kind::text:
        return v;
    }
    return v;
  }

  void flatten(const nlohmann::json& node, const std::string& prefix) {
    if (!node.is_object()) throw ConfigError("config: JSON document must be an object");
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      const auto& v = it.value();
      if (v.is_object()) {
        flatten(v, key);
      } else if (v.is_string()) {
        set(key, v.get<std::string>());
      } else if (v.is_boolean()) {
        set(key, v.get<bool>() ? "true" : "false");
      } else if (v.is_number()) {
        set(key, v.dump());
      } else {
        throw ConfigError("config key '" + key + "': unsupported JSON value");
      }
    }
  }

  int as_int(const std::string& key) const { return static_cast<int>(get_int(key)); }

  OptimConfig optim(const std::string& section) const {
    OptimConfig o;
    o.lr = get_real(section + ".lr");
    o.weight_decay = get_real(section + ".weight_decay");
    if (section == "optim") {
      o.beta1 = get_real("optim.beta1");
      o.beta2 = get_real("optim.beta2");
      o.eps = get_real("optim.eps");
    }
    o.epochs = as_int(section + ".epochs");
    o.warmup_epochs = as_int(section + ".warmup_epochs");
    o.batch_size = as_int(section + ".batch_size");
    o.seed = static_cast<std::uint64_t>(get_int("seed"));
    checked([&] { o.validate(); });
    return o;
  }

  template <typename F>
  static void checked(F&& f) {
    try {
      f();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, Kind> kinds_;
};

}  // namespace kamim

#include "msvit/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace msvit {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Gathers every problem in a pass; the caller raises them as one error so
// a bad config reports all its mistakes at once.
struct Problems {
  std::string source;
  std::vector<std::string> items;

  void add(const std::string& p) { items.push_back(p); }
  void raise_if_any() const {
    if (items.empty()) return;
    std::string msg = source + " is invalid:";
    for (const auto& p : items) msg += "\n  - " + p;
    raise(msg);
  }
};

// Typed extraction: each reader consumes its key from the map (so leftovers
// mark unknown keys) and records a problem instead of throwing.
class KvReader {
public:
  KvReader(KvMap& kv, Problems& problems) : kv_(kv), problems_(problems) {}

  bool take(const std::string& key, std::string& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return false;
    out = it->second;
    kv_.erase(it);
    return true;
  }

  void read_int(const std::string& key, int64_t& out) {
    std::string raw;
    if (!take(key, raw)) return;
    try {
      size_t used = 0;
      const int64_t v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      out = v;
    } catch (const std::exception&) {
      problems_.add(key + " = '" + raw + "' is not an integer");
    }
  }

  void read_u64(const std::string& key, uint64_t& out) {
    std::string raw;
    if (!take(key, raw)) return;
    try {
      size_t used = 0;
      const uint64_t v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      out = v;
    } catch (const std::exception&) {
      problems_.add(key + " = '" + raw + "' is not an unsigned integer");
    }
  }

  void read_double(const std::string& key, double& out) {
    std::string raw;
    if (!take(key, raw)) return;
    try {
      size_t used = 0;
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      out = v;
    } catch (const std::exception&) {
      problems_.add(key + " = '" + raw + "' is not a number");
    }
  }

  void read_bool(const std::string& key, bool& out) {
    std::string raw;
    if (!take(key, raw)) return;
    if (raw == "true")
      out = true;
    else if (raw == "false")
      out = false;
    else
      problems_.add(key + " = '" + raw + "' must be true or false");
  }

  void read_int3(const std::string& key, std::array<int64_t, 3>& out) {
    std::string raw;
    if (!take(key, raw)) return;
    const auto parts = split(raw);
    if (parts.size() != 3) {
      problems_.add(key + " = '" + raw + "' must hold exactly three comma-separated values");
      return;
    }
    for (size_t i = 0; i < 3; ++i) {
      try {
        size_t used = 0;
        out[i] = std::stoll(parts[i], &used);
        if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
      } catch (const std::exception&) {
        problems_.add(key + " entry '" + parts[i] + "' is not an integer");
      }
    }
  }

  static std::vector<std::string> split(const std::string& raw) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(raw);
    while (std::getline(in, item, ',')) parts.push_back(trim(item));
    return parts;
  }

private:
  KvMap& kv_;
  Problems& problems_;
};

std::string attention_name(AttentionKind k) {
  return k == AttentionKind::Mssa ? "mssa" : "ssa";
}

std::string pipeline_name(GPipeline p) {
  return p == GPipeline::PoolMid ? "pool_mid" : "pool_late";
}

std::string bool_name(bool b) { return b ? "true" : "false"; }

std::string int3_text(const std::array<int64_t, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}

// Doubles round-trip through shortest-exact formatting so canonical text is
// stable and parse(print(x)) == x.
std::string double_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[64];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      if (std::strtod(shorter, nullptr) == v) return shorter;
    }
  }
  return buf;
}

}  // namespace

KvMap parse_config_text(const std::string& text, const std::string& source) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int64_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      raise(source + " line " + std::to_string(row) + " is not `key = value`: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      raise(source + " line " + std::to_string(row) + " has an empty key");
    if (kv.count(key))
      raise(source + " line " + std::to_string(row) + " repeats key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

KvMap load_config_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) raise("cannot open config file '" + file + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), "'" + file + "'");
}

std::string config_text(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::vector<std::string> profile_names() {
  return {"msvit-10-384", "msvit-10-512", "msvit-10-768", "msvit-cifar", "msvit-dvs"};
}

KvMap profile_config(const std::string& name) {
  ModelConfig cfg;  // defaults shared by every profile
  if (name == "msvit-10-768") {
    cfg.dims = {192, 384, 768};
    cfg.depths = {1, 2, 7};
    cfg.height = cfg.width = 224;
    cfg.classes = 1000;
  } else if (name == "msvit-10-512") {
    cfg.dims = {128, 256, 512};
    cfg.depths = {1, 2, 7};
    cfg.height = cfg.width = 224;
    cfg.classes = 1000;
  } else if (name == "msvit-10-384") {
    cfg.dims = {96, 192, 384};
    cfg.depths = {1, 2, 7};
    cfg.height = cfg.width = 224;
    cfg.classes = 1000;
  } else if (name == "msvit-cifar") {
    cfg.dims = {96, 192, 384};
    cfg.depths = {1, 1, 2};
    cfg.height = cfg.width = 32;
    cfg.classes = 10;
  } else if (name == "msvit-dvs") {
    cfg.dims = {32, 64, 256};
    cfg.depths = {0, 1, 1};
    cfg.height = cfg.width = 64;
    cfg.in_channels = 2;
    cfg.classes = 11;
    cfg.timesteps = 16;
  } else {
    std::string valid;
    for (const auto& n : profile_names()) valid += (valid.empty() ? "" : ", ") + n;
    raise("unknown profile '" + name + "'; available: " + valid);
  }
  return model_config_to_kv(cfg);
}

ModelConfig model_config_from_kv(KvMap& kv) {
  Problems problems{"model config", {}};
  KvReader r(kv, problems);
  ModelConfig cfg;
  r.read_int("model.timesteps", cfg.timesteps);
  r.read_int("model.in_channels", cfg.in_channels);
  r.read_int("model.height", cfg.height);
  r.read_int("model.width", cfg.width);
  r.read_int("model.classes", cfg.classes);
  r.read_int3("model.dims", cfg.dims);
  r.read_int3("model.depths", cfg.depths);

  std::string raw;
  if (r.take("model.attention", raw)) {
    const auto parts = KvReader::split(raw);
    if (parts.size() != 3) {
      problems.add("model.attention = '" + raw + "' must list three stage kinds");
    } else {
      for (size_t i = 0; i < 3; ++i) {
        if (parts[i] == "mssa")
          cfg.attention[i] = AttentionKind::Mssa;
        else if (parts[i] == "ssa")
          cfg.attention[i] = AttentionKind::Ssa;
        else
          problems.add("model.attention entry '" + parts[i] + "' must be mssa or ssa");
      }
    }
  }
  if (r.take("model.mssa_variant", raw)) {
    try {
      cfg.mssa_variant = mssa_variant_from_string(raw);
    } catch (const Error& e) {
      problems.add(e.what());
    }
  }
  r.read_bool("model.mssa_proj", cfg.mssa_proj);
  r.read_int("model.smlp_ratio", cfg.smlp_ratio);
  r.read_int("model.ssa_heads", cfg.ssa_heads);
  r.read_double("model.ssa_scale", cfg.ssa_scale);
  if (r.take("model.embed_pipeline", raw)) {
    if (raw == "pool_mid")
      cfg.embed_pipeline = GPipeline::PoolMid;
    else if (raw == "pool_late")
      cfg.embed_pipeline = GPipeline::PoolLate;
    else
      problems.add("model.embed_pipeline = '" + raw + "' must be pool_mid or pool_late");
  }
  r.read_double("model.lif.tau", cfg.lif.tau);
  r.read_double("model.lif.v_th", cfg.lif.v_th);
  r.read_double("model.lif.v_reset", cfg.lif.v_reset);
  r.read_double("model.lif.alpha", cfg.lif.surrogate_alpha);
  r.read_u64("model.seed", cfg.seed);

  // Anything left in the model namespace is a typo; claim it here so the
  // complaint lands next to the other model problems.
  for (auto it = kv.begin(); it != kv.end();) {
    if (it->first.rfind("model.", 0) == 0) {
      problems.add("unknown key '" + it->first + "'");
      it = kv.erase(it);
    } else {
      ++it;
    }
  }

  if (problems.items.empty()) {
    try {
      cfg.validate();
    } catch (const Error& e) {
      problems.add(e.what());
    }
  }
  problems.raise_if_any();
  return cfg;
}

KvMap model_config_to_kv(const ModelConfig& cfg) {
  KvMap kv;
  kv["model.timesteps"] = std::to_string(cfg.timesteps);
  kv["model.in_channels"] = std::to_string(cfg.in_channels);
  kv["model.height"] = std::to_string(cfg.height);
  kv["model.width"] = std::to_string(cfg.width);
  kv["model.classes"] = std::to_string(cfg.classes);
  kv["model.dims"] = int3_text(cfg.dims);
  kv["model.depths"] = int3_text(cfg.depths);
  kv["model.attention"] = attention_name(cfg.attention[0]) + "," +
                          attention_name(cfg.attention[1]) + "," +
                          attention_name(cfg.attention[2]);
  kv["model.mssa_variant"] = mssa_variant_name(cfg.mssa_variant);
  kv["model.mssa_proj"] = bool_name(cfg.mssa_proj);
  kv["model.smlp_ratio"] = std::to_string(cfg.smlp_ratio);
  kv["model.ssa_heads"] = std::to_string(cfg.ssa_heads);
  kv["model.ssa_scale"] = double_text(cfg.ssa_scale);
  kv["model.embed_pipeline"] = pipeline_name(cfg.embed_pipeline);
  kv["model.lif.tau"] = double_text(cfg.lif.tau);
  kv["model.lif.v_th"] = double_text(cfg.lif.v_th);
  kv["model.lif.v_reset"] = double_text(cfg.lif.v_reset);
  kv["model.lif.alpha"] = double_text(cfg.lif.surrogate_alpha);
  kv["model.seed"] = std::to_string(cfg.seed);
  return kv;
}

TrainOptions train_options_from_kv(KvMap& kv) {
  Problems problems{"train config", {}};
  KvReader r(kv, problems);
  TrainOptions opt;
  r.read_int("train.epochs", opt.epochs);
  r.read_int("train.batch", opt.batch);
  r.read_int("train.grad_accum", opt.grad_accum);
  r.read_double("train.base_lr", opt.base_lr);
  r.read_double("train.weight_decay", opt.weight_decay);
  r.read_double("train.warmup_frac", opt.warmup_frac);
  r.read_u64("train.seed", opt.seed);
  r.read_bool("train.deterministic", opt.deterministic);
  r.read_double("train.divergence_loss", opt.divergence_loss);
  problems.raise_if_any();
  return opt;
}

KvMap train_options_to_kv(const TrainOptions& opt) {
  KvMap kv;
  kv["train.epochs"] = std::to_string(opt.epochs);
  kv["train.batch"] = std::to_string(opt.batch);
  kv["train.grad_accum"] = std::to_string(opt.grad_accum);
  kv["train.base_lr"] = double_text(opt.base_lr);
  kv["train.weight_decay"] = double_text(opt.weight_decay);
  kv["train.warmup_frac"] = double_text(opt.warmup_frac);
  kv["train.seed"] = std::to_string(opt.seed);
  kv["train.deterministic"] = bool_name(opt.deterministic);
  kv["train.divergence_loss"] = double_text(opt.divergence_loss);
  return kv;
}

void reject_unknown_keys(const KvMap& kv, const std::string& source) {
  if (kv.empty()) return;
  std::string msg = source + " has unknown keys:";
  for (const auto& [k, v] : kv) msg += "\n  - " + k;
  raise(msg);
}

KvMap merge_configs(const KvMap& base, const KvMap& over) {
  KvMap out = base;
  for (const auto& [k, v] : over) out[k] = v;
  return out;
}

uint64_t config_hash(const KvMap& kv) { return fnv1a(config_text(kv)); }

// The architecture identity: every model key except the init seed, which
// changes weights but never shapes.
std::string ModelConfig::canonical_text() const {
  KvMap kv = model_config_to_kv(*this);
  kv.erase("model.seed");
  return config_text(kv);
}

uint64_t ModelConfig::hash() const { return fnv1a(canonical_text()); }

}  // namespace msvit

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "epiglab/cli.hpp"
#include "epiglab/error.hpp"

namespace fs = std::filesystem;

namespace epiglab::cli {

namespace {

/// Walks one mapping, rejecting keys outside `allowed`.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, std::set<std::string> allowed)
      : node_(node), path_(std::move(path)) {
    if (!node_) return;
    if (!node_.IsMap()) throw ConfigError("'" + path_ + "' must be a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
    }
  }

  bool has(const std::string& key) const { return node_ && node_[key] && !node_[key].IsNull(); }
  YAML::Node node(const std::string& key) const { return node_ ? node_[key] : YAML::Node(); }

  template <typename T>
  void read(const std::string& key, T& target) const {
    if (!has(key)) return;
    try {
      target = node_[key].as<T>();
    } catch (const YAML::Exception& e) {
      throw ConfigError("'" + qualified(key) + "': " + e.msg);
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    read(key, fallback);
    return fallback;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  YAML::Node node_;
  std::string path_;
};

void non_negative(const Section& s, const std::string& key, long long value) {
  if (value < 0) throw ConfigError("'" + s.qualified(key) + "' must be non-negative");
}

std::size_t read_size(const Section& s, const std::string& key, std::size_t fallback) {
  if (!s.has(key)) return fallback;
  const auto v = s.get<long long>(key, 0);
  non_negative(s, key, v);
  return static_cast<std::size_t>(v);
}

/// `seeds: N` or `seeds: [a, b, ...]`.
std::vector<std::uint64_t> read_seeds(const Section& s, const std::string& key, std::vector<std::uint64_t> fallback) {
  if (!s.has(key)) return fallback;
  const YAML::Node n = s.node(key);
  try {
    if (n.IsSequence()) return n.as<std::vector<std::uint64_t>>();
    const auto count = n.as<long long>();
    non_negative(s, key, count);
    return seed_range(static_cast<std::size_t>(count));
  } catch (const YAML::Exception& e) {
    throw ConfigError("'" + s.qualified(key) + "': " + e.msg);
  }
}

fs::path resolve(const Section& s, const std::string& key, const fs::path& base, bool must_exist) {
  if (!s.has(key)) return {};
  fs::path p = s.get<std::string>(key, "");
  if (p.empty()) return {};
  if (p.is_relative()) p = base / p;
  p = p.lexically_normal();
  if (must_exist && !fs::exists(p)) throw ConfigError("'" + s.qualified(key) + "': " + p.string() + " does not exist");
  return p;
}

void set_path(YAML::Node root, const std::string& dotted, const YAML::Node& value) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + dotted + "' has an empty component");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("empty override key");
  // yaml-cpp nodes are handles; reassigning a local would rebind, so recurse.
  std::function<void(YAML::Node, std::size_t)> assign = [&](YAML::Node node, std::size_t i) {
    if (i + 1 == parts.size()) {
      node[parts[i]] = value;
      return;
    }
    if (!node[parts[i]] || !node[parts[i]].IsMap()) node[parts[i]] = YAML::Node(YAML::NodeType::Map);
    assign(node[parts[i]], i + 1);
  };
  assign(root, 0);
}

}  // namespace

std::vector<std::uint64_t> seed_range(std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = i;
  return seeds;
}

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key=value");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir, const std::vector<Override>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config is not valid YAML: " + e.msg);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) {
    YAML::Node value;
    try {
      value = YAML::Load(o.value);
    } catch (const YAML::Exception& e) {
      throw ConfigError("override '" + o.key + "': " + e.msg);
    }
    set_path(root, o.key, value);
  }

  const Section top(root, "", {"data", "split", "task", "head", "loop", "probcover", "decompose", "server", "output"});
  ExperimentConfig cfg;

  const Section data(top.node("data"), "data",
                     {"latent", "raw", "labels", "assets", "classes", "synthetic"});
  if (data.has("synthetic")) {
    const Section syn(data.node("synthetic"), "data.synthetic",
                      {"classes", "per_class", "latent_dim", "raw_dim", "noise_scale", "separation", "seed"});
    SyntheticSpec spec;
    syn.read("classes", spec.classes);
    spec.per_class = read_size(syn, "per_class", spec.per_class);
    spec.latent_dim = read_size(syn, "latent_dim", spec.latent_dim);
    spec.raw_dim = read_size(syn, "raw_dim", spec.raw_dim);
    syn.read("noise_scale", spec.noise_scale);
    syn.read("separation", spec.separation);
    syn.read("seed", cfg.data.synthetic_seed);
    cfg.data.synthetic = spec;
    if (data.has("latent") || data.has("raw") || data.has("labels")) {
      throw ConfigError("'data.synthetic' excludes 'data.latent', 'data.raw' and 'data.labels'");
    }
  } else {
    cfg.data.latent = resolve(data, "latent", base_dir, true);
    cfg.data.raw = resolve(data, "raw", base_dir, true);
    cfg.data.labels = resolve(data, "labels", base_dir, true);
    if (cfg.data.latent.empty() && cfg.data.raw.empty()) {
      throw ConfigError("'data' needs 'latent', 'raw' or 'synthetic'");
    }
  }
  cfg.data.assets = resolve(data, "assets", base_dir, true);
  if (data.has("classes")) cfg.data.classes = data.get<int>("classes", 0);

  LoopConfig& loop = cfg.loop;
  const Section split(top.node("split"), "split", {"target", "validation", "test", "seed"});
  loop.split.target = read_size(split, "target", loop.split.target);
  loop.split.validation = read_size(split, "validation", loop.split.validation);
  loop.split.test = read_size(split, "test", loop.split.test);
  if (split.has("seed")) loop.split_seed = split.get<std::uint64_t>("seed", 0);

  const Section task(top.node("task"), "task", {"classes_of_interest", "group_rest_as_other", "class_names"});
  task.read("classes_of_interest", loop.task.classes_of_interest);
  task.read("group_rest_as_other", loop.task.group_rest_as_other);
  task.read("class_names", loop.task.class_names);

  HeadConfig& head = loop.head;
  const Section h(top.node("head"), "head",
                  {"kind", "trees", "max_features", "bootstrap", "hidden_layers", "dropout_rate", "members",
                   "ensemble_size", "learning_rate", "max_steps", "patience_steps", "l2_weight"});
  if (h.has("kind")) head.kind = head_kind_from_string(h.get<std::string>("kind", ""));
  head.forest.trees = read_size(h, "trees", head.forest.trees);
  head.forest.max_features = read_size(h, "max_features", head.forest.max_features);
  h.read("bootstrap", head.forest.bootstrap);
  h.read("hidden_layers", head.mlp.hidden_layers);
  h.read("dropout_rate", head.mlp.dropout_rate);
  head.mlp.members = read_size(h, "members", head.mlp.members);
  head.mlp.ensemble_size = read_size(h, "ensemble_size", head.mlp.ensemble_size);
  h.read("learning_rate", head.train.learning_rate);
  head.train.max_steps = read_size(h, "max_steps", head.train.max_steps);
  head.train.patience_steps = read_size(h, "patience_steps", head.train.patience_steps);
  h.read("l2_weight", head.train.l2_weight);

  const Section l(top.node("loop"), "loop",
                  {"methods", "budget", "init_per_class", "batch", "seeds", "feature_source", "eval_every",
                   "target_samples", "members", "timing", "keep_scores", "jobs"});
  if (l.has("methods")) {
    const YAML::Node m = l.node("methods");
    std::vector<std::string> names =
        m.IsSequence() ? m.as<std::vector<std::string>>() : std::vector<std::string>{m.as<std::string>()};
    cfg.methods.clear();
    for (const auto& name : names) cfg.methods.push_back(method_from_string(name));
    if (cfg.methods.empty()) throw ConfigError("'loop.methods' is empty");
  }
  loop.budget = read_size(l, "budget", loop.budget);
  loop.init_per_class = read_size(l, "init_per_class", loop.init_per_class);
  loop.batch = read_size(l, "batch", loop.batch);
  loop.seeds = read_seeds(l, "seeds", {0});
  if (l.has("feature_source")) loop.feature_source = feature_source_from_string(l.get<std::string>("feature_source", ""));
  loop.eval_every = read_size(l, "eval_every", loop.eval_every);
  loop.target_samples = read_size(l, "target_samples", loop.target_samples);
  loop.members = read_size(l, "members", loop.members);
  l.read("timing", loop.timing);
  l.read("keep_scores", loop.keep_scores);
  cfg.jobs = read_size(l, "jobs", cfg.jobs);

  const Section pc(top.node("probcover"), "probcover", {"radius", "purity_target", "grid", "seed"});
  pc.read("radius", loop.probcover.radius);
  pc.read("purity_target", loop.probcover.purity_target);
  pc.read("grid", loop.probcover.grid);
  pc.read("seed", loop.probcover.seed);

  const Section dc(top.node("decompose"), "decompose", {"n_small", "n_large", "seeds", "members"});
  cfg.decompose.n_small = read_size(dc, "n_small", cfg.decompose.n_small);
  cfg.decompose.n_large = read_size(dc, "n_large", cfg.decompose.n_large);
  cfg.decompose.seeds = read_seeds(dc, "seeds", seed_range(5));
  cfg.decompose.members = read_size(dc, "members", cfg.decompose.members);
  cfg.decompose.head = head;

  const Section sv(top.node("server"), "server", {"host", "port", "ui_dir", "seed", "human_init"});
  sv.read("host", cfg.server.host);
  sv.read("port", cfg.server.port);
  cfg.server.ui_dir = resolve(sv, "ui_dir", base_dir, true);
  sv.read("seed", cfg.server.seed);
  sv.read("human_init", cfg.server.human_init);
  if (cfg.server.port < 0 || cfg.server.port > 65535) throw ConfigError("'server.port' out of range");

  const Section out(top.node("output"), "output", {"dir"});
  if (out.has("dir")) cfg.out_dir = resolve(out, "dir", base_dir, false);

  loop.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), fs::absolute(path).parent_path(), overrides);
}

DataBundle load_data(const ExperimentConfig& config) {
  const auto& d = config.data;
  DataBundle bundle;
  if (d.synthetic) {
    SyntheticData syn = make_synthetic(*d.synthetic, d.synthetic_seed);
    bundle.latent = std::make_shared<const EmbeddingTable>(std::move(syn.latent));
    bundle.raw = std::make_shared<const EmbeddingTable>(std::move(syn.raw));
    bundle.oracle = std::move(syn.labels);
  } else {
    bundle = load_bundle(d.latent.string(), d.raw.string(), d.labels.string(), d.classes);
  }
  if (!d.assets.empty()) {
    const std::size_t n = bundle.latent ? bundle.latent->n() : bundle.raw->n();
    bundle.assets.emplace(d.assets, n);
  }
  return bundle;
}

}  // namespace epiglab::cli

#include "epiglab/heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {

constexpr std::uint64_t kNetStream = 0x4e4554;
constexpr std::uint64_t kMaskStream = 0x4d41534b;
constexpr std::uint64_t kPosteriorStream = 0x504f5354;

// -- binary helpers ---------------------------------------------------------

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(in_[pos_ + b]);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(in_[pos_ + b]);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::size_t count(std::size_t element_bytes) {
    std::uint64_t n = u64();
    if (element_bytes > 0 && n > (in_.size() - pos_) / element_bytes) {
      throw FormatError("head blob: implausible element count at byte offset " + std::to_string(pos_ - 8));
    }
    return static_cast<std::size_t>(n);
  }
  std::vector<double> f64s() {
    std::vector<double> v(count(8));
    for (double& x : v) x = f64();
    return v;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("head blob truncated at byte offset " + std::to_string(pos_));
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& net) {
  w.u64(net.input_dim());
  w.u64(net.hidden().size());
  for (std::size_t h : net.hidden()) w.u64(h);
  w.i32(net.classes());
  w.f64s(net.params());
}

Mlp read_mlp(Reader& r) {
  const std::size_t input = static_cast<std::size_t>(r.u64());
  std::vector<std::size_t> hidden(r.count(8));
  for (auto& h : hidden) h = static_cast<std::size_t>(r.u64());
  const int classes = r.i32();
  Mlp net(input, hidden, classes);
  auto params = r.f64s();
  if (params.size() != net.parameter_count()) throw FormatError("head blob: parameter count mismatch");
  net.params() = std::move(params);
  return net;
}

Mlp make_network(const HeadConfig& config, std::size_t dim, int classes) {
  return Mlp(dim, config.mlp.hidden_layers, classes);
}

Mlp train_network(const HeadConfig& config, const Dataset& train, int classes, const Dataset* validation,
                  double dropout_rate, std::uint64_t seed) {
  Mlp net = make_network(config, static_cast<std::size_t>(train.x.cols()), classes);
  Rng rng(seed);
  net.initialize(rng);
  const bool has_val = validation != nullptr && validation->x.rows() > 0;
  net.train(config.train, dropout_rate, train.x, train.y, has_val ? &validation->x : nullptr,
            has_val ? std::span<const int>(validation->y) : std::span<const int>{}, rng);
  return net;
}

void copy_member(ProbCube& cube, std::size_t member, const Matrix& probs) {
  for (std::size_t i = 0; i < cube.n(); ++i) {
    auto row = cube.row(member, i);
    for (std::size_t y = 0; y < cube.c(); ++y) {
      row[y] = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y));
    }
  }
}

}  // namespace

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::forest: return "forest";
    case HeadKind::dropout_mlp: return "dropout_mlp";
    case HeadKind::laplace_mlp: return "laplace_mlp";
    case HeadKind::ensemble_mlp: return "ensemble_mlp";
  }
  return "unknown";
}

HeadKind head_kind_from_string(std::string_view name) {
  if (name == "forest") return HeadKind::forest;
  if (name == "dropout_mlp" || name == "dropout") return HeadKind::dropout_mlp;
  if (name == "laplace_mlp" || name == "laplace") return HeadKind::laplace_mlp;
  if (name == "ensemble_mlp" || name == "ensemble") return HeadKind::ensemble_mlp;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

void HeadConfig::validate() const {
  if (forest.trees < 1) throw ConfigError("head: trees must be >= 1");
  if (!(mlp.dropout_rate >= 0.0 && mlp.dropout_rate < 1.0)) throw ConfigError("head: dropout_rate must be in [0, 1)");
  if (mlp.members < 1) throw ConfigError("head: members must be >= 1");
  if (mlp.ensemble_size < 1) throw ConfigError("head: ensemble_size must be >= 1");
  if (!(train.learning_rate > 0.0) || train.max_steps < 1 || train.patience_steps < 1 || !(train.l2_weight > 0.0)) {
    throw ConfigError("head: training settings must be positive");
  }
  for (std::size_t h : mlp.hidden_layers) {
    if (h == 0) throw ConfigError("head: hidden layer widths must be positive");
  }
}

std::size_t FittedHead::member_count(std::size_t k_requested) const {
  switch (kind()) {
    case HeadKind::forest: return std::get<RandomForest>(state_).size();
    case HeadKind::ensemble_mlp: return std::get<std::vector<Mlp>>(state_).size();
    default: return k_requested;
  }
}

ProbCube FittedHead::predict_members(const Matrix& x, std::size_t k_requested, std::uint64_t seed) const {
  if (static_cast<std::size_t>(x.cols()) != dim_) {
    throw ShapeError("head expects " + std::to_string(dim_) + " features, got " + std::to_string(x.cols()));
  }
  const auto n = static_cast<std::size_t>(x.rows());
  const auto C = static_cast<std::size_t>(classes_);
  switch (kind()) {
    case HeadKind::forest:
      return std::get<RandomForest>(state_).predict_members(x);
    case HeadKind::dropout_mlp: {
      const Mlp& net = std::get<Mlp>(state_);
      const double rate = config_.mlp.dropout_rate;
      ProbCube cube(k_requested, n, C);
      if (rate == 0.0) {
        const Matrix probs = net.predict(x);
        for (std::size_t m = 0; m < k_requested; ++m) copy_member(cube, m, probs);
        return cube;
      }
      for (std::size_t m = 0; m < k_requested; ++m) {
        Rng rng(derive_seed(seed, kMaskStream, m));
        const DropoutMasks masks = net.sample_masks(rate, 1, rng);
        copy_member(cube, m, net.predict(x, &masks));
      }
      return cube;
    }
    case HeadKind::laplace_mlp: {
      const auto& post = std::get<LaplacePosterior>(state_);
      ProbCube cube(k_requested, n, C);
      std::vector<double> theta(post.net.parameter_count());
      for (std::size_t m = 0; m < k_requested; ++m) {
        Rng rng(derive_seed(seed, kPosteriorStream, m));
        for (std::size_t j = 0; j < theta.size(); ++j) {
          theta[j] = post.net.params()[j] + std::sqrt(post.variance[j]) * rng.normal();
        }
        copy_member(cube, m, post.net.predict(x, nullptr, theta));
      }
      return cube;
    }
    case HeadKind::ensemble_mlp: {
      const auto& nets = std::get<std::vector<Mlp>>(state_);
      ProbCube cube(nets.size(), n, C);
      for (std::size_t m = 0; m < nets.size(); ++m) copy_member(cube, m, nets[m].predict(x));
      return cube;
    }
  }
  throw StateError("unknown head kind");
}

std::string FittedHead::serialize() const {
  Writer w;
  w.bytes("HEAD", 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind()));
  w.i32(classes_);
  w.u64(dim_);
  // config echo
  w.u64(config_.forest.trees);
  w.u64(config_.forest.max_features);
  w.u32(config_.forest.bootstrap ? 1 : 0);
  w.u64(config_.mlp.hidden_layers.size());
  for (std::size_t h : config_.mlp.hidden_layers) w.u64(h);
  w.f64(config_.mlp.dropout_rate);
  w.u64(config_.mlp.members);
  w.u64(config_.mlp.ensemble_size);
  w.f64(config_.train.learning_rate);
  w.u64(config_.train.max_steps);
  w.u64(config_.train.patience_steps);
  w.f64(config_.train.l2_weight);

  switch (kind()) {
    case HeadKind::forest: {
      const auto& forest = std::get<RandomForest>(state_);
      w.u64(forest.dim());
      w.u64(forest.size());
      for (std::size_t t = 0; t < forest.size(); ++t) {
        const auto& tree = forest.tree(t);
        w.u64(tree.nodes().size());
        for (const auto& node : tree.nodes()) {
          w.i32(node.feature);
          w.f64(node.threshold);
          w.i32(node.left);
          w.i32(node.right);
          w.i32(node.leaf);
        }
        w.f64s(tree.leaf_distributions());
      }
      break;
    }
    case HeadKind::dropout_mlp:
      write_mlp(w, std::get<Mlp>(state_));
      break;
    case HeadKind::laplace_mlp: {
      const auto& post = std::get<LaplacePosterior>(state_);
      write_mlp(w, post.net);
      w.f64s(post.variance);
      break;
    }
    case HeadKind::ensemble_mlp: {
      const auto& nets = std::get<std::vector<Mlp>>(state_);
      w.u64(nets.size());
      for (const auto& net : nets) write_mlp(w, net);
      break;
    }
  }
  return w.take();
}

FittedHead FittedHead::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(4) != "HEAD") throw FormatError("head blob: bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("head blob: unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  const std::uint32_t kind_raw = r.u32();
  if (kind_raw > static_cast<std::uint32_t>(HeadKind::ensemble_mlp)) {
    throw FormatError("head blob: unknown head kind at byte offset 8");
  }
  HeadConfig config;
  config.kind = static_cast<HeadKind>(kind_raw);
  const int classes = r.i32();
  const auto dim = static_cast<std::size_t>(r.u64());
  config.forest.trees = static_cast<std::size_t>(r.u64());
  config.forest.max_features = static_cast<std::size_t>(r.u64());
  config.forest.bootstrap = r.u32() != 0;
  config.mlp.hidden_layers.resize(r.count(8));
  for (auto& h : config.mlp.hidden_layers) h = static_cast<std::size_t>(r.u64());
  config.mlp.dropout_rate = r.f64();
  config.mlp.members = static_cast<std::size_t>(r.u64());
  config.mlp.ensemble_size = static_cast<std::size_t>(r.u64());
  config.train.learning_rate = r.f64();
  config.train.max_steps = static_cast<std::size_t>(r.u64());
  config.train.patience_steps = static_cast<std::size_t>(r.u64());
  config.train.l2_weight = r.f64();

  State state;
  switch (config.kind) {
    case HeadKind::forest: {
      const auto forest_dim = static_cast<std::size_t>(r.u64());
      std::vector<DecisionTree> trees(r.count(8));
      for (auto& tree : trees) {
        std::vector<DecisionTree::Node> nodes(r.count(24));
        for (auto& node : nodes) {
          node.feature = r.i32();
          node.threshold = r.f64();
          node.left = r.i32();
          node.right = r.i32();
          node.leaf = r.i32();
        }
        tree = DecisionTree::from_parts(classes, std::move(nodes), r.f64s());
      }
      state = RandomForest(std::move(trees), forest_dim);
      break;
    }
    case HeadKind::dropout_mlp:
      state = read_mlp(r);
      break;
    case HeadKind::laplace_mlp: {
      LaplacePosterior post{read_mlp(r), {}};
      post.variance = r.f64s();
      if (post.variance.size() != post.net.parameter_count()) throw FormatError("head blob: variance size mismatch");
      state = std::move(post);
      break;
    }
    case HeadKind::ensemble_mlp: {
      std::vector<Mlp> nets(r.count(8));
      for (auto& net : nets) net = read_mlp(r);
      state = std::move(nets);
      break;
    }
  }
  if (!r.done()) throw FormatError("head blob: trailing bytes at byte offset " + std::to_string(r.pos()));
  return FittedHead(std::move(config), std::move(state), classes, dim);
}

FittedHead fit(const HeadConfig& config, const Dataset& train, int classes, const Dataset* validation,
               std::uint64_t seed) {
  config.validate();
  if (train.x.rows() == 0) throw StateError("cannot fit a head on an empty training set");
  if (static_cast<std::size_t>(train.x.rows()) != train.y.size()) throw ShapeError("fit: label count mismatch");
  for (int label : train.y) {
    if (label < 0 || label >= classes) throw RangeError("fit: training label " + std::to_string(label) + " out of range");
  }
  if (!train.x.allFinite()) throw DataError("fit: non-finite training features");
  const auto dim = static_cast<std::size_t>(train.x.cols());

  switch (config.kind) {
    case HeadKind::forest:
      return FittedHead(config, RandomForest::fit(config.forest, train.x, train.y, classes, seed), classes, dim);
    case HeadKind::dropout_mlp:
      return FittedHead(config,
                        train_network(config, train, classes, validation, config.mlp.dropout_rate,
                                      derive_seed(seed, kNetStream, 0)),
                        classes, dim);
    case HeadKind::laplace_mlp: {
      Mlp net = train_network(config, train, classes, validation, 0.0, derive_seed(seed, kNetStream, 0));
      const std::vector<double> fisher = net.diagonal_fisher(train.x, train.y);
      // Tempered likelihood: the Fisher term is scaled by the parameter count.
      const auto temperature = static_cast<double>(net.parameter_count());
      std::vector<double> variance(fisher.size());
      for (std::size_t j = 0; j < fisher.size(); ++j) variance[j] = 1.0 / (1.0 + temperature * fisher[j]);
      return FittedHead(config, LaplacePosterior{std::move(net), std::move(variance)}, classes, dim);
    }
    case HeadKind::ensemble_mlp: {
      std::vector<Mlp> nets;
      for (std::size_t m = 0; m < config.mlp.ensemble_size; ++m) {
        nets.push_back(train_network(config, train, classes, validation, 0.0, derive_seed(seed, kNetStream, m)));
      }
      return FittedHead(config, std::move(nets), classes, dim);
    }
  }
  throw ConfigError("unknown head kind");
}

double gradient_check(const HeadConfig& config, const Dataset& data, int classes, std::uint64_t seed) {
  if (!config.is_neural()) throw ConfigError("gradient_check needs a neural head");
  Mlp net = make_network(config, static_cast<std::size_t>(data.x.cols()), classes);
  if (net.parameter_count() > 200) {
    throw ConfigError("gradient_check is limited to heads with <= 200 parameters (got " +
                      std::to_string(net.parameter_count()) + ")");
  }
  Rng rng(seed);
  net.initialize(rng);
  return gradient_deviation(net, data.x, data.y, config.train.l2_weight);
}

}  // namespace epiglab

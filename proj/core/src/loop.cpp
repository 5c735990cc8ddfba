#include "epiglab/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kHumanInitStream = 0x48554d;
constexpr std::uint64_t kSelectStream = 0x53454c;
constexpr std::uint64_t kPredictStream = 0x50524544;
constexpr std::uint64_t kTargetStream = 0x544752;
constexpr std::uint64_t kFitStream = 0x464954;
constexpr std::uint64_t kEvalStream = 0x4556414c;
constexpr std::uint64_t kProbCoverStream = 0x50524f42;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename E>
[[noreturn]] void rethrow_with_step(const E& e, std::size_t step) {
  throw E("step " + std::to_string(step) + ": " + e.what());
}

}  // namespace

void LoopConfig::validate() const {
  head.validate();
  if (budget < 1) throw ConfigError("loop: budget must be >= 1");
  if (batch < 1) throw ConfigError("loop: batch must be >= 1");
  if (eval_every < 1) throw ConfigError("loop: eval_every must be >= 1");
  if (members < 1) throw ConfigError("loop: members must be >= 1");
  if (method == Method::epig && target_samples < 1) throw ConfigError("loop: target_samples must be >= 1 for EPIG");
}

const EmbeddingTable& DataBundle::features(FeatureSource source) const {
  const auto& table = source == FeatureSource::raw ? raw : latent;
  if (!table) throw ConfigError("no " + to_string(source) + " embeddings in the data bundle");
  return *table;
}

DataBundle load_bundle(const std::string& latent_path, const std::string& raw_path, const std::string& labels_path,
                       std::optional<int> classes) {
  DataBundle bundle;
  if (!latent_path.empty()) bundle.latent = std::make_shared<const EmbeddingTable>(load_embeddings(latent_path));
  if (!raw_path.empty()) bundle.raw = std::make_shared<const EmbeddingTable>(load_embeddings(raw_path));
  const std::size_t n = bundle.latent ? bundle.latent->n() : (bundle.raw ? bundle.raw->n() : 0);
  if (bundle.latent && bundle.raw && bundle.raw->n() != n) throw ShapeError("latent and raw tables differ in n");
  if (!labels_path.empty()) {
    bundle.oracle = load_labels(labels_path, classes);
    if (bundle.oracle.size() != n) {
      throw ShapeError("label file holds " + std::to_string(bundle.oracle.size()) + " entries, embeddings hold " +
                       std::to_string(n));
    }
  } else {
    if (!classes) throw ConfigError("without a label file the class count must be configured");
    bundle.oracle = LabelVector(*classes, std::vector<int>(n, LabelVector::kUnknown));
  }
  return bundle;
}

std::string to_string(FeatureSource source) { return source == FeatureSource::raw ? "raw" : "latent"; }

FeatureSource feature_source_from_string(std::string_view name) {
  if (name == "latent") return FeatureSource::latent;
  if (name == "raw") return FeatureSource::raw;
  throw ConfigError("unknown feature source '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

EvalResult evaluate_marginal(const Matrix& marginal, std::span<const int> test_y, const TaskSpec& task) {
  if (test_y.empty()) throw ConfigError("evaluate: empty test set");
  const auto columns = task.restricts_evaluation() ? static_cast<Eigen::Index>(task.classes_of_interest.size())
                                                   : marginal.cols();
  double correct = 0.0;
  double nll = 0.0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    const int label = test_y[i];
    if (label < 0 || label >= columns) {
      throw ConfigError("evaluate: test label " + std::to_string(label) + " outside the evaluated classes");
    }
    auto row = marginal.row(static_cast<Eigen::Index>(i)).head(columns);
    const double mass = row.sum();
    Eigen::Index best = 0;
    for (Eigen::Index y = 1; y < columns; ++y) {
      if (row(y) > row(best)) best = y;
    }
    correct += best == label ? 1.0 : 0.0;
    const double p = mass > 0.0 ? row(label) / mass : 1.0 / static_cast<double>(columns);
    nll -= std::log(std::max(p, kLogClamp));
  }
  const auto n = static_cast<double>(test_y.size());
  return {correct / n, nll / n};
}

EvalResult evaluate(const FittedHead& head, const Matrix& test_x, std::span<const int> test_y, const TaskSpec& task,
                    std::size_t members, std::uint64_t seed) {
  if (test_y.empty()) throw ConfigError("evaluate: empty test set");
  return evaluate_marginal(marginal_predictive(head.predict_members(test_x, members, seed)), test_y, task);
}

// ---------------------------------------------------------------------------

ActiveLearner::ActiveLearner(LoopConfig config, std::shared_ptr<const DataBundle> data, std::uint64_t seed)
    : config_(std::move(config)), data_(std::move(data)), seed_(seed) {
  config_.validate();
  const EmbeddingTable& table = features();
  if (data_->oracle.size() != table.n()) throw ShapeError("oracle label count does not match the embedding table");
  if (config_.task.classes_of_interest.empty()) {
    auto names = std::move(config_.task.class_names);
    config_.task = TaskSpec::all_classes(data_->oracle.classes());
    config_.task.class_names = std::move(names);
  }
  config_.task.validate(data_->oracle.classes());
  task_oracle_ = apply_task(data_->oracle, config_.task);
  revealed_ = LabelVector(task_oracle_.classes(), std::vector<int>(table.n(), LabelVector::kUnknown));

  if (data_->split) {
    split_ = *data_->split;
  } else {
    std::optional<std::vector<int>> eval_classes;
    if (config_.task.restricts_evaluation()) {
      eval_classes.emplace(config_.task.classes_of_interest.size());
      std::iota(eval_classes->begin(), eval_classes->end(), 0);
    }
    split_ = epiglab::split(table.n(), config_.split, task_oracle_, config_.split_seed.value_or(seed_), eval_classes);
  }
  pool_ = split_.pool;
  if (config_.head.is_neural() && split_.validation.empty()) {
    throw ConfigError("a neural head needs a non-empty validation split for early stopping");
  }
  if (config_.method == Method::epig && split_.target.empty()) throw ConfigError("EPIG needs a non-empty target split");
  if (config_.budget < init_size()) {
    throw ConfigError("budget " + std::to_string(config_.budget) + " is smaller than the initial label count " +
                      std::to_string(init_size()));
  }
  record_.seed = seed_;
  record_.method = to_string(config_.method);
  record_.config_json = loop_config_to_json(config_);
}

std::size_t ActiveLearner::init_size() const {
  return config_.init_per_class * static_cast<std::size_t>(task_oracle_.classes());
}

double ActiveLearner::seconds_since(std::chrono::steady_clock::time_point start) const {
  if (!config_.timing) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void ActiveLearner::initialize_from_oracle() {
  if (phase_ != Phase::initial || !train_.empty()) throw StateError("learner already initialised");
  const auto start = std::chrono::steady_clock::now();
  auto init = stratified_init(task_oracle_, config_.init_per_class, pool_, derive_seed(seed_, kInitStream));
  for (std::size_t idx : init) revealed_.set(idx, task_oracle_[idx]);
  train_ = init;
  std::erase_if(pool_, [&](std::size_t i) { return revealed_.known(i); });
  refit_and_record({}, seconds_since(start));
  phase_ = train_.size() >= config_.budget || pool_.empty() ? Phase::done : Phase::active;
}

const std::vector<std::size_t>& ActiveLearner::pending() {
  if (phase_ == Phase::done) {
    pending_.clear();
    return pending_;
  }
  if (pending_.empty()) {
    if (phase_ == Phase::initial) {
      // No oracle to stratify with: uniform draws until the initial set is full.
      if (pool_.empty()) throw StateError("pool exhausted during initialisation");
      Rng rng(derive_seed(seed_, kHumanInitStream, train_.size()));
      pending_ = {pool_[rng.uniform_index(pool_.size())]};
      pending_seconds_ = 0.0;
    } else {
      const auto start = std::chrono::steady_clock::now();
      try {
        select_next();
      } catch (const ScoringError& e) {
        rethrow_with_step(e, step_ + 1);
      } catch (const ShapeError& e) {
        rethrow_with_step(e, step_ + 1);
      } catch (const ConfigError& e) {
        rethrow_with_step(e, step_ + 1);
      }
      pending_seconds_ = seconds_since(start);
    }
  }
  return pending_;
}

void ActiveLearner::select_next() {
  const std::size_t step = step_ + 1;
  const std::size_t batch = std::min({config_.batch, config_.budget - train_.size(), pool_.size()});
  const std::uint64_t select_seed = derive_seed(seed_, kSelectStream, step);
  const EmbeddingTable& table = features();

  auto score_and_pick = [&](const ScoreVector& scores) {
    if (config_.keep_scores) {
      for (std::size_t p = 0; p < pool_.size(); ++p) record_.scores.push_back({step, pool_[p], scores[p]});
    }
    pending_ = select_top(scores, pool_, batch, select_seed);
  };

  switch (config_.method) {
    case Method::random:
      pending_ = random_select(pool_, batch, select_seed);
      break;
    case Method::bald:
    case Method::max_entropy: {
      const ProbCube cube =
          head_->predict_members(gather(table, pool_), config_.members, derive_seed(seed_, kPredictStream, step));
      score_and_pick(config_.method == Method::bald ? bald_scores(cube) : max_entropy_scores(cube));
      break;
    }
    case Method::epig: {
      Rng rng(derive_seed(seed_, kTargetStream, step));
      const auto targets = rng.sample(split_.target, std::min(config_.target_samples, split_.target.size()));
      const std::uint64_t member_seed = derive_seed(seed_, kPredictStream, step);
      const ProbCube pool_cube = head_->predict_members(gather(table, pool_), config_.members, member_seed);
      const ProbCube target_cube = head_->predict_members(gather(table, targets), config_.members, member_seed);
      score_and_pick(epig_scores(pool_cube, target_cube));
      break;
    }
    case Method::kcentre:
      pending_ = kcentre_select(table, train_, pool_, batch);
      break;
    case Method::kmeans:
      pending_ = kmeans_select(table, pool_, batch, select_seed);
      break;
    case Method::typiclust:
      pending_ = typiclust_select(table, train_, pool_, batch, select_seed);
      break;
    case Method::probcover: {
      if (!probcover_radius_) {
        if (config_.probcover.radius > 0.0) {
          probcover_radius_ = config_.probcover.radius;
        } else {
          std::vector<std::size_t> rows = train_;
          rows.insert(rows.end(), pool_.begin(), pool_.end());
          ProbCoverConfig tuning = config_.probcover;
          tuning.seed = derive_seed(seed_, kProbCoverStream);
          probcover_radius_ = probcover_tune_radius(table, rows, task_oracle_.classes(), tuning).radius;
        }
      }
      pending_ = probcover_select(table, train_, pool_, batch, *probcover_radius_);
      break;
    }
  }
}

void ActiveLearner::submit(std::span<const std::size_t> indices, std::span<const int> labels) {
  if (phase_ == Phase::done) throw StateError("labelling budget exhausted");
  const auto& expected = pending();
  if (indices.size() != labels.size()) throw ShapeError("submit: index and label counts differ");
  if (!std::equal(indices.begin(), indices.end(), expected.begin(), expected.end())) {
    throw StateError("submitted indices are not the pending query");
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= revealed_.classes()) {
      throw RangeError("label " + std::to_string(labels[j]) + " for index " + std::to_string(indices[j]) +
                       " outside [0, " + std::to_string(revealed_.classes()) + ")");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> acquired(indices.begin(), indices.end());
  for (std::size_t j = 0; j < acquired.size(); ++j) {
    revealed_.set(acquired[j], labels[j]);
    train_.push_back(acquired[j]);
  }
  std::erase_if(pool_, [&](std::size_t i) { return revealed_.known(i); });
  pending_.clear();

  if (phase_ == Phase::initial) {
    if (train_.size() < init_size()) return;
    refit_and_record({}, seconds_since(start));
  } else {
    ++step_;
    refit_and_record(std::move(acquired), pending_seconds_ + seconds_since(start));
  }
  phase_ = train_.size() >= config_.budget || pool_.empty() ? Phase::done : Phase::active;
}

void ActiveLearner::submit_from_oracle() {
  const std::vector<std::size_t> indices = pending();
  std::vector<int> labels;
  for (std::size_t idx : indices) {
    if (!task_oracle_.known(idx)) {
      throw DataError("step " + std::to_string(step_ + 1) + ": oracle has no label for selected index " +
                      std::to_string(idx));
    }
    labels.push_back(task_oracle_[idx]);
  }
  submit(indices, labels);
}

void ActiveLearner::refit_and_record(std::vector<std::size_t> acquired, double elapsed) {
  const auto start = std::chrono::steady_clock::now();
  const EmbeddingTable& table = features();
  Dataset train{gather(table, train_), gather(revealed_, train_)};
  std::vector<std::size_t> val_rows;
  for (std::size_t idx : split_.validation) {
    if (task_oracle_.known(idx)) val_rows.push_back(idx);
  }
  Dataset validation{gather(table, val_rows), gather(task_oracle_, val_rows)};
  head_.emplace(fit(config_.head, train, revealed_.classes(), &validation, derive_seed(seed_, kFitStream, step_)));

  StepRow row;
  row.step = step_;
  row.train_size = train_.size();
  row.acquired = std::move(acquired);
  for (std::size_t idx : row.acquired) row.acquired_classes.push_back(revealed_[idx]);

  const bool last = train_.size() >= config_.budget || pool_.empty();
  if (step_ % config_.eval_every == 0 || last) {
    std::vector<std::size_t> test_rows;
    for (std::size_t idx : split_.test) {
      if (task_oracle_.known(idx)) test_rows.push_back(idx);
    }
    if (!test_rows.empty()) {
      const EvalResult eval = evaluate(*head_, gather(table, test_rows), gather(task_oracle_, test_rows), config_.task,
                                       config_.members, derive_seed(seed_, kEvalStream, step_));
      row.accuracy = eval.accuracy;
      row.nll = eval.nll;
    }
  }
  row.seconds = config_.timing ? elapsed + seconds_since(start) : 0.0;
  record_.rows.push_back(std::move(row));
}

RunRecord run(const LoopConfig& config, std::shared_ptr<const DataBundle> data, std::uint64_t seed) {
  ActiveLearner learner(config, std::move(data), seed);
  learner.initialize_from_oracle();
  while (!learner.done()) learner.submit_from_oracle();
  return learner.record();
}

// ---------------------------------------------------------------------------

CurveSummary aggregate(const std::vector<RunRecord>& records) {
  if (records.size() < 2) throw AggregationError("aggregate needs at least two records");
  auto grid_of = [](const RunRecord& r) {
    std::vector<std::size_t> grid;
    for (const auto& row : r.rows) {
      if (!std::isnan(row.accuracy)) grid.push_back(row.train_size);
    }
    return grid;
  };
  const auto grid = grid_of(records.front());
  for (const auto& r : records) {
    if (grid_of(r) != grid) throw AggregationError("records were evaluated at different budget points");
  }
  CurveSummary summary;
  const auto seeds = static_cast<double>(records.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> values;
    for (const auto& r : records) {
      std::size_t seen = 0;
      for (const auto& row : r.rows) {
        if (std::isnan(row.accuracy)) continue;
        if (seen++ == g) {
          values.push_back(row.accuracy);
          break;
        }
      }
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / seeds;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (seeds - 1.0));
    summary.push_back({grid[g], mean, sd / std::sqrt(seeds)});
  }
  return summary;
}

std::vector<double> class_histogram(const std::vector<RunRecord>& records, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  if (records.empty()) return counts;
  for (const auto& r : records) {
    for (const auto& row : r.rows) {
      for (int c : row.acquired_classes) {
        if (c < 0 || c >= classes) throw RangeError("class_histogram: class " + std::to_string(c) + " out of range");
        counts[static_cast<std::size_t>(c)] += 1.0;
      }
    }
  }
  for (double& c : counts) c /= static_cast<double>(records.size());
  return counts;
}

double step_timing(const std::vector<RunRecord>& records) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& r : records) {
    for (const auto& row : r.rows) {
      if (row.step == 0) continue;
      total += row.seconds;
      ++steps;
    }
  }
  if (steps == 0) throw TimingError("no acquisition steps were recorded");
  return total / static_cast<double>(steps);
}

// ---------------------------------------------------------------------------

void write_record_csv(std::ostream& out, const RunRecord& record, bool header) {
  if (header) out << "seed,step,train_size,acquired_index,acquired_class,accuracy,nll,step_seconds\n";
  for (const auto& row : record.rows) {
    std::string indices, classes;
    for (std::size_t j = 0; j < row.acquired.size(); ++j) {
      if (j > 0) {
        indices += ';';
        classes += ';';
      }
      indices += std::to_string(row.acquired[j]);
      classes += std::to_string(row.acquired_classes[j]);
    }
    out << record.seed << ',' << row.step << ',' << row.train_size << ',' << indices << ',' << classes << ','
        << format_number(row.accuracy) << ',' << format_number(row.nll) << ',' << format_number(row.seconds) << '\n';
  }
}

std::string record_to_json(const RunRecord& record) {
  nlohmann::json j;
  j["seed"] = record.seed;
  j["method"] = record.method;
  j["config"] = record.config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(record.config_json);
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& row : record.rows) {
    nlohmann::json r;
    r["step"] = row.step;
    r["train_size"] = row.train_size;
    r["acquired_index"] = row.acquired;
    r["acquired_class"] = row.acquired_classes;
    r["accuracy"] = std::isnan(row.accuracy) ? nlohmann::json(nullptr) : nlohmann::json(row.accuracy);
    r["nll"] = std::isnan(row.nll) ? nlohmann::json(nullptr) : nlohmann::json(row.nll);
    r["step_seconds"] = row.seconds;
    rows.push_back(std::move(r));
  }
  return j.dump(2);
}

void write_summary_csv(std::ostream& out, const CurveSummary& summary) {
  out << "train_size,mean_accuracy,stderr\n";
  for (const auto& p : summary) {
    out << p.train_size << ',' << format_number(p.mean_accuracy) << ',' << format_number(p.stderr_accuracy) << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const std::vector<double>& histogram, const std::vector<std::string>& names) {
  out << "class,mean_count\n";
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    out << (c < names.size() ? names[c] : std::to_string(c)) << ',' << format_number(histogram[c]) << '\n';
  }
}

std::string loop_config_to_json(const LoopConfig& config) {
  nlohmann::json j;
  j["method"] = to_string(config.method);
  j["budget"] = config.budget;
  j["init_per_class"] = config.init_per_class;
  j["batch"] = config.batch;
  j["eval_every"] = config.eval_every;
  j["feature_source"] = to_string(config.feature_source);
  j["target_samples"] = config.target_samples;
  j["members"] = config.members;
  j["split"] = {{"target", config.split.target}, {"validation", config.split.validation}, {"test", config.split.test}};
  if (config.split_seed) j["split_seed"] = *config.split_seed;
  j["task"] = {{"classes_of_interest", config.task.classes_of_interest},
               {"group_rest_as_other", config.task.group_rest_as_other},
               {"class_names", config.task.class_names}};
  const auto& h = config.head;
  j["head"] = {{"kind", to_string(h.kind)},
               {"trees", h.forest.trees},
               {"max_features", h.forest.max_features},
               {"bootstrap", h.forest.bootstrap},
               {"hidden_layers", h.mlp.hidden_layers},
               {"dropout_rate", h.mlp.dropout_rate},
               {"members", h.mlp.members},
               {"ensemble_size", h.mlp.ensemble_size},
               {"learning_rate", h.train.learning_rate},
               {"max_steps", h.train.max_steps},
               {"patience_steps", h.train.patience_steps},
               {"l2_weight", h.train.l2_weight}};
  j["probcover"] = {{"radius", config.probcover.radius},
                    {"purity_target", config.probcover.purity_target},
                    {"grid", config.probcover.grid}};
  return j.dump();
}

}  // namespace epiglab

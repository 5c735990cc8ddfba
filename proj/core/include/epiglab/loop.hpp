#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "epiglab/acquisition.hpp"
#include "epiglab/data.hpp"
#include "epiglab/heads.hpp"

namespace epiglab {

enum class FeatureSource { latent, raw };

struct LoopConfig {
  HeadConfig head;
  Method method = Method::random;
  std::size_t budget = 300;  // total labels revealed, initial labels included
  std::size_t init_per_class = 2;
  std::size_t batch = 1;
  std::vector<std::uint64_t> seeds;
  TaskSpec task;  // empty classes_of_interest = every class
  FeatureSource feature_source = FeatureSource::latent;
  std::size_t eval_every = 1;
  SplitSizes split;
  std::optional<std::uint64_t> split_seed;  // defaults to the run seed
  std::size_t target_samples = 100;          // EPIG targets redrawn each step
  std::size_t members = 100;                 // sampled members for neural heads
  ProbCoverConfig probcover;
  bool timing = true;       // false records 0 for step_seconds
  bool keep_scores = false;

  void validate() const;
};

/// Everything a run reads. Embedding tables are shared, never re-read.
struct DataBundle {
  std::shared_ptr<const EmbeddingTable> latent;
  std::shared_ptr<const EmbeddingTable> raw;
  LabelVector oracle;  // source label space
  std::optional<AssetStore> assets;
  std::optional<SplitSpec> split;  // fixed split; otherwise drawn per run

  const EmbeddingTable& features(FeatureSource source) const;
};

/// Loads the tables and labels once.
DataBundle load_bundle(const std::string& latent_path, const std::string& raw_path, const std::string& labels_path,
                       std::optional<int> classes = std::nullopt);

struct StepRow {
  std::size_t step = 0;
  std::size_t train_size = 0;
  std::vector<std::size_t> acquired;
  std::vector<int> acquired_classes;  // task space
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double nll = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct ScoreRow {
  std::size_t step;
  std::size_t index;
  double score;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::string method;
  std::string config_json;  // config echo
  std::vector<StepRow> rows;
  std::vector<ScoreRow> scores;
};

struct EvalResult {
  double accuracy;
  double nll;
};

/// Accuracy and mean NLL of the marginal predictive. With a grouping task,
/// predictions are restricted to the classes of interest and renormalised.
EvalResult evaluate(const FittedHead& head, const Matrix& test_x, std::span<const int> test_y, const TaskSpec& task,
                    std::size_t members, std::uint64_t seed);
EvalResult evaluate_marginal(const Matrix& marginal, std::span<const int> test_y, const TaskSpec& task);

/// Step-by-step active learner. run() drives it against the oracle; the
/// labelling server drives it one human label at a time.
class ActiveLearner {
 public:
  enum class Phase { initial, active, done };

  ActiveLearner(LoopConfig config, std::shared_ptr<const DataBundle> data, std::uint64_t seed);

  /// Reveals a stratified initial set from the oracle and fits the first head.
  void initialize_from_oracle();

  Phase phase() const { return phase_; }
  bool done() const { return phase_ == Phase::done; }

  /// Next indices to label (selected lazily, cached until labelled). During
  /// the initial phase without an oracle this is a uniform random pool draw.
  const std::vector<std::size_t>& pending();

  /// Records labels (task space) for the pending indices, refits and
  /// evaluates. Throws StateError if `indices` are not the pending ones.
  void submit(std::span<const std::size_t> indices, std::span<const int> labels);

  /// Convenience for the oracle-driven loop.
  void submit_from_oracle();

  const RunRecord& record() const { return record_; }
  const LoopConfig& config() const { return config_; }
  const SplitSpec& split() const { return split_; }
  const LabelVector& task_oracle() const { return task_oracle_; }
  const LabelVector& revealed() const { return revealed_; }
  const std::vector<std::size_t>& train_indices() const { return train_; }
  const std::vector<std::size_t>& pool_indices() const { return pool_; }
  std::size_t step() const { return step_; }
  std::size_t init_size() const;
  const EmbeddingTable& features() const { return data_->features(config_.feature_source); }
  const DataBundle& data() const { return *data_; }

 private:
  void select_next();
  void refit_and_record(std::vector<std::size_t> acquired, double elapsed);
  double seconds_since(std::chrono::steady_clock::time_point start) const;

  LoopConfig config_;
  std::shared_ptr<const DataBundle> data_;
  std::uint64_t seed_;
  LabelVector task_oracle_;
  LabelVector revealed_;
  SplitSpec split_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> pending_;
  double pending_seconds_ = 0.0;
  std::optional<FittedHead> head_;
  std::optional<double> probcover_radius_;
  Phase phase_ = Phase::initial;
  std::size_t step_ = 0;
  RunRecord record_;
};

/// Full oracle-driven run for one seed.
RunRecord run(const LoopConfig& config, std::shared_ptr<const DataBundle> data, std::uint64_t seed);

struct CurvePoint {
  std::size_t train_size;
  double mean_accuracy;
  double stderr_accuracy;
};

using CurveSummary = std::vector<CurvePoint>;

/// Mean and standard error (sample sd / sqrt(seeds)) of accuracy at every
/// evaluated budget point. Throws AggregationError on fewer than two records
/// or mismatched grids.
CurveSummary aggregate(const std::vector<RunRecord>& records);

/// Mean count of acquired labels per task class (initial labels excluded).
std::vector<double> class_histogram(const std::vector<RunRecord>& records, int classes);

/// Mean wall time of the acquisition steps. Throws TimingError when there are none.
double step_timing(const std::vector<RunRecord>& records);

std::string to_string(FeatureSource source);
FeatureSource feature_source_from_string(std::string_view name);

// -- emission ---------------------------------------------------------------

/// `seed,step,train_size,acquired_index,acquired_class,accuracy,nll,step_seconds`.
/// Multiple acquisitions in one step are joined with ';'; the initial row has
/// empty acquisition fields.
void write_record_csv(std::ostream& out, const RunRecord& record, bool header = true);
std::string record_to_json(const RunRecord& record);
/// `train_size,mean_accuracy,stderr`
void write_summary_csv(std::ostream& out, const CurveSummary& summary);
/// `class,mean_count`
void write_histogram_csv(std::ostream& out, const std::vector<double>& histogram,
                         const std::vector<std::string>& names = {});
std::string loop_config_to_json(const LoopConfig& config);

}  // namespace epiglab

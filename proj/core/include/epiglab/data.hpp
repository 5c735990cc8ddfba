#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace epiglab {

/// Fixed encoder outputs, one row per example, stored row-major as f32.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Throws DataError naming the row of the first non-finite value.
  EmbeddingTable(std::size_t n, std::size_t d, std::vector<float> values);

  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * d_, d_}; }
  std::span<const float> values() const { return values_; }

  bool operator==(const EmbeddingTable&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<float> values_;
};

/// Class index per example; kUnknown marks an example whose label has not
/// been revealed (or does not exist).
class LabelVector {
 public:
  static constexpr int kUnknown = -1;

  LabelVector() = default;
  /// Throws RangeError naming the first entry outside {0..classes-1} ∪ {kUnknown}.
  LabelVector(int classes, std::vector<int> entries);

  std::size_t size() const { return entries_.size(); }
  int classes() const { return classes_; }
  int operator[](std::size_t i) const { return entries_[i]; }
  bool known(std::size_t i) const { return entries_[i] != kUnknown; }
  std::span<const int> entries() const { return entries_; }
  std::size_t unknown_count() const;

  /// Sets entry i; same validation as the constructor.
  void set(std::size_t i, int label);

  bool operator==(const LabelVector&) const = default;

 private:
  int classes_ = 0;
  std::vector<int> entries_;
};

struct TaskSpec {
  std::vector<int> classes_of_interest;
  bool group_rest_as_other = false;
  std::vector<std::string> class_names;

  /// Identity task over `classes` classes.
  static TaskSpec all_classes(int classes);

  int effective_classes() const {
    return static_cast<int>(classes_of_interest.size()) + (group_rest_as_other ? 1 : 0);
  }
  /// True when evaluation restricts predictions to the classes of interest.
  bool restricts_evaluation() const { return group_rest_as_other; }
  /// Throws ConfigError unless the task is usable with `source_classes` classes.
  void validate(int source_classes) const;
  /// Display names for the effective classes, synthesised when absent.
  std::vector<std::string> effective_names() const;
};

/// Remaps labels into the task's class space. Classes of interest map to
/// 0..m-1 in the given order; everything else maps to m when grouping.
LabelVector apply_task(const LabelVector& labels, const TaskSpec& task);

struct SplitSizes {
  std::size_t target = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct SplitSpec {
  std::vector<std::size_t> pool;
  std::vector<std::size_t> target;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  bool operator==(const SplitSpec&) const = default;
};

/// Seeded disjoint split. Validation and test are class-stratified over known
/// labels; target is a uniform draw; the remainder is the pool. When
/// `eval_classes` is given, target and test are drawn only from examples whose
/// label is in that set.
SplitSpec split(std::size_t n, const SplitSizes& sizes, const LabelVector& labels, std::uint64_t seed,
                const std::optional<std::vector<int>>& eval_classes = std::nullopt);

/// Draws exactly `per_class` pool indices from every class of `labels`.
/// Throws DataError naming the first class with too few pool examples.
std::vector<std::size_t> stratified_init(const LabelVector& labels, std::size_t per_class,
                                         std::span<const std::size_t> pool, std::uint64_t seed);

// ---------------------------------------------------------------------------
// File formats
//
//   EMB1: "EMB1", u32-LE n, u32-LE d, n*d f32-LE row-major
//   LAB1: "LAB1", u32-LE n, u32-LE C, n i32-LE (-1 = unknown)
//   CSV : comma separated, no header, one row per example
// ---------------------------------------------------------------------------

/// Loads EMB1 (detected by magic) or CSV. Each call bumps embedding_reads().
EmbeddingTable load_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

/// Loads LAB1 or CSV. For CSV, `classes` declares C (inferred as max+1 when
/// absent). For LAB1 a declared C must match the header.
LabelVector load_labels(const std::filesystem::path& path, std::optional<int> classes = std::nullopt);
void write_labels(const std::filesystem::path& path, const LabelVector& labels);

/// Writes to `<path>.tmp` then renames over `path`.
void write_atomically(const std::filesystem::path& path, const std::string& bytes);

/// Process-wide count of load_embeddings calls.
std::size_t embedding_reads();

struct SyntheticSpec {
  int classes = 3;
  std::size_t per_class = 100;
  std::size_t latent_dim = 8;
  std::size_t raw_dim = 32;
  double noise_scale = 1.0;
  /// Minimum distance between class centres, in units of the (unit) cluster
  /// standard deviation.
  double separation = 6.0;
};

struct SyntheticData {
  EmbeddingTable latent;
  EmbeddingTable raw;
  LabelVector labels;
};

/// Class-conditional unit-variance Gaussian clusters in latent space; raw
/// features are a seeded random linear map of the latents plus isotropic noise
/// of scale noise_scale. Examples are interleaved by class (0,1,..,C-1,0,1,..).
SyntheticData make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Per-index payloads in a directory of `<index>.<ext>` files.
class AssetStore {
 public:
  struct Asset {
    std::filesystem::path path;
    std::string media_type;
  };

  AssetStore() = default;
  /// Scans `dir`; throws DataError if it is not a directory. Indices >= n
  /// (when n is given) are rejected.
  explicit AssetStore(const std::filesystem::path& dir, std::optional<std::size_t> n = std::nullopt);

  std::optional<Asset> find(std::size_t index) const;
  std::string read(std::size_t index) const;
  std::size_t size() const { return assets_.size(); }

  static std::string media_type_for(const std::filesystem::path& path);

 private:
  std::map<std::size_t, Asset> assets_;
};

}  // namespace epiglab

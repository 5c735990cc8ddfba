#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "epiglab/forest.hpp"
#include "epiglab/mlp.hpp"
#include "epiglab/prob_cube.hpp"

namespace epiglab {

enum class HeadKind { forest, dropout_mlp, laplace_mlp, ensemble_mlp };

std::string to_string(HeadKind kind);
/// Throws ConfigError for unknown names.
HeadKind head_kind_from_string(std::string_view name);

struct MlpSettings {
  std::vector<std::size_t> hidden_layers{128};
  double dropout_rate = 0.1;
  std::size_t members = 100;  // default member count for dropout / laplace sampling
  std::size_t ensemble_size = 5;
};

struct HeadConfig {
  HeadKind kind = HeadKind::forest;
  ForestSettings forest;
  MlpSettings mlp;
  TrainSettings train;

  bool is_neural() const { return kind != HeadKind::forest; }
  void validate() const;
};

struct Dataset {
  Matrix x;
  std::vector<int> y;
};

/// Diagonal Gaussian posterior around the trained weights.
struct LaplacePosterior {
  Mlp net;
  std::vector<double> variance;
};

/// A trained stochastic head. Immutable once fitted.
class FittedHead {
 public:
  using State = std::variant<RandomForest, Mlp, LaplacePosterior, std::vector<Mlp>>;

  FittedHead(HeadConfig config, State state, int classes, std::size_t dim)
      : config_(std::move(config)), state_(std::move(state)), classes_(classes), dim_(dim) {}

  const HeadConfig& config() const { return config_; }
  HeadKind kind() const { return config_.kind; }
  int classes() const { return classes_; }
  std::size_t dim() const { return dim_; }
  const State& state() const { return state_; }

  /// Number of members predict_members returns for a request of k.
  std::size_t member_count(std::size_t k_requested) const;

  /// Member predictive distributions. Forest members are its trees; dropout
  /// members are independent masks shared across all inputs; Laplace members
  /// are posterior draws; ensemble members are the networks. Member m is a
  /// function of (seed, m) only, so separate calls with one seed share members.
  ProbCube predict_members(const Matrix& x, std::size_t k_requested, std::uint64_t seed) const;

  /// "HEAD" magic, u32 version, then a kind-specific payload.
  std::string serialize() const;
  static FittedHead deserialize(std::string_view bytes);

  static constexpr std::uint32_t kFormatVersion = 1;

 private:
  HeadConfig config_;
  State state_;
  int classes_;
  std::size_t dim_;
};

/// Trains a head. Neural heads early-stop on `validation` when it is given
/// and non-empty. Deterministic in (inputs, config, seed).
FittedHead fit(const HeadConfig& config, const Dataset& train, int classes, const Dataset* validation,
               std::uint64_t seed);

/// Builds the head's network with seeded initial weights and compares the
/// analytic loss gradient with central differences (step 1e-4).
double gradient_check(const HeadConfig& config, const Dataset& data, int classes, std::uint64_t seed);

}  // namespace epiglab

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "epiglab/prob_cube.hpp"

namespace epiglab {

class Rng;

struct TrainSettings {
  double learning_rate = 0.01;
  std::size_t max_steps = 50'000;
  std::size_t patience_steps = 5'000;
  double l2_weight = 1e-4;
};

/// Per-layer dropout multipliers (0 or 1/(1-p)) for the hidden layers. A
/// mask with one row is broadcast over every input; otherwise it has one row
/// per input.
using DropoutMasks = std::vector<Matrix>;

/// Fully connected ReLU network with a softmax output. All parameters live in
/// one flat vector; layer l stores its (out x in) row-major weights followed
/// by its biases.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input_dim, std::vector<std::size_t> hidden, int classes);

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  int classes() const { return classes_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(Rng& rng);

  /// Class probabilities (n x c) under `params` (defaults to the network's own).
  Matrix predict(const Matrix& x, const DropoutMasks* masks = nullptr,
                 std::span<const double> params = {}) const;

  /// Mean NLL over (x, y) plus 0.5 * l2 * |theta|^2. Writes the gradient when
  /// `grad` is non-null.
  double loss(const Matrix& x, std::span<const int> y, double l2, const DropoutMasks* masks = nullptr,
              std::vector<double>* grad = nullptr, std::span<const double> params = {}) const;

  /// Mean NLL without dropout or regulariser.
  double nll(const Matrix& x, std::span<const int> y) const;

  /// Masks for `rows` inputs (rows == 1 gives a shared mask).
  DropoutMasks sample_masks(double rate, std::size_t rows, Rng& rng) const;

  /// Full-batch gradient descent with early stopping on validation NLL; the
  /// parameters with the lowest validation NLL are restored at the end.
  /// Returns the number of steps taken. Throws TrainingError on a non-finite loss.
  std::size_t train(const TrainSettings& settings, double dropout_rate, const Matrix& x, std::span<const int> y,
                    const Matrix* val_x, std::span<const int> val_y, Rng& rng);

  /// Sum over examples of squared per-example NLL gradients.
  std::vector<double> diagonal_fisher(const Matrix& x, std::span<const int> y) const;

 private:
  struct LayerView {
    std::size_t in;
    std::size_t out;
    std::size_t offset;  // weights at offset, biases at offset + in*out
  };

  std::size_t input_dim_ = 0;
  std::vector<std::size_t> hidden_;
  int classes_ = 0;
  std::vector<LayerView> layers_;
  std::vector<double> params_;
};

/// Largest |analytic - numeric| over the gradient, relative to the largest
/// gradient magnitude, using central differences of the given step.
double gradient_deviation(const Mlp& net, const Matrix& x, std::span<const int> y, double l2, double step = 1e-4);

}  // namespace epiglab

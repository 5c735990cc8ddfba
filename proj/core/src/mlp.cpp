#include "epiglab/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {

using ConstMatrixMap = Eigen::Map<const Matrix>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;

void apply_mask(Matrix& h, const Matrix& mask) {
  if (mask.rows() == 1) {
    h.array().rowwise() *= mask.row(0).array();
  } else {
    h.array() *= mask.array();
  }
}

/// Row-wise log-softmax of logits.
Matrix log_softmax(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

}  // namespace

Mlp::Mlp(std::size_t input_dim, std::vector<std::size_t> hidden, int classes)
    : input_dim_(input_dim), hidden_(std::move(hidden)), classes_(classes) {
  if (input_dim_ == 0 || classes_ < 1) throw ConfigError("mlp needs input_dim >= 1 and classes >= 1");
  std::vector<std::size_t> dims{input_dim_};
  for (std::size_t h : hidden_) {
    if (h == 0) throw ConfigError("mlp hidden layer width must be positive");
    dims.push_back(h);
  }
  dims.push_back(static_cast<std::size_t>(classes_));
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    layers_.push_back({dims[l], dims[l + 1], offset});
    offset += dims[l] * dims[l + 1] + dims[l + 1];
  }
  params_.assign(offset, 0.0);
}

void Mlp::initialize(Rng& rng) {
  for (const auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    const std::size_t count = layer.in * layer.out + layer.out;
    for (std::size_t j = 0; j < count; ++j) params_[layer.offset + j] = (2.0 * rng.uniform01() - 1.0) * bound;
  }
}

DropoutMasks Mlp::sample_masks(double rate, std::size_t rows, Rng& rng) const {
  DropoutMasks masks;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Matrix mask(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(layers_[l].out));
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    masks.push_back(std::move(mask));
  }
  return masks;
}

Matrix Mlp::predict(const Matrix& x, const DropoutMasks* masks, std::span<const double> params) const {
  if (static_cast<std::size_t>(x.cols()) != input_dim_) {
    throw ShapeError("mlp expects " + std::to_string(input_dim_) + " features, got " + std::to_string(x.cols()));
  }
  const double* p = params.empty() ? params_.data() : params.data();
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    ConstMatrixMap w(p + L.offset, static_cast<Eigen::Index>(L.out), static_cast<Eigen::Index>(L.in));
    ConstRowMap b(p + L.offset + L.in * L.out, static_cast<Eigen::Index>(L.out));
    Matrix z = a * w.transpose();
    z.rowwise() += b;
    if (l + 1 < layers_.size()) {
      a = z.cwiseMax(0.0);
      if (masks) apply_mask(a, (*masks)[l]);
    } else {
      a = log_softmax(z).array().exp().matrix();
    }
  }
  return a;
}

double Mlp::loss(const Matrix& x, std::span<const int> y, double l2, const DropoutMasks* masks,
                 std::vector<double>* grad, std::span<const double> params) const {
  if (static_cast<std::size_t>(x.cols()) != input_dim_) throw ShapeError("mlp loss: feature dimension mismatch");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ShapeError("mlp loss: label count mismatch");
  const double* p = params.empty() ? params_.data() : params.data();
  const auto n = static_cast<Eigen::Index>(x.rows());

  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // hidden pre-activations
  inputs.push_back(x);
  Matrix logits;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    ConstMatrixMap w(p + L.offset, static_cast<Eigen::Index>(L.out), static_cast<Eigen::Index>(L.in));
    ConstRowMap b(p + L.offset + L.in * L.out, static_cast<Eigen::Index>(L.out));
    Matrix z = inputs.back() * w.transpose();
    z.rowwise() += b;
    if (l + 1 < layers_.size()) {
      Matrix h = z.cwiseMax(0.0);
      if (masks) apply_mask(h, (*masks)[l]);
      pre.push_back(std::move(z));
      inputs.push_back(std::move(h));
    } else {
      logits = std::move(z);
    }
  }

  const Matrix logp = log_softmax(logits);
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) nll -= logp(i, y[static_cast<std::size_t>(i)]);
  nll /= static_cast<double>(std::max<Eigen::Index>(n, 1));
  double sq = 0.0;
  for (std::size_t j = 0; j < params_.size(); ++j) sq += p[j] * p[j];
  const double total = nll + 0.5 * l2 * sq;
  if (!grad) return total;

  grad->assign(params_.size(), 0.0);
  Matrix delta = logp.array().exp().matrix();
  for (Eigen::Index i = 0; i < n; ++i) delta(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= static_cast<double>(std::max<Eigen::Index>(n, 1));
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    MatrixMap gw(grad->data() + L.offset, static_cast<Eigen::Index>(L.out), static_cast<Eigen::Index>(L.in));
    RowMap gb(grad->data() + L.offset + L.in * L.out, static_cast<Eigen::Index>(L.out));
    gw.noalias() = delta.transpose() * inputs[l];
    gb = delta.colwise().sum();
    if (l == 0) break;
    ConstMatrixMap w(p + L.offset, static_cast<Eigen::Index>(L.out), static_cast<Eigen::Index>(L.in));
    Matrix back = delta * w;
    if (masks) apply_mask(back, (*masks)[l - 1]);
    back.array() *= (pre[l - 1].array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  for (std::size_t j = 0; j < params_.size(); ++j) (*grad)[j] += l2 * p[j];
  return total;
}

double Mlp::nll(const Matrix& x, std::span<const int> y) const { return loss(x, y, 0.0); }

std::size_t Mlp::train(const TrainSettings& settings, double dropout_rate, const Matrix& x, std::span<const int> y,
                       const Matrix* val_x, std::span<const int> val_y, Rng& rng) {
  const bool early_stop = val_x != nullptr && val_x->rows() > 0;
  std::vector<double> best = params_;
  double best_val = early_stop ? nll(*val_x, val_y) : std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<double> grad;
  std::size_t step = 0;
  for (; step < settings.max_steps; ++step) {
    DropoutMasks masks;
    if (dropout_rate > 0.0) masks = sample_masks(dropout_rate, static_cast<std::size_t>(x.rows()), rng);
    const double value = loss(x, y, settings.l2_weight, dropout_rate > 0.0 ? &masks : nullptr, &grad);
    if (!std::isfinite(value)) throw TrainingError("non-finite training loss at step " + std::to_string(step));
    for (std::size_t j = 0; j < params_.size(); ++j) params_[j] -= settings.learning_rate * grad[j];
    if (!early_stop) continue;
    const double v = nll(*val_x, val_y);
    if (!std::isfinite(v)) throw TrainingError("non-finite validation loss at step " + std::to_string(step));
    if (v < best_val) {
      best_val = v;
      best = params_;
      since_best = 0;
    } else if (++since_best > settings.patience_steps) {
      ++step;
      break;
    }
  }
  if (early_stop) params_ = std::move(best);
  return step;
}

std::vector<double> Mlp::diagonal_fisher(const Matrix& x, std::span<const int> y) const {
  std::vector<double> fisher(params_.size(), 0.0);
  std::vector<double> g;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Matrix xi = x.row(i);
    loss(xi, y.subspan(static_cast<std::size_t>(i), 1), 0.0, nullptr, &g);
    for (std::size_t j = 0; j < g.size(); ++j) fisher[j] += g[j] * g[j];
  }
  return fisher;
}

double gradient_deviation(const Mlp& net, const Matrix& x, std::span<const int> y, double l2, double step) {
  std::vector<double> analytic;
  net.loss(x, y, l2, nullptr, &analytic);
  std::vector<double> theta = net.params();
  double max_diff = 0.0;
  double scale = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double saved = theta[j];
    theta[j] = saved + step;
    const double up = net.loss(x, y, l2, nullptr, nullptr, theta);
    theta[j] = saved - step;
    const double down = net.loss(x, y, l2, nullptr, nullptr, theta);
    theta[j] = saved;
    const double numeric = (up - down) / (2.0 * step);
    max_diff = std::max(max_diff, std::abs(numeric - analytic[j]));
    scale = std::max({scale, std::abs(numeric), std::abs(analytic[j])});
  }
  return scale > 0.0 ? max_diff / scale : max_diff;
}

}  // namespace epiglab

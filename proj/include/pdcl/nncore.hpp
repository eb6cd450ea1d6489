#pragma once

// Dense ReLU network with analytic gradients of the softmax cross-entropy
// loss and of the empirical Lagrangian used by the primal-dual trainer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pdcl {

enum class Activation { relu };

struct MlpSpec {
  // input dim, hidden dims..., output dim (= class count)
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t num_params() const;
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t num_classes() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
};

// Offsets of one affine layer inside the flat parameter vector. The weight
// block is out x in, row-major, followed by the bias block of length out.
struct LayerBlock {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

std::vector<LayerBlock> layer_layout(const MlpSpec& spec);

struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n) : values(n, 0.0) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
  bool all_finite() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

// Row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Batch {
  Matrix x;
  std::vector<int> y;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return y.size(); }
  // Throws DimensionError / std::invalid_argument on a broken batch.
  void validate(std::size_t input_dim, std::size_t num_classes) const;
};

// One past-task (or current-task) term of the Lagrangian: mean loss on
// `batch` constrained to stay below `epsilon`.
struct ConstraintTerm {
  const Batch* batch = nullptr;
  double epsilon = 0.0;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Deterministic in spec.seed.
ParamVector init_params(const MlpSpec& spec);

Matrix forward(const MlpSpec& spec, const ParamVector& theta, const Matrix& x);

std::vector<double> per_sample_losses(const MlpSpec& spec, const ParamVector& theta, const Batch& batch);

double loss_mean(const MlpSpec& spec, const ParamVector& theta, const Batch& batch);

// Adds scale * (1/n) * sum_i w_i * grad loss_i into `grad`. Empty `weights`
// means w_i = 1.
void accumulate_loss_gradient(const MlpSpec& spec, const ParamVector& theta, const Batch& batch,
                              std::span<const double> weights, double scale, ParamVector& grad);

ParamVector loss_gradient(const MlpSpec& spec, const ParamVector& theta, const Batch& batch);

// Scalar L(theta, lambda) = mean loss on current + sum_k lambda_k (mean loss on k - eps_k).
double lagrangian(const MlpSpec& spec, const ParamVector& theta, std::span<const double> lambda,
                  const Batch& current, std::span<const ConstraintTerm> constraints);

// Gradient of lagrangian() in theta. Rejects negative multipliers.
ParamVector grad_lagrangian(const MlpSpec& spec, const ParamVector& theta, std::span<const double> lambda,
                            const Batch& current, std::span<const ConstraintTerm> constraints);

// theta' = theta - lr * (g + weight_decay * theta)
ParamVector sgd_step(const ParamVector& theta, const ParamVector& g, double lr, double weight_decay);
void sgd_step_inplace(ParamVector& theta, const ParamVector& g, double lr, double weight_decay);

}  // namespace pdcl

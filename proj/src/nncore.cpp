#include "pdcl/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "pdcl/errors.hpp"

namespace pdcl {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw ConfigError("MlpSpec needs at least an input and an output layer");
  for (auto w : layer_widths)
    if (w == 0) throw ConfigError("MlpSpec layer widths must be positive");
}

std::size_t MlpSpec::num_params() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i)
    n += layer_widths[i] * layer_widths[i + 1] + layer_widths[i + 1];
  return n;
}

std::vector<LayerBlock> layer_layout(const MlpSpec& spec) {
  std::vector<LayerBlock> blocks;
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < spec.layer_widths.size(); ++i) {
    LayerBlock b;
    b.in = spec.layer_widths[i];
    b.out = spec.layer_widths[i + 1];
    b.weight_offset = offset;
    b.bias_offset = offset + b.in * b.out;
    offset = b.bias_offset + b.out;
    blocks.push_back(b);
  }
  return blocks;
}

bool ParamVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void Batch::validate(std::size_t input_dim, std::size_t num_classes) const {
  if (y.empty()) throw std::invalid_argument("batch is empty");
  if (x.rows != y.size() || ids.size() != y.size())
    throw DimensionError("batch x/y/ids lengths disagree");
  if (x.cols != input_dim)
    throw DimensionError("batch feature dim " + std::to_string(x.cols) + " != " + std::to_string(input_dim));
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw std::invalid_argument("label " + std::to_string(label) + " out of range");
  std::unordered_set<std::uint64_t> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) throw std::invalid_argument("duplicate sample ids in batch");
}

ParamVector init_params(const MlpSpec& spec) {
  spec.validate();
  ParamVector theta(spec.num_params());
  std::mt19937_64 rng(spec.seed);
  for (const auto& b : layer_layout(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < b.in * b.out; ++i) theta[b.weight_offset + i] = dist(rng);
  }
  return theta;
}

namespace {

// Per-sample activations of a single forward pass. acts[0] is the input,
// acts[l] the post-activation of layer l, and the last entry the logits.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> deltas;

  explicit Workspace(const MlpSpec& spec) {
    for (auto w : spec.layer_widths) {
      acts.emplace_back(w, 0.0);
      deltas.emplace_back(w, 0.0);
    }
  }
};

void check_theta(const MlpSpec& spec, const ParamVector& theta) {
  if (theta.size() != spec.num_params())
    throw DimensionError("parameter vector length " + std::to_string(theta.size()) + " != " +
                         std::to_string(spec.num_params()));
}

void forward_row(const std::vector<LayerBlock>& blocks, const ParamVector& theta, std::span<const double> x,
                 Workspace& ws) {
  std::copy(x.begin(), x.end(), ws.acts[0].begin());
  const double* p = theta.values.data();
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const auto& in = ws.acts[l];
    auto& out = ws.acts[l + 1];
    const bool hidden = l + 1 < blocks.size();
    for (std::size_t o = 0; o < b.out; ++o) {
      const double* w = p + b.weight_offset + o * b.in;
      double z = p[b.bias_offset + o];
      for (std::size_t i = 0; i < b.in; ++i) z += w[i] * in[i];
      out[o] = hidden ? (z > 0.0 ? z : 0.0) : z;
    }
  }
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

Matrix forward(const MlpSpec& spec, const ParamVector& theta, const Matrix& x) {
  spec.validate();
  check_theta(spec, theta);
  if (x.cols != spec.input_dim())
    throw DimensionError("input has " + std::to_string(x.cols) + " columns, network expects " +
                         std::to_string(spec.input_dim()));
  const auto blocks = layer_layout(spec);
  Workspace ws(spec);
  Matrix logits(x.rows, spec.num_classes());
  for (std::size_t r = 0; r < x.rows; ++r) {
    forward_row(blocks, theta, x.row(r), ws);
    std::copy(ws.acts.back().begin(), ws.acts.back().end(), logits.row(r).begin());
  }
  return logits;
}

std::vector<double> per_sample_losses(const MlpSpec& spec, const ParamVector& theta, const Batch& batch) {
  const Matrix logits = forward(spec, theta, batch.x);
  std::vector<double> losses(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto z = logits.row(r);
    losses[r] = log_sum_exp(z) - z[static_cast<std::size_t>(batch.y[r])];
  }
  return losses;
}

double loss_mean(const MlpSpec& spec, const ParamVector& theta, const Batch& batch) {
  const auto losses = per_sample_losses(spec, theta, batch);
  double s = 0.0;
  for (double v : losses) s += v;
  return s / static_cast<double>(losses.size());
}

void accumulate_loss_gradient(const MlpSpec& spec, const ParamVector& theta, const Batch& batch,
                              std::span<const double> weights, double scale, ParamVector& grad) {
  spec.validate();
  check_theta(spec, theta);
  check_theta(spec, grad);
  if (batch.x.cols != spec.input_dim()) throw DimensionError("batch feature dim does not match network");
  if (!weights.empty() && weights.size() != batch.size())
    throw DimensionError("sample weight count does not match batch size");
  if (batch.size() == 0 || scale == 0.0) return;

  const auto blocks = layer_layout(spec);
  const std::size_t nl = blocks.size();
  Workspace ws(spec);
  const double* p = theta.values.data();
  double* g = grad.values.data();
  const double base = scale / static_cast<double>(batch.size());

  for (std::size_t r = 0; r < batch.size(); ++r) {
    const double w_r = base * (weights.empty() ? 1.0 : weights[r]);
    if (w_r == 0.0) continue;
    forward_row(blocks, theta, batch.x.row(r), ws);

    // d loss / d logits = softmax - onehot
    auto& dz = ws.deltas[nl];
    const auto& z = ws.acts[nl];
    const double lse = log_sum_exp(z);
    for (std::size_t k = 0; k < z.size(); ++k) dz[k] = w_r * std::exp(z[k] - lse);
    dz[static_cast<std::size_t>(batch.y[r])] -= w_r;

    for (std::size_t l = nl; l-- > 0;) {
      const auto& b = blocks[l];
      const auto& in = ws.acts[l];
      const auto& d = ws.deltas[l + 1];
      for (std::size_t o = 0; o < b.out; ++o) {
        const double d_o = d[o];
        if (d_o == 0.0) continue;
        double* gw = g + b.weight_offset + o * b.in;
        for (std::size_t i = 0; i < b.in; ++i) gw[i] += d_o * in[i];
        g[b.bias_offset + o] += d_o;
      }
      if (l == 0) break;
      // Back through W and the ReLU of layer l; relu'(0) = 0.
      auto& d_in = ws.deltas[l];
      std::fill(d_in.begin(), d_in.end(), 0.0);
      for (std::size_t o = 0; o < b.out; ++o) {
        const double d_o = d[o];
        if (d_o == 0.0) continue;
        const double* w = p + b.weight_offset + o * b.in;
        for (std::size_t i = 0; i < b.in; ++i) d_in[i] += w[i] * d_o;
      }
      for (std::size_t i = 0; i < b.in; ++i)
        if (in[i] <= 0.0) d_in[i] = 0.0;
    }
  }
}

ParamVector loss_gradient(const MlpSpec& spec, const ParamVector& theta, const Batch& batch) {
  ParamVector grad(spec.num_params());
  accumulate_loss_gradient(spec, theta, batch, {}, 1.0, grad);
  return grad;
}

namespace {
void check_multipliers(std::span<const double> lambda, std::span<const ConstraintTerm> constraints) {
  if (lambda.size() != constraints.size())
    throw DimensionError("multiplier count " + std::to_string(lambda.size()) + " != constraint count " +
                         std::to_string(constraints.size()));
  for (double l : lambda)
    if (!(l >= 0.0)) throw std::invalid_argument("dual variables must be nonnegative");
  for (const auto& c : constraints)
    if (c.batch == nullptr) throw std::invalid_argument("constraint term without data");
}
}  // namespace

double lagrangian(const MlpSpec& spec, const ParamVector& theta, std::span<const double> lambda,
                  const Batch& current, std::span<const ConstraintTerm> constraints) {
  check_multipliers(lambda, constraints);
  double value = loss_mean(spec, theta, current);
  for (std::size_t k = 0; k < constraints.size(); ++k)
    value += lambda[k] * (loss_mean(spec, theta, *constraints[k].batch) - constraints[k].epsilon);
  return value;
}

ParamVector grad_lagrangian(const MlpSpec& spec, const ParamVector& theta, std::span<const double> lambda,
                            const Batch& current, std::span<const ConstraintTerm> constraints) {
  check_multipliers(lambda, constraints);
  ParamVector grad(spec.num_params());
  accumulate_loss_gradient(spec, theta, current, {}, 1.0, grad);
  for (std::size_t k = 0; k < constraints.size(); ++k)
    accumulate_loss_gradient(spec, theta, *constraints[k].batch, {}, lambda[k], grad);
  return grad;
}

void sgd_step_inplace(ParamVector& theta, const ParamVector& g, double lr, double weight_decay) {
  if (theta.size() != g.size()) throw DimensionError("gradient length does not match parameters");
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * (g[i] + weight_decay * theta[i]);
}

ParamVector sgd_step(const ParamVector& theta, const ParamVector& g, double lr, double weight_decay) {
  ParamVector out = theta;
  sgd_step_inplace(out, g, lr, weight_decay);
  return out;
}

}  // namespace pdcl

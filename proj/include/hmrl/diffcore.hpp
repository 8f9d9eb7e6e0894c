#pragma once

// Exact-gradient numerical core: flat parameter vectors with named slices,
// fixed-topology multilayer perceptrons with a hand-written reverse pass,
// and first-order optimizers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hmrl/rng.hpp"

namespace hmrl {

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const;
  bool operator==(const Slice&) const = default;
};

/// Ordered list of named sub-tensors that tile a flat vector exactly.
class ParamLayout {
 public:
  ParamLayout() = default;

  /// Appends a slice directly after the last one.
  void add(std::string name, std::vector<std::size_t> shape);

  const std::vector<Slice>& slices() const { return slices_; }
  std::size_t total_size() const { return total_; }
  bool empty() const { return total_ == 0; }

  const Slice* find(std::string_view name) const;
  const Slice& at(std::string_view name) const;
  /// Slice that owns flat index `i`.
  const Slice& owner(std::size_t i) const;

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<Slice> slices_;
  std::size_t total_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  std::vector<double> values;

  static ParamVector zeros(ParamLayout layout);

  std::size_t size() const { return values.size(); }
  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;
  bool all_finite() const;
};

/// d(loss)/d(parameter), laid out exactly like the ParamVector it differentiates.
struct Gradient {
  ParamLayout layout;
  std::vector<double> values;

  static Gradient zeros_like(const ParamVector& p);
  static Gradient zeros(ParamLayout layout);

  std::size_t size() const { return values.size(); }
  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;

  Gradient& operator+=(const Gradient& other);
  Gradient& operator*=(double s);
};

/// Throws NumericError naming the first slice holding a NaN/Inf.
void require_finite(const Gradient& g, std::string_view what = "gradient");
void require_finite(const ParamVector& p, std::string_view what = "parameters");

enum class Activation { relu, tanh };
enum class OutputHead { linear, softmax_logits };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  OutputHead head = OutputHead::linear;

  /// Throws DimensionError when any dim is zero.
  void validate() const;
  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t l) const;
  std::size_t layer_out(std::size_t l) const;
  std::size_t param_count() const;
  /// Slices "l<k>.weight" (out x in, row-major) and "l<k>.bias" (out) per layer.
  ParamLayout layout() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.
ParamVector mlp_init(const MlpSpec& spec, Rng& rng);

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input);

struct MlpBackward {
  Gradient params;
  std::vector<double> input;
};

MlpBackward mlp_backward(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> input, std::span<const double> upstream);

// Row-batched variants: each row of `inputs` is one sample. These are what the
// training loops use; the single-sample functions above are thin wrappers.

Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const ParamVector& params,
                                  const Eigen::MatrixXd& inputs);

/// Accumulates sum over rows of the parameter gradient into `grad`; writes the
/// per-row input gradients into `input_grad` when non-null.
void mlp_backward_batch(const MlpSpec& spec, const ParamVector& params,
                        const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& upstream,
                        Gradient& grad, Eigen::MatrixXd* input_grad = nullptr);

/// Pre-activations of every hidden layer for one input; used to locate ReLU
/// kinks when checking gradients numerically.
std::vector<std::vector<double>> mlp_preactivations(const MlpSpec& spec, const ParamVector& params,
                                                    std::span<const double> input);

ParamVector sgd_step(const ParamVector& params, const Gradient& grad, double lr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  ParamLayout layout;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  static AdamState fresh(const ParamVector& params, AdamConfig config = {});
};

ParamVector adam_step(AdamState& state, const ParamVector& params, const Gradient& grad);

/// FNV-1a over the raw bytes of the values; used to tag parameter snapshots.
std::uint64_t param_hash(const ParamVector& p);

}  // namespace hmrl

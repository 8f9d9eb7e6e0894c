#include "hmrl/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::span<double> slice_of(std::vector<double>& values, const ParamLayout& layout,
                           std::string_view name) {
  const Slice& s = layout.at(name);
  return {values.data() + s.offset, s.size()};
}

std::span<const double> slice_of(const std::vector<double>& values, const ParamLayout& layout,
                                 std::string_view name) {
  const Slice& s = layout.at(name);
  return {values.data() + s.offset, s.size()};
}

void check_same_layout(const ParamLayout& a, const ParamLayout& b, const char* op) {
  if (!(a == b)) {
    std::ostringstream os;
    os << op << ": layout mismatch (" << a.total_size() << " vs " << b.total_size()
       << " values)";
    throw DimensionError(os.str());
  }
}

void check_params(const MlpSpec& spec, const ParamVector& params) {
  if (params.size() != spec.param_count()) {
    std::ostringstream os;
    os << "mlp: expected " << spec.param_count() << " parameters, got " << params.size();
    throw DimensionError(os.str());
  }
}

struct LayerView {
  Eigen::Map<const RowMajor> weight;
  Eigen::Map<const Eigen::VectorXd> bias;
};

LayerView layer_view(const MlpSpec& spec, const ParamVector& params, std::size_t l) {
  // Layout is l0.weight, l0.bias, l1.weight, ... in order; avoid name lookups.
  const auto& slices = params.layout.slices();
  const Slice& w = slices[2 * l];
  const Slice& b = slices[2 * l + 1];
  const auto out = static_cast<Eigen::Index>(spec.layer_out(l));
  const auto in = static_cast<Eigen::Index>(spec.layer_in(l));
  return {Eigen::Map<const RowMajor>(params.values.data() + w.offset, out, in),
          Eigen::Map<const Eigen::VectorXd>(params.values.data() + b.offset, out)};
}

void activate(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::relu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// Multiplies `grad_out` in place by the activation derivative, given the
// post-activation values.
void activation_backward(Activation act, const Eigen::MatrixXd& post, Eigen::MatrixXd& grad_out) {
  if (act == Activation::relu) {
    grad_out = (post.array() > 0.0).select(grad_out, 0.0);
  } else {
    grad_out = grad_out.array() * (1.0 - post.array().square());
  }
}

}  // namespace

std::size_t Slice::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void ParamLayout::add(std::string name, std::vector<std::size_t> shape) {
  if (find(name) != nullptr) throw DimensionError("duplicate slice name: " + name);
  Slice s{std::move(name), total_, std::move(shape)};
  total_ += s.size();
  slices_.push_back(std::move(s));
}

const Slice* ParamLayout::find(std::string_view name) const {
  for (const auto& s : slices_)
    if (s.name == name) return &s;
  return nullptr;
}

const Slice& ParamLayout::at(std::string_view name) const {
  const Slice* s = find(name);
  if (s == nullptr) throw DimensionError("no slice named '" + std::string(name) + "'");
  return *s;
}

const Slice& ParamLayout::owner(std::size_t i) const {
  for (const auto& s : slices_)
    if (i >= s.offset && i < s.offset + s.size()) return s;
  throw DimensionError("index " + std::to_string(i) + " outside layout");
}

ParamVector ParamVector::zeros(ParamLayout layout) {
  ParamVector p;
  p.values.assign(layout.total_size(), 0.0);
  p.layout = std::move(layout);
  return p;
}

std::span<double> ParamVector::slice(std::string_view name) {
  return slice_of(values, layout, name);
}

std::span<const double> ParamVector::slice(std::string_view name) const {
  return slice_of(values, layout, name);
}

bool ParamVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Gradient Gradient::zeros_like(const ParamVector& p) { return zeros(p.layout); }

Gradient Gradient::zeros(ParamLayout layout) {
  Gradient g;
  g.values.assign(layout.total_size(), 0.0);
  g.layout = std::move(layout);
  return g;
}

std::span<double> Gradient::slice(std::string_view name) { return slice_of(values, layout, name); }

std::span<const double> Gradient::slice(std::string_view name) const {
  return slice_of(values, layout, name);
}

Gradient& Gradient::operator+=(const Gradient& other) {
  check_same_layout(layout, other.layout, "gradient +=");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

Gradient& Gradient::operator*=(double s) {
  for (auto& v : values) v *= s;
  return *this;
}

namespace {
template <typename T>
void require_finite_impl(const T& t, std::string_view what) {
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (!std::isfinite(t.values[i])) {
      const Slice& s = t.layout.owner(i);
      std::ostringstream os;
      os << "non-finite " << what << " in slice '" << s.name << "' (element " << i - s.offset
         << ", value " << t.values[i] << ")";
      throw NumericError(os.str());
    }
  }
}
}  // namespace

void require_finite(const Gradient& g, std::string_view what) { require_finite_impl(g, what); }
void require_finite(const ParamVector& p, std::string_view what) { require_finite_impl(p, what); }

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0 ||
      std::any_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d == 0; }))
    throw DimensionError("mlp: all layer dimensions must be >= 1");
}

std::size_t MlpSpec::layer_in(std::size_t l) const {
  return l == 0 ? input_dim : hidden_dims[l - 1];
}

std::size_t MlpSpec::layer_out(std::size_t l) const {
  return l < hidden_dims.size() ? hidden_dims[l] : output_dim;
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) n += layer_out(l) * (layer_in(l) + 1);
  return n;
}

ParamLayout MlpSpec::layout() const {
  validate();
  ParamLayout layout;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::string prefix = "l" + std::to_string(l);
    layout.add(prefix + ".weight", {layer_out(l), layer_in(l)});
    layout.add(prefix + ".bias", {layer_out(l)});
  }
  return layout;
}

ParamVector mlp_init(const MlpSpec& spec, Rng& rng) {
  ParamVector p = ParamVector::zeros(spec.layout());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double a = std::sqrt(6.0 / static_cast<double>(spec.layer_in(l) + spec.layer_out(l)));
    for (double& w : p.slice("l" + std::to_string(l) + ".weight")) w = uniform(rng, -a, a);
  }
  return p;
}

Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const ParamVector& params,
                                  const Eigen::MatrixXd& inputs) {
  check_params(spec, params);
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim) {
    std::ostringstream os;
    os << "mlp_forward: expected input dim " << spec.input_dim << ", got " << inputs.cols();
    throw DimensionError(os.str());
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const LayerView v = layer_view(spec, params, l);
    Eigen::MatrixXd z = a * v.weight.transpose();
    z.rowwise() += v.bias.transpose();
    if (l + 1 < spec.num_layers()) activate(spec.activation, z);
    a = std::move(z);
  }
  return a;
}

void mlp_backward_batch(const MlpSpec& spec, const ParamVector& params,
                        const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& upstream,
                        Gradient& grad, Eigen::MatrixXd* input_grad) {
  check_params(spec, params);
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim)
    throw DimensionError("mlp_backward: expected input dim " + std::to_string(spec.input_dim) +
                         ", got " + std::to_string(inputs.cols()));
  if (static_cast<std::size_t>(upstream.cols()) != spec.output_dim ||
      upstream.rows() != inputs.rows())
    throw DimensionError("mlp_backward: upstream must be " + std::to_string(inputs.rows()) + "x" +
                         std::to_string(spec.output_dim) + ", got " +
                         std::to_string(upstream.rows()) + "x" + std::to_string(upstream.cols()));
  check_same_layout(grad.layout, params.layout, "mlp_backward");

  const std::size_t L = spec.num_layers();
  // acts[l] is the input to layer l.
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(L);
  acts.push_back(inputs);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const LayerView v = layer_view(spec, params, l);
    Eigen::MatrixXd z = acts.back() * v.weight.transpose();
    z.rowwise() += v.bias.transpose();
    activate(spec.activation, z);
    acts.push_back(std::move(z));
  }

  const auto& slices = grad.layout.slices();
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = L; l-- > 0;) {
    const LayerView v = layer_view(spec, params, l);
    const Slice& ws = slices[2 * l];
    const Slice& bs = slices[2 * l + 1];
    Eigen::Map<RowMajor> gw(grad.values.data() + ws.offset, v.weight.rows(), v.weight.cols());
    Eigen::Map<Eigen::VectorXd> gb(grad.values.data() + bs.offset, v.bias.size());
    gw.noalias() += delta.transpose() * acts[l];
    gb += delta.colwise().sum().transpose();
    if (l == 0 && input_grad == nullptr) break;
    Eigen::MatrixXd prev = delta * v.weight;
    if (l > 0) activation_backward(spec.activation, acts[l], prev);
    delta = std::move(prev);
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input) {
  if (input.size() != spec.input_dim) {
    std::ostringstream os;
    os << "mlp_forward: expected input dim " << spec.input_dim << ", got " << input.size();
    throw DimensionError(os.str());
  }
  const Eigen::MatrixXd x =
      Eigen::Map<const Eigen::RowVectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  const Eigen::MatrixXd y = mlp_forward_batch(spec, params, x);
  return {y.data(), y.data() + y.size()};
}

MlpBackward mlp_backward(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> input, std::span<const double> upstream) {
  if (input.size() != spec.input_dim)
    throw DimensionError("mlp_backward: expected input dim " + std::to_string(spec.input_dim) +
                         ", got " + std::to_string(input.size()));
  if (upstream.size() != spec.output_dim)
    throw DimensionError("mlp_backward: expected upstream dim " +
                         std::to_string(spec.output_dim) + ", got " +
                         std::to_string(upstream.size()));
  const Eigen::MatrixXd x =
      Eigen::Map<const Eigen::RowVectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  const Eigen::MatrixXd u = Eigen::Map<const Eigen::RowVectorXd>(
      upstream.data(), static_cast<Eigen::Index>(upstream.size()));
  MlpBackward out{Gradient::zeros_like(params), {}};
  Eigen::MatrixXd gx;
  mlp_backward_batch(spec, params, x, u, out.params, &gx);
  out.input.assign(gx.data(), gx.data() + gx.size());
  return out;
}

std::vector<std::vector<double>> mlp_preactivations(const MlpSpec& spec, const ParamVector& params,
                                                    std::span<const double> input) {
  check_params(spec, params);
  std::vector<std::vector<double>> out;
  Eigen::MatrixXd a =
      Eigen::Map<const Eigen::RowVectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t l = 0; l + 1 < spec.num_layers(); ++l) {
    const LayerView v = layer_view(spec, params, l);
    Eigen::MatrixXd z = a * v.weight.transpose();
    z.rowwise() += v.bias.transpose();
    out.emplace_back(z.data(), z.data() + z.size());
    activate(spec.activation, z);
    a = std::move(z);
  }
  return out;
}

ParamVector sgd_step(const ParamVector& params, const Gradient& grad, double lr) {
  check_same_layout(params.layout, grad.layout, "sgd_step");
  if (!(lr > 0.0)) throw ConfigError("sgd_step: learning rate must be > 0");
  require_finite(grad);
  ParamVector out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= lr * grad.values[i];
  require_finite(out, "parameters after sgd_step");
  return out;
}

AdamState AdamState::fresh(const ParamVector& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.layout = params.layout;
  s.m.assign(params.size(), 0.0);
  s.v.assign(params.size(), 0.0);
  return s;
}

ParamVector adam_step(AdamState& state, const ParamVector& params, const Gradient& grad) {
  check_same_layout(params.layout, grad.layout, "adam_step");
  check_same_layout(params.layout, state.layout, "adam_step state");
  require_finite(grad);
  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  ParamVector out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double g = grad.values[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    out.values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
  require_finite(out, "parameters after adam_step");
  return out;
}

std::uint64_t param_hash(const ParamVector& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : p.values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace hmrl

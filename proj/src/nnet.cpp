#include "scoopgp/nnet.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "scoopgp/error.hpp"
#include "scoopgp/rng.hpp"

namespace scoopgp::nnet {
namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr Eigen::Index kParallelRows = 512;

struct LayerView {
  RowMajorMap weight;
  Eigen::Map<const Eigen::VectorXd> bias;
  Activation activation;
};

Activation LayerActivation(const NetworkSpec& spec, std::size_t layer) {
  return layer < spec.hidden.size() ? spec.hidden[layer].activation : Activation::kIdentity;
}

std::vector<LayerView> Views(const NetworkSpec& spec, const ParamVector& params) {
  std::vector<LayerView> views;
  const auto layout = params.layout();
  const double* base = params.values().data();
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < layout.size(); i += 2) {
    const LayerShape& w = layout[i];
    const LayerShape& b = layout[i + 1];
    RowMajorMap weight(base + offset, w.rows, w.cols);
    offset += w.size();
    Eigen::Map<const Eigen::VectorXd> bias(base + offset, b.rows);
    offset += b.size();
    views.push_back({weight, bias, LayerActivation(spec, i / 2)});
  }
  return views;
}

void ApplyActivation(Activation a, Eigen::Ref<Eigen::VectorXd> v) {
  switch (a) {
    case Activation::kRelu: v = v.cwiseMax(0.0); break;
    case Activation::kTanh: v = v.array().tanh(); break;
    case Activation::kIdentity: break;
  }
}

void ApplyActivation(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::kRelu: m = m.cwiseMax(0.0); break;
    case Activation::kTanh: m = m.array().tanh(); break;
    case Activation::kIdentity: break;
  }
}

Eigen::VectorXd ForwardRow(const std::vector<LayerView>& views, const Eigen::VectorXd& x) {
  Eigen::VectorXd a = x;
  for (const LayerView& layer : views) {
    Eigen::VectorXd z = layer.weight * a + layer.bias;
    ApplyActivation(layer.activation, z);
    a = std::move(z);
  }
  return a;
}

int ParseInt(std::string_view s) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ShapeError("network descriptor: bad integer '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace

std::string_view ToString(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation ParseActivation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ShapeError("unknown activation '" + std::string(name) + "'");
}

NetworkSpec NetworkSpec::Passthrough(int dim) {
  NetworkSpec spec;
  spec.input_dim = dim;
  spec.output_dim = dim;
  spec.passthrough = true;
  return spec;
}

void NetworkSpec::Validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw ShapeError("network dims must be positive: " + Describe());
  if (passthrough && (input_dim != output_dim || !hidden.empty())) {
    throw ShapeError("passthrough network must map dim to itself: " + Describe());
  }
  for (const HiddenLayer& h : hidden) {
    if (h.width <= 0) throw ShapeError("hidden widths must be positive: " + Describe());
  }
}

std::vector<LayerShape> NetworkSpec::Layout() const {
  std::vector<LayerShape> layout;
  if (passthrough) return layout;
  int fan_in = input_dim;
  int id = 0;
  auto add = [&](int fan_out) {
    layout.push_back({id, fan_out, fan_in});
    layout.push_back({id, fan_out, 1});
    fan_in = fan_out;
    ++id;
  };
  for (const HiddenLayer& h : hidden) add(h.width);
  add(output_dim);
  return layout;
}

std::size_t NetworkSpec::ParamCount() const {
  std::size_t n = 0;
  for (const LayerShape& s : Layout()) n += s.size();
  return n;
}

std::string NetworkSpec::Describe() const {
  std::ostringstream os;
  if (passthrough) {
    os << "passthrough=" << input_dim;
    return os.str();
  }
  os << "in=" << input_dim << ";hidden=";
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) os << ',';
    os << hidden[i].width << ':' << ToString(hidden[i].activation);
  }
  os << ";out=" << output_dim;
  return os.str();
}

NetworkSpec NetworkSpec::Parse(std::string_view d) {
  constexpr std::string_view kPass = "passthrough=";
  if (d.starts_with(kPass)) {
    NetworkSpec spec = Passthrough(ParseInt(d.substr(kPass.size())));
    spec.Validate();
    return spec;
  }
  NetworkSpec spec;
  bool seen_in = false, seen_out = false;
  while (!d.empty()) {
    const auto semi = d.find(';');
    std::string_view field = d.substr(0, semi);
    d = semi == std::string_view::npos ? std::string_view{} : d.substr(semi + 1);
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) throw ShapeError("network descriptor: missing '=' in '" + std::string(field) + "'");
    std::string_view key = field.substr(0, eq);
    std::string_view value = field.substr(eq + 1);
    if (key == "in") {
      spec.input_dim = ParseInt(value);
      seen_in = true;
    } else if (key == "out") {
      spec.output_dim = ParseInt(value);
      seen_out = true;
    } else if (key == "hidden") {
      while (!value.empty()) {
        const auto comma = value.find(',');
        std::string_view item = value.substr(0, comma);
        value = comma == std::string_view::npos ? std::string_view{} : value.substr(comma + 1);
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw ShapeError("network descriptor: bad layer '" + std::string(item) + "'");
        spec.hidden.push_back({ParseInt(item.substr(0, colon)), ParseActivation(item.substr(colon + 1))});
      }
    } else {
      throw ShapeError("network descriptor: unknown key '" + std::string(key) + "'");
    }
  }
  if (!seen_in || !seen_out) throw ShapeError("network descriptor needs in= and out=");
  spec.Validate();
  return spec;
}

ParamVector::ParamVector(std::vector<LayerShape> layout) : layout_(std::move(layout)) {
  std::size_t n = 0;
  for (const LayerShape& s : layout_) n += s.size();
  values_.assign(n, 0.0);
}

ParamVector::ParamVector(std::vector<LayerShape> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  std::size_t n = 0;
  for (const LayerShape& s : layout_) n += s.size();
  if (n != values_.size()) {
    throw ShapeError("parameter count " + std::to_string(values_.size()) + " does not match layout total " +
                     std::to_string(n));
  }
}

bool ParamVector::AllFinite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double ParamVector::SquaredNorm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

void CheckLayout(const NetworkSpec& spec, const ParamVector& params) {
  if (params.layout() != spec.Layout()) {
    throw ShapeError("parameters do not match network layout " + spec.Describe());
  }
}

ParamVector InitParams(const NetworkSpec& spec, std::uint64_t seed) {
  spec.Validate();
  ParamVector params = ParamVector::Zeros(spec);
  Rng rng(seed);
  std::span<double> values = params.values();
  std::size_t offset = 0;
  const auto& layout = params.layout();
  for (std::size_t i = 0; i < layout.size(); i += 2) {
    const LayerShape& w = layout[i];
    const double fan_in = w.cols;
    const double fan_out = w.rows;
    const double limit = LayerActivation(spec, i / 2) == Activation::kRelu ? std::sqrt(6.0 / fan_in)
                                                                           : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < w.size(); ++k) values[offset + k] = dist(rng);
    offset += w.size() + layout[i + 1].size();
  }
  return params;
}

Eigen::VectorXd Forward(const NetworkSpec& spec, const ParamVector& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.input_dim) {
    throw ShapeError("forward: input has dim " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(spec.input_dim));
  }
  CheckLayout(spec, params);
  Eigen::VectorXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  if (spec.passthrough) return in;
  return ForwardRow(Views(spec, params), in);
}

Eigen::MatrixXd ForwardBatch(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& x) {
  if (x.cols() != spec.input_dim) {
    throw ShapeError("forward: batch has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(spec.input_dim));
  }
  CheckLayout(spec, params);
  if (spec.passthrough) return x;
  const auto views = Views(spec, params);
  Eigen::MatrixXd out(x.rows(), spec.output_dim);
#pragma omp parallel for schedule(static) if (x.rows() >= kParallelRows)
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.row(r) = ForwardRow(views, x.row(r).transpose()).transpose();
  }
  return out;
}

Gradients Backward(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& x_batch,
                   const Eigen::MatrixXd& upstream) {
  CheckLayout(spec, params);
  if (x_batch.cols() != spec.input_dim || upstream.cols() != spec.output_dim || upstream.rows() != x_batch.rows()) {
    throw ShapeError("backward: batch " + std::to_string(x_batch.rows()) + "x" + std::to_string(x_batch.cols()) +
                     " / upstream " + std::to_string(upstream.rows()) + "x" + std::to_string(upstream.cols()) +
                     " inconsistent with " + spec.Describe());
  }
  Gradients grads{ParamVector(params.layout()), Eigen::MatrixXd()};
  if (spec.passthrough) {
    grads.inputs = upstream;
    return grads;
  }
  const auto views = Views(spec, params);

  // activations[l] is the input to layer l; activations.back() is the output.
  std::vector<Eigen::MatrixXd> activations;
  activations.reserve(views.size() + 1);
  activations.push_back(x_batch);
  for (const LayerView& layer : views) {
    Eigen::MatrixXd z = activations.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    ApplyActivation(layer.activation, z);
    activations.push_back(std::move(z));
  }

  // Offsets of each layer's weight block inside the flat vector.
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.layout().size(); i += 2) {
    offsets.push_back(offset);
    offset += params.layout()[i].size() + params.layout()[i + 1].size();
  }

  double* g = grads.params.values().data();
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = views.size(); l-- > 0;) {
    const LayerView& layer = views[l];
    const Eigen::MatrixXd& out = activations[l + 1];
    switch (layer.activation) {
      case Activation::kRelu: delta = (out.array() > 0.0).select(delta, 0.0); break;
      case Activation::kTanh: delta = delta.array() * (1.0 - out.array().square()); break;
      case Activation::kIdentity: break;
    }
    const Eigen::Index rows = layer.weight.rows();
    const Eigen::Index cols = layer.weight.cols();
    Eigen::Map<RowMajorMatrix> dw(g + offsets[l], rows, cols);
    dw = delta.transpose() * activations[l];
    Eigen::Map<Eigen::VectorXd> db(g + offsets[l] + static_cast<std::size_t>(rows * cols), rows);
    db = delta.colwise().sum().transpose();
    delta = delta * layer.weight;
  }
  grads.inputs = std::move(delta);
  return grads;
}

std::pair<ParamVector, AdamState> AdamStep(const ParamVector& params, const ParamVector& grads, AdamState state,
                                           double learning_rate, const AdamSettings& settings) {
  if (!params.SameLayout(grads)) throw ShapeError("adam: gradient layout differs from parameter layout");
  const std::size_t n = params.size();
  if (state.first_moment.empty() && state.second_moment.empty()) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  if (state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("adam: optimizer state does not match parameter count");
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
  ParamVector next = params;
  std::span<double> p = next.values();
  std::span<const double> g = grads.values();
  for (std::size_t i = 0; i < n; ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = settings.beta1 * m + (1.0 - settings.beta1) * g[i];
    v = settings.beta2 * v + (1.0 - settings.beta2) * g[i] * g[i];
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + settings.epsilon);
  }
  return {std::move(next), std::move(state)};
}

}  // namespace scoopgp::nnet

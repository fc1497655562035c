#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace scoopgp::nnet {

enum class Activation { kRelu, kTanh, kIdentity };

std::string_view ToString(Activation a);
Activation ParseActivation(std::string_view name);

struct HiddenLayer {
  int width = 0;
  Activation activation = Activation::kRelu;
  bool operator==(const HiddenLayer&) const = default;
};

// One entry of a parameter layout. Weights are stored row-major as
// (rows = fan-out, cols = fan-in); biases as (rows = fan-out, cols = 1).
struct LayerShape {
  int layer = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const LayerShape&) const = default;
};

// Feed-forward stack: hidden layers with activations followed by an affine
// output layer. A passthrough spec has no parameters and returns its input.
struct NetworkSpec {
  int input_dim = 0;
  std::vector<HiddenLayer> hidden;
  int output_dim = 0;
  bool passthrough = false;

  static NetworkSpec Passthrough(int dim);
  static NetworkSpec Parse(std::string_view descriptor);

  // Throws ShapeError on non-positive widths or an inconsistent passthrough.
  void Validate() const;
  std::size_t ParamCount() const;
  std::vector<LayerShape> Layout() const;
  // Compact single-token descriptor, e.g. "in=13;hidden=32:relu,16:tanh;out=4".
  std::string Describe() const;

  bool operator==(const NetworkSpec&) const = default;
};

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<LayerShape> layout);
  ParamVector(std::vector<LayerShape> layout, std::vector<double> values);

  static ParamVector Zeros(const NetworkSpec& spec) { return ParamVector(spec.Layout()); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<LayerShape>& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  bool SameLayout(const ParamVector& other) const { return layout_ == other.layout_; }
  bool AllFinite() const;
  double SquaredNorm() const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<LayerShape> layout_;
  std::vector<double> values_;
};

// Throws ShapeError unless params were laid out for spec.
void CheckLayout(const NetworkSpec& spec, const ParamVector& params);

// He-uniform weights for relu layers, Xavier-uniform otherwise; zero biases.
ParamVector InitParams(const NetworkSpec& spec, std::uint64_t seed);

Eigen::VectorXd Forward(const NetworkSpec& spec, const ParamVector& params, std::span<const double> x);

// Row i of the result is Forward(x.row(i)), bit for bit. Rows are evaluated
// in parallel for large batches.
Eigen::MatrixXd ForwardBatch(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& x);

struct Gradients {
  ParamVector params;
  Eigen::MatrixXd inputs;  // d(sum upstream . output) / d(x), same shape as x_batch
};

// Gradient of sum_b upstream.row(b) . forward(x_batch.row(b)).
Gradients Backward(const NetworkSpec& spec, const ParamVector& params, const Eigen::MatrixXd& x_batch,
                   const Eigen::MatrixXd& upstream);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step = 0;
};

std::pair<ParamVector, AdamState> AdamStep(const ParamVector& params, const ParamVector& grads, AdamState state,
                                           double learning_rate, const AdamSettings& settings = {});

// Flat checkpoint block: a text header line "block <name> <descriptor> <count>"
// followed by <count> little-endian float64 values in layout order and '\n'.
void WriteBlock(std::ostream& out, std::string_view name, const NetworkSpec& spec, const ParamVector& params);

struct Block {
  std::string name;
  NetworkSpec spec;
  ParamVector params;
};
Block ReadBlock(std::istream& in);

// Raw little-endian float64 helpers shared by the checkpoint formats.
void WriteLittleEndian(std::ostream& out, std::span<const double> values);
std::vector<double> ReadLittleEndian(std::istream& in, std::size_t count);

}  // namespace scoopgp::nnet

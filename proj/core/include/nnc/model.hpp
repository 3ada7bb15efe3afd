#pragma once

#include <string>
#include <variant>
#include <vector>

#include "nnc/factorization.hpp"
#include "nnc/tensor.hpp"

namespace nnc {

/// Channels-height-width shape of an activation map.
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::int64_t volume() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  bool operator==(const Shape3&) const = default;
};

/// Convolution with a (D, D, S, T) kernel: two spatial modes, then input
/// channels S (mode 3) and output channels T (mode 4). Bias is per output
/// channel and may be empty.
struct Conv {
  Tensor kernel;
  std::vector<double> bias;
  int stride = 1;
  int padding = 0;

  int kernel_size() const { return kernel.extent(1); }
  int in_channels() const { return kernel.extent(3); }
  int out_channels() const { return kernel.extent(4); }
};

/// Fully connected layer; weight is (out x in), applied to the flattened
/// input. Flatten order is c * H * W + h * W + w (channel outermost).
struct FC {
  Matrix weight;
  std::vector<double> bias;

  int in_features() const { return weight.cols(); }
  int out_features() const { return weight.rows(); }
};

/// Tucker-2 realization of a convolution: 1x1 conv S -> R3, then the D x D
/// core conv R3 -> R4 carrying the original stride and padding, then 1x1 conv
/// R4 -> T with the bias.
struct FactorizedConv {
  Tensor first;   // (1, 1, S, R3)
  Tensor middle;  // (D, D, R3, R4)
  Tensor last;    // (1, 1, R4, T)
  std::vector<double> bias;
  int stride = 1;
  int padding = 0;

  int in_channels() const { return first.extent(3); }
  int rank3() const { return first.extent(4); }
  int rank4() const { return last.extent(3); }
  int out_channels() const { return last.extent(4); }
  int kernel_size() const { return middle.extent(1); }
};

/// SVD realization of an FC layer: first is (p x in), last is (out x p),
/// bias on last.
struct FactorizedFC {
  Matrix first;
  Matrix last;
  std::vector<double> bias;

  int in_features() const { return first.cols(); }
  int inner_rank() const { return first.rows(); }
  int out_features() const { return last.rows(); }
};

/// Per-channel batch normalization: y = gamma * (x - mean) / sqrt(var + eps) + beta.
/// `mean` and `variance` are the inference statistics.
struct BatchNorm {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> gamma;
  std::vector<double> beta;
  double epsilon = 1e-5;

  int channels() const { return static_cast<int>(mean.size()); }
};

struct ReLU {};

struct MaxPool {
  int size = 2;
  int stride = 2;
};

struct Softmax {};

using LayerOp =
    std::variant<Conv, FC, FactorizedConv, FactorizedFC, BatchNorm, ReLU, MaxPool, Softmax>;

struct Layer {
  std::string name;
  LayerOp op;
};

/// Output shape of a single layer for the given input shape. Throws
/// InvalidArgument when the layer cannot accept the input.
Shape3 layer_output_shape(const LayerOp& op, const Shape3& in);

/// Ordered feed-forward network. Construction validates that adjacent layers
/// are shape-compatible and that the network ends in exactly one output head
/// (a softmax, or a bare linear layer producing a 1x1 map).
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::string name, std::string version, Shape3 input_shape,
             std::vector<Layer> layers);

  const std::string& name() const { return name_; }
  const std::string& version() const { return version_; }
  const Shape3& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Shape produced after the last layer (classes, 1, 1).
  Shape3 output_shape() const;
  int num_classes() const { return output_shape().channels; }

  void validate() const;

 private:
  std::string name_;
  std::string version_ = "1";
  Shape3 input_shape_{};
  std::vector<Layer> layers_;
};

/// Removes every BatchNorm layer by rescaling the preceding Conv / FC weights
/// and bias so the forward function is unchanged. Throws UnsupportedTopology
/// when a BatchNorm does not directly follow a Conv or FC layer. Applying it
/// to a model without BatchNorm layers is a no-op.
ModelGraph fold_batchnorm(const ModelGraph& model);

/// Builds the 1x1 / DxD / 1x1 stack from a Tucker decomposition of the conv
/// kernel over modes 3 and 4. The stack's forward output equals convolution
/// with reconstruct(tucker).
FactorizedConv substitute_conv(const Conv& layer, const TuckerResult& tucker);

/// Splits an FC layer through a rank-p SVD of its weight; the singular values
/// are split as sqrt(S) onto each factor to balance their norms.
FactorizedFC substitute_fc(const FC& layer, const SvdResult& svd);

struct LayerCount {
  std::string name;
  std::string type;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Parameter and multiply-accumulate counts per layer and in total.
/// MACs for convolutions are parameter count times output positions; FC MACs
/// equal the parameter count; normalization, activation and pooling layers
/// count zero MACs.
struct CountReport {
  std::vector<LayerCount> per_layer;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

CountReport count(const ModelGraph& model, const Shape3& input_shape);

std::int64_t layer_param_count(const LayerOp& op);

const char* layer_type_name(const LayerOp& op);

}  // namespace nnc

#include "nnc/model.hpp"

#include <cmath>
#include <string>

#include "nnc/errors.hpp"

namespace nnc {

namespace {

int conv_out_extent(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) throw InvalidArgument("kernel larger than padded input");
  return span / stride + 1;
}

Shape3 conv_like_output(const Shape3& in, int kernel, int stride, int padding, int in_ch,
                        int out_ch) {
  if (in.channels != in_ch)
    throw InvalidArgument("convolution expects " + std::to_string(in_ch) + " channels, got " +
                          std::to_string(in.channels));
  return Shape3{out_ch, conv_out_extent(in.height, kernel, stride, padding),
                conv_out_extent(in.width, kernel, stride, padding)};
}

}  // namespace

Shape3 layer_output_shape(const LayerOp& op, const Shape3& in) {
  return std::visit(
      [&](const auto& l) -> Shape3 {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv>) {
          if (l.kernel.order() != 4 || l.kernel.extent(1) != l.kernel.extent(2))
            throw InvalidArgument("conv kernel must be (D, D, S, T)");
          if (!l.bias.empty() && static_cast<int>(l.bias.size()) != l.out_channels())
            throw InvalidArgument("conv bias length does not match output channels");
          return conv_like_output(in, l.kernel_size(), l.stride, l.padding, l.in_channels(),
                                  l.out_channels());
        } else if constexpr (std::is_same_v<T, FC>) {
          if (in.volume() != l.in_features())
            throw InvalidArgument("fc expects " + std::to_string(l.in_features()) +
                                  " inputs, got " + std::to_string(in.volume()));
          if (!l.bias.empty() && static_cast<int>(l.bias.size()) != l.out_features())
            throw InvalidArgument("fc bias length does not match output features");
          return Shape3{l.out_features(), 1, 1};
        } else if constexpr (std::is_same_v<T, FactorizedConv>) {
          if (l.first.extent(1) != 1 || l.first.extent(2) != 1 || l.last.extent(1) != 1 ||
              l.last.extent(2) != 1)
            throw InvalidArgument("factorized conv projections must be 1x1");
          if (l.first.extent(4) != l.middle.extent(3) || l.middle.extent(4) != l.last.extent(3))
            throw InvalidArgument("factorized conv stage ranks do not chain");
          Shape3 s = conv_like_output(in, 1, 1, 0, l.in_channels(), l.rank3());
          s = conv_like_output(s, l.kernel_size(), l.stride, l.padding, l.rank3(), l.rank4());
          return conv_like_output(s, 1, 1, 0, l.rank4(), l.out_channels());
        } else if constexpr (std::is_same_v<T, FactorizedFC>) {
          if (l.first.rows() != l.last.cols())
            throw InvalidArgument("factorized fc inner ranks do not chain");
          if (in.volume() != l.in_features())
            throw InvalidArgument("factorized fc expects " + std::to_string(l.in_features()) +
                                  " inputs, got " + std::to_string(in.volume()));
          return Shape3{l.out_features(), 1, 1};
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          const int c = l.channels();
          if (in.channels != c || static_cast<int>(l.variance.size()) != c ||
              static_cast<int>(l.gamma.size()) != c || static_cast<int>(l.beta.size()) != c)
            throw InvalidArgument("batch norm channel vectors do not match input channels");
          return in;
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          if (in.height < l.size || in.width < l.size)
            throw InvalidArgument("pool window larger than input");
          return Shape3{in.channels, (in.height - l.size) / l.stride + 1,
                        (in.width - l.size) / l.stride + 1};
        } else {
          return in;  // ReLU, Softmax
        }
      },
      op);
}

ModelGraph::ModelGraph(std::string name, std::string version, Shape3 input_shape,
                       std::vector<Layer> layers)
    : name_(std::move(name)),
      version_(std::move(version)),
      input_shape_(input_shape),
      layers_(std::move(layers)) {
  validate();
}

Shape3 ModelGraph::output_shape() const {
  Shape3 s = input_shape_;
  for (const auto& layer : layers_) s = layer_output_shape(layer.op, s);
  return s;
}

void ModelGraph::validate() const {
  if (layers_.empty()) throw InvalidArgument("model has no layers");
  if (input_shape_.channels <= 0 || input_shape_.height <= 0 || input_shape_.width <= 0)
    throw InvalidArgument("model input shape must be positive");

  Shape3 s = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<Softmax>(layers_[i].op) && i + 1 != layers_.size())
      throw InvalidArgument("softmax is only valid as the final layer");
    s = layer_output_shape(layers_[i].op, s);
  }

  // Exactly one output head: softmax, or a bare linear layer.
  const LayerOp& tail = layers_.back().op;
  const bool linear_head =
      std::holds_alternative<FC>(tail) || std::holds_alternative<FactorizedFC>(tail);
  if (!std::holds_alternative<Softmax>(tail) && !linear_head)
    throw InvalidArgument("model must end in a softmax or linear head");
  if (s.height != 1 || s.width != 1)
    throw InvalidArgument("model output must be a flat class vector");
}

ModelGraph fold_batchnorm(const ModelGraph& model) {
  std::vector<Layer> folded;
  folded.reserve(model.layers().size());
  for (const auto& layer : model.layers()) {
    if (!std::holds_alternative<BatchNorm>(layer.op)) {
      folded.push_back(layer);
      continue;
    }
    const auto& bn = std::get<BatchNorm>(layer.op);
    if (folded.empty())
      throw UnsupportedTopology("batch norm '" + layer.name + "' has no layer to fold into");
    Layer& prev = folded.back();

    const int c = bn.channels();
    std::vector<double> scale(c), shift(c);
    for (int i = 0; i < c; ++i) {
      scale[i] = bn.gamma[i] / std::sqrt(bn.variance[i] + bn.epsilon);
      shift[i] = bn.beta[i] - bn.mean[i] * scale[i];
    }

    if (auto* conv = std::get_if<Conv>(&prev.op)) {
      if (conv->out_channels() != c)
        throw UnsupportedTopology("batch norm width does not match preceding conv");
      Tensor& k = conv->kernel;
      const int d = conv->kernel_size(), s_ch = conv->in_channels();
      for (int t = 0; t < c; ++t)
        for (int s = 0; s < s_ch; ++s)
          for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) k(x, y, s, t) *= scale[t];
      std::vector<double> bias = conv->bias.empty() ? std::vector<double>(c, 0.0) : conv->bias;
      for (int t = 0; t < c; ++t) bias[t] = bias[t] * scale[t] + shift[t];
      conv->bias = std::move(bias);
    } else if (auto* fc = std::get_if<FC>(&prev.op)) {
      if (fc->out_features() != c)
        throw UnsupportedTopology("batch norm width does not match preceding fc");
      for (int r = 0; r < c; ++r)
        for (int j = 0; j < fc->in_features(); ++j) fc->weight(r, j) *= scale[r];
      std::vector<double> bias = fc->bias.empty() ? std::vector<double>(c, 0.0) : fc->bias;
      for (int r = 0; r < c; ++r) bias[r] = bias[r] * scale[r] + shift[r];
      fc->bias = std::move(bias);
    } else {
      throw UnsupportedTopology("batch norm '" + layer.name +
                                "' does not directly follow a conv or fc layer");
    }
  }
  return ModelGraph(model.name(), model.version(), model.input_shape(), std::move(folded));
}

FactorizedConv substitute_conv(const Conv& layer, const TuckerResult& tucker) {
  if (tucker.factors.size() != 2 || !tucker.factors.count(3) || !tucker.factors.count(4))
    throw InvalidArgument("substitute_conv needs factors for modes 3 and 4");
  const Matrix& c3 = tucker.factors.at(3);  // S x R3
  const Matrix& c4 = tucker.factors.at(4);  // T x R4
  const int s_ch = layer.in_channels();
  const int t_ch = layer.out_channels();
  if (c3.rows() != s_ch || c4.rows() != t_ch)
    throw InvalidArgument("tucker factors do not match the conv kernel");
  const int r3 = c3.cols();
  const int r4 = c4.cols();
  if (r3 < 1 || r3 > s_ch || r4 < 1 || r4 > t_ch)
    throw InvalidArgument("factorized conv rank bounds violated");
  if (tucker.core.shape() !=
      std::vector<int>{layer.kernel_size(), layer.kernel_size(), r3, r4})
    throw InvalidArgument("tucker core shape does not match the conv kernel");

  FactorizedConv out;
  out.stride = layer.stride;
  out.padding = layer.padding;
  out.bias = layer.bias;
  out.middle = tucker.core;

  // first[0,0,s,r] = C3[s,r]: projects input channels onto the mode-3 basis.
  out.first = Tensor({1, 1, s_ch, r3});
  for (int r = 0; r < r3; ++r)
    for (int s = 0; s < s_ch; ++s) out.first(0, 0, s, r) = c3(s, r);

  // last[0,0,r,t] = C4[t,r]: expands back to output channels.
  out.last = Tensor({1, 1, r4, t_ch});
  for (int t = 0; t < t_ch; ++t)
    for (int r = 0; r < r4; ++r) out.last(0, 0, r, t) = c4(t, r);
  return out;
}

FactorizedFC substitute_fc(const FC& layer, const SvdResult& svd) {
  const int out_f = layer.out_features();
  const int in_f = layer.in_features();
  if (svd.u.rows() != out_f || svd.v.rows() != in_f)
    throw InvalidArgument("svd factors do not match the fc weight");
  const int p = svd.rank;
  if (p < 1 || p > std::min(out_f, in_f))
    throw InvalidArgument("factorized fc rank bounds violated");

  FactorizedFC out;
  out.bias = layer.bias;
  out.first = Matrix(p, in_f);   // sqrt(S) V^T
  out.last = Matrix(out_f, p);   // U sqrt(S)
  for (int k = 0; k < p; ++k) {
    const double rs = std::sqrt(svd.s[k]);
    for (int j = 0; j < in_f; ++j) out.first(k, j) = rs * svd.v(j, k);
    for (int i = 0; i < out_f; ++i) out.last(i, k) = rs * svd.u(i, k);
  }
  return out;
}

std::int64_t layer_param_count(const LayerOp& op) {
  return std::visit(
      [](const auto& l) -> std::int64_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv>) {
          return l.kernel.size() + static_cast<std::int64_t>(l.bias.size());
        } else if constexpr (std::is_same_v<T, FC>) {
          return l.weight.size() + static_cast<std::int64_t>(l.bias.size());
        } else if constexpr (std::is_same_v<T, FactorizedConv>) {
          return l.first.size() + l.middle.size() + l.last.size() +
                 static_cast<std::int64_t>(l.bias.size());
        } else if constexpr (std::is_same_v<T, FactorizedFC>) {
          return l.first.size() + l.last.size() + static_cast<std::int64_t>(l.bias.size());
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          return static_cast<std::int64_t>(4) * l.channels();
        } else {
          return 0;
        }
      },
      op);
}

const char* layer_type_name(const LayerOp& op) {
  return std::visit(
      [](const auto& l) -> const char* {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv>) return "conv";
        else if constexpr (std::is_same_v<T, FC>) return "fc";
        else if constexpr (std::is_same_v<T, FactorizedConv>) return "factorized_conv";
        else if constexpr (std::is_same_v<T, FactorizedFC>) return "factorized_fc";
        else if constexpr (std::is_same_v<T, BatchNorm>) return "batch_norm";
        else if constexpr (std::is_same_v<T, ReLU>) return "relu";
        else if constexpr (std::is_same_v<T, MaxPool>) return "max_pool";
        else return "softmax";
      },
      op);
}

CountReport count(const ModelGraph& model, const Shape3& input_shape) {
  CountReport report;
  Shape3 s = input_shape;
  for (const auto& layer : model.layers()) {
    const Shape3 out = layer_output_shape(layer.op, s);
    LayerCount lc;
    lc.name = layer.name;
    lc.type = layer_type_name(layer.op);
    lc.params = layer_param_count(layer.op);
    if (std::holds_alternative<Conv>(layer.op)) {
      lc.macs = lc.params * out.height * out.width;
    } else if (const auto* f = std::get_if<FactorizedConv>(&layer.op)) {
      // The 1x1 input projection runs at input resolution; the core and the
      // output projection run at output resolution.
      lc.macs = f->first.size() * s.height * s.width +
                (f->middle.size() + f->last.size() + static_cast<std::int64_t>(f->bias.size())) *
                    out.height * out.width;
    } else if (std::holds_alternative<FC>(layer.op) ||
               std::holds_alternative<FactorizedFC>(layer.op)) {
      lc.macs = lc.params;
    }
    report.per_layer.push_back(lc);
    report.total_params += lc.params;
    report.total_macs += lc.macs;
    s = out;
  }
  return report;
}

}  // namespace nnc

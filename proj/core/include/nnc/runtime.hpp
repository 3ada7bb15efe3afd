#pragma once

#include <cstdint>
#include <vector>

#include "nnc/errors.hpp"
#include "nnc/model.hpp"

namespace nnc {

/// Activation map batch, N x C x H x W, w varying fastest.
struct Blob {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Blob() = default;
  Blob(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }

  double& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  double at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  double* sample(int in) { return v.data() + static_cast<std::size_t>(in) * c * h * w; }
  const double* sample(int in) const {
    return v.data() + static_cast<std::size_t>(in) * c * h * w;
  }
};

/// A labelled batch of images. Labels are class ids in [0, num_classes).
struct Batch {
  Blob inputs;
  std::vector<int> labels;

  int size() const { return inputs.n; }
};

/// Fine-tuning hyperparameters. Epoch counts of 5-15 per compression
/// iteration are the expected range; everything is deterministic under a
/// fixed seed.
struct TrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  /// When set (and an eval split is supplied), training continues past
  /// `epochs` while test error keeps improving, capped at 3 * epochs.
  bool early_stop = false;
};

/// Per-sample class probabilities.
struct Predictions {
  int n = 0;
  int classes = 0;
  std::vector<double> probs;  // n x classes, class fastest

  double at(int sample, int cls) const {
    return probs[static_cast<std::size_t>(sample) * classes + cls];
  }
};

/// Thrown when a training step produces a non-finite loss; carries the most
/// recent finite weights.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, ModelGraph last_finite_state)
      : Error(what), last_finite(std::move(last_finite_state)) {}

  ModelGraph last_finite;
};

/// Deterministic inference pass; batch-norm layers use their stored
/// statistics. Output rows sum to 1.
Predictions forward(const ModelGraph& model, const Blob& inputs);

/// Top-1 accuracy on a labelled batch. Throws InvalidArgument when empty.
double evaluate_accuracy(const ModelGraph& model, const Batch& test);

/// Mean cross-entropy of the model on a batch (eval mode).
double cross_entropy_loss(const ModelGraph& model, const Batch& batch);

/// Mutable view of one trainable array (kernel, weight, bias, bn scale/shift).
struct ParamView {
  double* data = nullptr;
  std::size_t size = 0;
};

/// All trainable arrays of the model in layer order. Batch-norm running
/// statistics are not trainable and are excluded.
std::vector<ParamView> trainable_parameters(ModelGraph& model);

struct GradientSet {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // aligned with trainable_parameters
};

/// One train-mode forward/backward pass: mean cross-entropy over the batch
/// and its gradient for every trainable array. Batch norm uses batch
/// statistics; running statistics are updated only when
/// `update_bn_stats` is set.
GradientSet compute_gradients(ModelGraph& model, const Batch& batch,
                              bool update_bn_stats = false);

struct FineTuneResult {
  ModelGraph model;
  std::vector<double> epoch_losses;
  int epochs_run = 0;
  /// False when the final epoch's loss exceeded the first epoch's; `model`
  /// then holds the best-seen weights instead of the last ones.
  bool loss_decreased = true;
};

/// Mini-batch SGD with momentum. Throws TrainingDiverged on a non-finite
/// loss. A zero learning rate leaves the weights bit-identical.
FineTuneResult fine_tune(const ModelGraph& model, const Batch& train, const TrainConfig& cfg,
                         const Batch* eval_split = nullptr);

/// Layer primitives. Public so tests and benchmarks can drive each layer in
/// isolation (the gradient checks depend on this).
namespace ops {

Blob conv_forward(const Blob& x, const Tensor& kernel, const std::vector<double>& bias,
                  int stride, int padding);
void conv_backward(const Blob& x, const Tensor& kernel, int stride, int padding, const Blob& dy,
                   Blob* dx, Tensor* dkernel, std::vector<double>* dbias);

Blob fc_forward(const Blob& x, const Matrix& weight, const std::vector<double>& bias);
void fc_backward(const Blob& x, const Matrix& weight, const Blob& dy, Blob* dx, Matrix* dweight,
                 std::vector<double>* dbias);

Blob relu_forward(const Blob& x);
Blob relu_backward(const Blob& x, const Blob& dy);

Blob maxpool_forward(const Blob& x, int size, int stride, std::vector<std::int64_t>* argmax);
Blob maxpool_backward(const Blob& dy, const std::vector<std::int64_t>& argmax, int n, int c,
                      int h, int w);

struct BnCache {
  Blob xhat;
  std::vector<double> inv_std;
};

Blob batchnorm_forward_train(const Blob& x, BatchNorm& layer, bool update_running_stats,
                             BnCache* cache);
Blob batchnorm_forward_eval(const Blob& x, const BatchNorm& layer);
Blob batchnorm_backward(const Blob& dy, const BnCache& cache, const BatchNorm& layer,
                        std::vector<double>* dgamma, std::vector<double>* dbeta);

Blob softmax_forward(const Blob& x);

}  // namespace ops

}  // namespace nnc

#include "nnc/reference_model.hpp"

#include <cmath>

#include "nnc/errors.hpp"
#include "nnc/rng.hpp"

namespace nnc {

namespace {

Tensor he_kernel(Rng& rng, int d, int s, int t) {
  Tensor k({d, d, s, t});
  const double stddev = std::sqrt(2.0 / (static_cast<double>(d) * d * s));
  for (double& v : k.values()) v = rng.normal(0.0, stddev);
  return k;
}

Matrix he_weight(Rng& rng, int out, int in) {
  Matrix w(out, in);
  const double stddev = std::sqrt(2.0 / in);
  for (double& v : w.values()) v = rng.normal(0.0, stddev);
  return w;
}

BatchNorm fresh_bn(int channels) {
  BatchNorm bn;
  bn.mean.assign(channels, 0.0);
  bn.variance.assign(channels, 1.0);
  bn.gamma.assign(channels, 1.0);
  bn.beta.assign(channels, 0.0);
  return bn;
}

}  // namespace

ModelGraph build_reference_cnn(std::uint64_t seed, int num_classes, int image_size) {
  if (image_size % 4 != 0) throw InvalidArgument("image size must be divisible by 4");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

  const int c1 = 32, c2 = 64, hidden = 64;
  const int side = image_size / 4;
  const int flat = c2 * side * side;

  std::vector<Layer> layers;
  layers.push_back({"conv1", Conv{he_kernel(rng, 3, 1, c1), std::vector<double>(c1, 0.0), 1, 1}});
  layers.push_back({"bn1", fresh_bn(c1)});
  layers.push_back({"relu1", ReLU{}});
  layers.push_back({"pool1", MaxPool{2, 2}});
  layers.push_back({"conv2", Conv{he_kernel(rng, 3, c1, c2), std::vector<double>(c2, 0.0), 1, 1}});
  layers.push_back({"bn2", fresh_bn(c2)});
  layers.push_back({"relu2", ReLU{}});
  layers.push_back({"pool2", MaxPool{2, 2}});
  layers.push_back({"fc1", FC{he_weight(rng, hidden, flat), std::vector<double>(hidden, 0.0)}});
  layers.push_back({"relu3", ReLU{}});
  layers.push_back(
      {"fc2", FC{he_weight(rng, num_classes, hidden), std::vector<double>(num_classes, 0.0)}});
  layers.push_back({"softmax", Softmax{}});

  return ModelGraph("reference-cnn", "1", Shape3{1, image_size, image_size}, std::move(layers));
}

}  // namespace nnc

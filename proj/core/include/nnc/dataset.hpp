#pragma once

#include <cstdint>
#include <string>

#include "nnc/runtime.hpp"

namespace nnc {

/// Geometry of the synthetic shape-classification task. Classes are
/// parametric figures (rectangle, disk, plus, diagonal stripes, ring) drawn
/// at random positions and sizes over a noisy background. The defaults are
/// sized so the reference CNN trains to >= 0.9 test accuracy in a few minutes
/// of CPU time while leaving enough headroom for compression experiments to
/// measure accuracy differences.
struct DatasetOptions {
  int image_size = 16;
  int num_classes = 5;
  int train_per_class = 300;
  int test_per_class = 160;
  double noise_stddev = 0.18;
};

/// Train and test splits. The splits are disjoint by construction (distinct
/// generator streams) and the test split does not depend on the train sizes.
struct Dataset {
  Batch train;
  Batch test;
  int num_classes = 0;
  std::uint64_t seed = 0;
};

/// Deterministic: the same seed yields identical bytes; different seeds vary
/// the geometry but keep the exact class balance.
Dataset make_dataset(std::uint64_t seed);
Dataset make_dataset(std::uint64_t seed, const DatasetOptions& opts);

/// On-disk cache in the same manifest-plus-float32-blob format as model
/// weights. Writes `<stem>.json` and `<stem>.bin`.
void save_dataset(const Dataset& ds, const std::string& path_stem);
Dataset load_dataset(const std::string& path);

}  // namespace nnc

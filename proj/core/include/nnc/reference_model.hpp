#pragma once

#include <cstdint>

#include "nnc/model.hpp"

namespace nnc {

/// Untrained reference CNN for the synthetic shape task:
/// conv 3x3 1->32 + BN + ReLU + pool2, conv 3x3 32->64 + BN + ReLU + pool2,
/// FC 64*(s/4)^2 -> 64 + ReLU, FC 64 -> classes, softmax.
/// Channel widths are deliberately above the rank-weakening threshold so the
/// compression loop has material to work with. He-normal initialization,
/// deterministic under the seed.
ModelGraph build_reference_cnn(std::uint64_t seed, int num_classes = 5, int image_size = 16);

}  // namespace nnc

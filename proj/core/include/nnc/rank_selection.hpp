#pragma once

#include <map>
#include <string>
#include <vector>

#include "nnc/model.hpp"
#include "nnc/tensor.hpp"

namespace nnc {

/// Number of singular values the global analytic variational-Bayes matrix
/// factorization retains, with the noise variance estimated by minimizing the
/// analytic objective over its admissible interval. Returns a value in
/// [0, min(m, n)]; 0 means the matrix looks like pure noise and callers must
/// clamp to 1 before decomposing. Throws DegenerateInput on an all-zero
/// matrix, InvalidArgument on non-finite entries.
int vbmf_extreme_rank(const Matrix& a);

/// VBMF ranks of the mode-3 and mode-4 unfoldings of a 4-way conv kernel.
/// The spatial modes 1 and 2 are never analyzed.
std::map<int, int> extreme_ranks_for_conv(const Tensor& kernel);

/// VBMF rank of an FC weight matrix.
int extreme_rank_for_fc(const Matrix& weight);

/// Weakened rank: initial - factor * (initial - extreme), rounded half-up and
/// clamped into [extreme, initial]. Layers with initial rank <= 20 pass
/// through unchanged (they are already small enough to keep).
/// Requires 1 <= extreme <= initial and 0 < factor < 1.
int weaken_rank(int initial, int extreme, double factor);

/// Which graph surgery applies to a planned layer.
enum class PlanKind { conv, fc, factorized_conv, factorized_fc };

/// Rank decisions for one layer. Keys of the rank maps are tensor modes
/// (3 and 4 for conv kernels); FC-like layers use the single key 0 for the
/// rank of their weight matrix.
struct RankPlan {
  std::string layer_id;
  int layer_index = -1;
  PlanKind kind = PlanKind::conv;
  std::map<int, int> initial_ranks;
  std::map<int, int> extreme_ranks;
  std::map<int, int> weakened_ranks;
  double weakening_factor = 0.0;
  bool skip = false;
  std::string skip_reason;       // "already-small" | "no-gain" | ""
  bool near_pure_noise = false;  // some mode's VBMF rank came back 0
  std::int64_t params_current = 0;
  std::int64_t params_projected = 0;
};

/// One plan per decomposable layer (conv, fc, and their factorized forms).
/// A layer is marked skip when every analyzable mode is already small
/// (initial rank <= 20), when weakening leaves every rank unchanged, or when
/// the factorized form would not actually shrink the parameter count.
/// With weaken = false the weakened rank is set to the extreme rank itself
/// (the one-time compression baseline). Throws NothingToDo when the model has
/// no decomposable layers at all.
std::vector<RankPlan> build_rank_plan(const ModelGraph& model, double weakening_factor,
                                      bool weaken = true);

}  // namespace nnc

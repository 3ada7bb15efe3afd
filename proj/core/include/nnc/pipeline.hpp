#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnc/dataset.hpp"
#include "nnc/model.hpp"
#include "nnc/rank_selection.hpp"
#include "nnc/runtime.hpp"

namespace nnc {

/// Loop bounds for the iterative compression. The drop threshold is one
/// absolute percentage point by default: an iteration whose fine-tuned
/// accuracy falls that far below its starting accuracy is rejected.
struct StopRule {
  int max_iterations = 4;
  double accuracy_drop_threshold = 0.01;
};

/// Everything observed during one compression iteration. `accepted` is false
/// for the final, rolled-back iteration when the stop rule fired.
struct IterationRecord {
  int iteration = 0;
  std::vector<RankPlan> plans;
  double accuracy_before = 0.0;
  double accuracy_after_decomp = 0.0;
  double accuracy_after_finetune = 0.0;
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
  std::int64_t macs_before = 0;
  std::int64_t macs_after = 0;
  double forward_seconds_before = 0.0;
  double forward_seconds_after = 0.0;
  bool accepted = false;
};

struct CompressionResult {
  ModelGraph model;
  std::vector<IterationRecord> records;
  double original_accuracy = 0.0;
  double final_accuracy = 0.0;
  bool diverged = false;
  bool nothing_to_do = false;
};

/// Iterative low-rank compression: per iteration, measure accuracy, estimate
/// extreme ranks with VBMF, weaken them, substitute factorized layers, and
/// fine-tune. Iterations run while the accuracy drop stays under the stop
/// rule's threshold (both against the iteration start and cumulatively
/// against the original model) and the iteration cap is not reached. A
/// failing iteration is recorded but its model is discarded.
///
/// With weaken = false the weakened ranks collapse to the extreme ranks (the
/// one-time compression baseline; pair with max_iterations = 1).
///
/// Batch-norm layers are folded before the first iteration.
CompressionResult compress(const ModelGraph& model, const Dataset& dataset,
                           double weakening_factor, const TrainConfig& train_cfg,
                           const StopRule& stop, bool weaken = true);

/// Median wall-clock seconds of `passes` full forward sweeps over the batch.
double median_forward_seconds(const ModelGraph& model, const Batch& batch, int passes = 5);

/// Human-readable per-iteration table plus cumulative summary, including the
/// measured forward-time ratio.
std::string render_report(const CompressionResult& result);

/// Machine-readable report. Contains ranks, counts, accuracies and the
/// configuration echo — everything reproducible bit-for-bit under a fixed
/// seed. Wall-clock timings deliberately live in render_report and
/// render_timings only, so this file is byte-identical across reruns.
std::string report_json(const CompressionResult& result, const std::string& config_echo_json);

/// Machine-readable wall-clock sidecar (not reproducible across runs).
std::string render_timings(const CompressionResult& result);

}  // namespace nnc

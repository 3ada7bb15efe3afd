#include "nnc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "nnc/errors.hpp"
#include "nnc/factorization.hpp"

namespace nnc {

namespace {

using nlohmann::json;

// 1x1 kernels compose by matrix product over their channel matricizations;
// merging the Tucker factors of a re-decomposed core into the neighbouring
// projections keeps a factorized stack at three stages across iterations.
Tensor merge_1x1_after(const Tensor& first, const Matrix& factor) {
  // first: (1,1,S,R), factor: (R, R') -> (1,1,S,R')
  const int s = first.extent(3);
  const int r = first.extent(4);
  const int r2 = factor.cols();
  Tensor out({1, 1, s, r2});
  for (int j = 0; j < r2; ++j)
    for (int i = 0; i < s; ++i) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k) acc += first(0, 0, i, k) * factor(k, j);
      out(0, 0, i, j) = acc;
    }
  return out;
}

Tensor merge_1x1_before(const Matrix& factor, const Tensor& last) {
  // factor: (R, R'), last: (1,1,R,T) -> (1,1,R',T)
  const int r = last.extent(3);
  const int t = last.extent(4);
  const int r2 = factor.cols();
  Tensor out({1, 1, r2, t});
  for (int j = 0; j < t; ++j)
    for (int i = 0; i < r2; ++i) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k) acc += factor(k, i) * last(0, 0, k, j);
      out(0, 0, i, j) = acc;
    }
  return out;
}

void apply_plan(ModelGraph& model, const RankPlan& plan) {
  Layer& layer = model.layers()[plan.layer_index];
  switch (plan.kind) {
    case PlanKind::conv: {
      const auto& conv = std::get<Conv>(layer.op);
      const TuckerResult tucker = hosvd(
          conv.kernel, {{3, plan.weakened_ranks.at(3)}, {4, plan.weakened_ranks.at(4)}});
      layer.op = substitute_conv(conv, tucker);
      break;
    }
    case PlanKind::fc: {
      const auto& fc = std::get<FC>(layer.op);
      const SvdResult svd = truncated_svd(fc.weight, plan.weakened_ranks.at(0));
      layer.op = substitute_fc(fc, svd);
      break;
    }
    case PlanKind::factorized_conv: {
      auto& fconv = std::get<FactorizedConv>(layer.op);
      const TuckerResult tucker = hosvd(
          fconv.middle, {{3, plan.weakened_ranks.at(3)}, {4, plan.weakened_ranks.at(4)}});
      fconv.first = merge_1x1_after(fconv.first, tucker.factors.at(3));
      fconv.last = merge_1x1_before(tucker.factors.at(4), fconv.last);
      fconv.middle = tucker.core;
      break;
    }
    case PlanKind::factorized_fc: {
      auto& ffc = std::get<FactorizedFC>(layer.op);
      const int p = plan.weakened_ranks.at(0);
      const SvdResult svd = truncated_svd(ffc.first, p);
      // first = U S V^T: keep sqrt(S) V^T in place and push U sqrt(S) into last.
      Matrix new_first(p, ffc.in_features());
      Matrix carry(ffc.first.rows(), p);
      for (int k = 0; k < p; ++k) {
        const double rs = std::sqrt(svd.s[k]);
        for (int j = 0; j < ffc.in_features(); ++j) new_first(k, j) = rs * svd.v(j, k);
        for (int i = 0; i < ffc.first.rows(); ++i) carry(i, k) = rs * svd.u(i, k);
      }
      ffc.last = matmul(ffc.last, carry);
      ffc.first = std::move(new_first);
      break;
    }
  }
}

bool model_has_batchnorm(const ModelGraph& m) {
  for (const auto& l : m.layers())
    if (std::holds_alternative<BatchNorm>(l.op)) return true;
  return false;
}

json plan_to_json(const RankPlan& plan) {
  json j;
  j["layer"] = plan.layer_id;
  j["kind"] = plan.kind == PlanKind::conv             ? "conv"
              : plan.kind == PlanKind::fc             ? "fc"
              : plan.kind == PlanKind::factorized_conv ? "factorized_conv"
                                                        : "factorized_fc";
  auto ranks = [](const std::map<int, int>& m) {
    json out = json::object();
    for (const auto& [mode, r] : m) out[std::to_string(mode)] = r;
    return out;
  };
  j["initial_ranks"] = ranks(plan.initial_ranks);
  j["extreme_ranks"] = ranks(plan.extreme_ranks);
  j["weakened_ranks"] = ranks(plan.weakened_ranks);
  j["skip"] = plan.skip;
  if (plan.skip) j["skip_reason"] = plan.skip_reason;
  if (plan.near_pure_noise) j["near_pure_noise"] = true;
  j["params_current"] = plan.params_current;
  j["params_projected"] = plan.params_projected;
  return j;
}

}  // namespace

double median_forward_seconds(const ModelGraph& model, const Batch& batch, int passes) {
  std::vector<double> times;
  times.reserve(passes);
  for (int i = 0; i < passes; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)evaluate_accuracy(model, batch);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

CompressionResult compress(const ModelGraph& input_model, const Dataset& dataset,
                           double weakening_factor, const TrainConfig& train_cfg,
                           const StopRule& stop, bool weaken) {
  if (stop.max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!(stop.accuracy_drop_threshold > 0.0 && stop.accuracy_drop_threshold < 1.0))
    throw InvalidArgument("accuracy drop threshold must lie in (0, 1)");

  CompressionResult result;
  result.model = model_has_batchnorm(input_model) ? fold_batchnorm(input_model) : input_model;

  const Shape3 in_shape = result.model.input_shape();
  const double original_accuracy = evaluate_accuracy(result.model, dataset.test);
  result.original_accuracy = original_accuracy;
  result.final_accuracy = original_accuracy;
  const double base_forward_seconds = median_forward_seconds(result.model, dataset.test);

  for (int iteration = 1; iteration <= stop.max_iterations; ++iteration) {
    IterationRecord rec;
    rec.iteration = iteration;
    rec.accuracy_before = evaluate_accuracy(result.model, dataset.test);
    rec.forward_seconds_before =
        iteration == 1 ? base_forward_seconds : result.records.back().forward_seconds_after;

    std::vector<RankPlan> plans;
    try {
      plans = build_rank_plan(result.model, weakening_factor, weaken);
    } catch (const NothingToDo&) {
      if (result.records.empty()) result.nothing_to_do = true;
      return result;
    }
    const bool all_skipped =
        std::all_of(plans.begin(), plans.end(), [](const RankPlan& p) { return p.skip; });
    if (all_skipped) {
      if (result.records.empty()) result.nothing_to_do = true;
      return result;
    }
    rec.plans = plans;

    const CountReport before = count(result.model, in_shape);
    rec.params_before = before.total_params;
    rec.macs_before = before.total_macs;

    ModelGraph candidate = result.model;
    for (const auto& plan : plans)
      if (!plan.skip) apply_plan(candidate, plan);
    candidate.validate();

    const CountReport after = count(candidate, in_shape);
    rec.params_after = after.total_params;
    rec.macs_after = after.total_macs;
    rec.accuracy_after_decomp = evaluate_accuracy(candidate, dataset.test);

    TrainConfig cfg = train_cfg;
    cfg.seed = train_cfg.seed + static_cast<std::uint64_t>(iteration);
    FineTuneResult ft;
    try {
      ft = fine_tune(candidate, dataset.train, cfg,
                     cfg.early_stop ? &dataset.test : nullptr);
    } catch (const TrainingDiverged&) {
      rec.accuracy_after_finetune = rec.accuracy_after_decomp;
      rec.accepted = false;
      rec.forward_seconds_after = rec.forward_seconds_before;
      result.records.push_back(std::move(rec));
      result.diverged = true;
      return result;
    }
    rec.accuracy_after_finetune = evaluate_accuracy(ft.model, dataset.test);
    rec.forward_seconds_after = median_forward_seconds(ft.model, dataset.test);

    const double iteration_drop = rec.accuracy_before - rec.accuracy_after_finetune;
    const double cumulative_drop = original_accuracy - rec.accuracy_after_finetune;
    if (iteration_drop >= stop.accuracy_drop_threshold ||
        cumulative_drop >= stop.accuracy_drop_threshold) {
      rec.accepted = false;
      result.records.push_back(std::move(rec));
      return result;  // discard the failing iteration's model
    }

    rec.accepted = true;
    result.records.push_back(std::move(rec));
    result.model = std::move(ft.model);
    result.final_accuracy = rec.accuracy_after_finetune;
  }
  return result;
}

std::string render_report(const CompressionResult& result) {
  std::ostringstream os;
  char line[256];
  os << "iter  acc.before  acc.decomp  acc.tuned  params        MACs          fwd ratio  "
        "status\n";
  for (const auto& r : result.records) {
    const double fwd_ratio =
        r.forward_seconds_after > 0.0 ? r.forward_seconds_before / r.forward_seconds_after : 0.0;
    std::snprintf(line, sizeof(line),
                  "%-5d %9.4f  %9.4f  %9.4f  %7lld->%-7lld %8lld->%-8lld %8.2fx  %s\n",
                  r.iteration, r.accuracy_before, r.accuracy_after_decomp,
                  r.accuracy_after_finetune, static_cast<long long>(r.params_before),
                  static_cast<long long>(r.params_after), static_cast<long long>(r.macs_before),
                  static_cast<long long>(r.macs_after), fwd_ratio,
                  r.accepted ? "accepted" : "rejected (rolled back)");
    os << line;
  }
  if (result.records.empty()) {
    os << "(no iterations ran";
    if (result.nothing_to_do) os << ": nothing to do";
    os << ")\n";
    return os.str();
  }

  std::int64_t params_start = result.records.front().params_before;
  std::int64_t macs_start = result.records.front().macs_before;
  std::int64_t params_end = params_start;
  std::int64_t macs_end = macs_start;
  double fwd_start = result.records.front().forward_seconds_before;
  double fwd_end = fwd_start;
  for (const auto& r : result.records) {
    if (!r.accepted) continue;
    params_end = r.params_after;
    macs_end = r.macs_after;
    fwd_end = r.forward_seconds_after;
  }
  std::snprintf(line, sizeof(line),
                "cumulative: params %.2fx, MACs %.2fx, forward time %.2fx, accuracy %+.4f "
                "(%0.4f -> %0.4f)\n",
                params_end > 0 ? static_cast<double>(params_start) / params_end : 0.0,
                macs_end > 0 ? static_cast<double>(macs_start) / macs_end : 0.0,
                fwd_end > 0.0 ? fwd_start / fwd_end : 0.0,
                result.final_accuracy - result.original_accuracy, result.original_accuracy,
                result.final_accuracy);
  os << line;
  if (result.diverged) os << "aborted: training diverged\n";
  return os.str();
}

std::string report_json(const CompressionResult& result, const std::string& config_echo_json) {
  json j;
  j["format"] = "nncompress-report";
  j["format_version"] = 1;
  // Fixed algorithm policies, stated so every report is self-describing.
  j["policy"] = {{"weakening_threshold", "per-mode"},
                 {"refactorization", "factorized layers re-analyzed directly"},
                 {"drop_gate", "per-iteration and cumulative"}};
  if (!config_echo_json.empty()) j["config"] = json::parse(config_echo_json);
  j["original_accuracy"] = result.original_accuracy;
  j["final_accuracy"] = result.final_accuracy;
  j["accuracy_delta"] = result.final_accuracy - result.original_accuracy;
  j["diverged"] = result.diverged;
  j["nothing_to_do"] = result.nothing_to_do;

  json iters = json::array();
  for (const auto& r : result.records) {
    json ji;
    ji["iteration"] = r.iteration;
    ji["accepted"] = r.accepted;
    ji["accuracy_before"] = r.accuracy_before;
    ji["accuracy_after_decomp"] = r.accuracy_after_decomp;
    ji["accuracy_after_finetune"] = r.accuracy_after_finetune;
    ji["params_before"] = r.params_before;
    ji["params_after"] = r.params_after;
    ji["macs_before"] = r.macs_before;
    ji["macs_after"] = r.macs_after;
    json plans = json::array();
    for (const auto& p : r.plans) plans.push_back(plan_to_json(p));
    ji["plans"] = std::move(plans);
    iters.push_back(std::move(ji));
  }
  j["iterations"] = std::move(iters);

  if (!result.records.empty()) {
    std::int64_t params_end = result.records.front().params_before;
    std::int64_t macs_end = result.records.front().macs_before;
    for (const auto& r : result.records)
      if (r.accepted) {
        params_end = r.params_after;
        macs_end = r.macs_after;
      }
    j["cumulative"] = {
        {"params_ratio",
         params_end > 0
             ? static_cast<double>(result.records.front().params_before) / params_end
             : 0.0},
        {"macs_ratio",
         macs_end > 0 ? static_cast<double>(result.records.front().macs_before) / macs_end
                      : 0.0},
    };
  }
  return j.dump(2) + "\n";
}

std::string render_timings(const CompressionResult& result) {
  json j;
  j["format"] = "nncompress-timings";
  json iters = json::array();
  for (const auto& r : result.records) {
    iters.push_back({{"iteration", r.iteration},
                     {"forward_seconds_before", r.forward_seconds_before},
                     {"forward_seconds_after", r.forward_seconds_after}});
  }
  j["iterations"] = std::move(iters);
  return j.dump(2) + "\n";
}

}  // namespace nnc

#include "nnc/rank_selection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nnc/errors.hpp"
#include "nnc/factorization.hpp"

namespace nnc {

namespace {

// Empirical variational Bayes objective for a candidate noise variance.
// `s` is the full singular spectrum of the (L x M)-oriented matrix, L <= M.
// The spectrum is split at x_bar = (1 + tau_bar)(1 + alpha / tau_bar): values
// above it can carry signal and contribute through tau(x); values below it
// are explained as noise.
double evb_objective(double sigma2, int l_dim, int m_dim, const std::vector<double>& s,
                     double x_bar) {
  const double alpha = static_cast<double>(l_dim) / m_dim;
  double obj = 0.0;
  for (double sv : s) {
    double x = (sv * sv) / (m_dim * sigma2);
    if (x < 1e-300) x = 1e-300;
    if (x <= x_bar) {
      obj += x - std::log(x);
    } else {
      const double b = x - (1.0 + alpha);
      const double tau = 0.5 * (b + std::sqrt(b * b - 4.0 * alpha));
      obj += x - tau;
      obj += std::log((tau + 1.0) / x);
      obj += alpha * std::log(tau / alpha + 1.0);
    }
  }
  return obj;
}

double golden_section_minimize(double lo, double hi, int l_dim, int m_dim,
                               const std::vector<double>& s, double x_bar) {
  if (!(lo < hi)) return lo;
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = evb_objective(c, l_dim, m_dim, s, x_bar);
  double fd = evb_objective(d, l_dim, m_dim, s, x_bar);
  for (int it = 0; it < 200 && (b - a) > 1e-14 * hi; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = evb_objective(c, l_dim, m_dim, s, x_bar);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = evb_objective(d, l_dim, m_dim, s, x_bar);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

int vbmf_extreme_rank(const Matrix& a) {
  for (double v : a.values())
    if (!std::isfinite(v)) throw InvalidArgument("vbmf: input has non-finite entries");

  double norm2 = 0.0;
  for (double v : a.values()) norm2 += v * v;
  if (norm2 == 0.0) throw DegenerateInput("vbmf: all-zero matrix has no rank structure");

  const int l_dim = std::min(a.rows(), a.cols());
  const int m_dim = std::max(a.rows(), a.cols());
  const double alpha = static_cast<double>(l_dim) / m_dim;
  const double tau_bar = 2.5129 * std::sqrt(alpha);
  const double x_bar = (1.0 + tau_bar) * (1.0 + alpha / tau_bar);

  const std::vector<double> s = singular_values(a);  // length l_dim, non-increasing

  // The EVB solution never keeps more than ceil(L*M / (M+L)) - 1 components;
  // the spectrum past that index bounds the noise variance from below, and
  // the total energy bounds it from above.
  const std::int64_t lm = static_cast<std::int64_t>(l_dim) * m_dim;
  int max_keep = static_cast<int>((lm + m_dim + l_dim - 1) / (m_dim + l_dim)) - 1;
  max_keep = std::clamp(max_keep, 0, l_dim);
  const int tail_start = std::min(max_keep, l_dim - 1);

  double tail_mean_sq = 0.0;
  for (int i = tail_start; i < l_dim; ++i) tail_mean_sq += s[i] * s[i];
  tail_mean_sq /= (l_dim - tail_start);

  double lower = std::max(s[tail_start] * s[tail_start] / (m_dim * x_bar), tail_mean_sq / m_dim);
  const double upper = norm2 / lm;
  if (lower <= 0.0) lower = upper * 1e-18;
  if (lower >= upper) lower = upper * (1.0 - 1e-12);

  const double sigma2 = golden_section_minimize(lower, upper, l_dim, m_dim, s, x_bar);

  const double threshold = std::sqrt(m_dim * sigma2 * x_bar);
  int rank = 0;
  for (double sv : s) {
    if (sv > threshold) ++rank;
  }
  return rank;
}

std::map<int, int> extreme_ranks_for_conv(const Tensor& kernel) {
  if (kernel.order() != 4) throw InvalidArgument("extreme_ranks_for_conv needs a 4-way kernel");
  std::map<int, int> out;
  out[3] = vbmf_extreme_rank(matricize(kernel, 3));
  out[4] = vbmf_extreme_rank(matricize(kernel, 4));
  return out;
}

int extreme_rank_for_fc(const Matrix& weight) { return vbmf_extreme_rank(weight); }

int weaken_rank(int initial, int extreme, double factor) {
  if (extreme < 1 || extreme > initial)
    throw InvalidArgument("weaken_rank: extreme rank must lie in [1, initial]");
  if (!(factor > 0.0 && factor < 1.0))
    throw InvalidArgument("weaken_rank: weakening factor must lie in (0, 1)");
  if (initial <= 20) return initial;
  const double w = initial - factor * (initial - extreme);
  const int rounded = static_cast<int>(std::floor(w + 0.5));
  return std::clamp(rounded, extreme, initial);
}

namespace {

// Shared plan assembly once the per-mode initial ranks and the matrices to
// analyze are known. `units` maps mode key -> (initial rank, matrix).
RankPlan make_plan(std::string layer_id, int index, PlanKind kind,
                   const std::vector<std::pair<int, std::pair<int, Matrix>>>& units,
                   double factor, bool weaken) {
  RankPlan plan;
  plan.layer_id = std::move(layer_id);
  plan.layer_index = index;
  plan.kind = kind;
  plan.weakening_factor = factor;

  bool all_small = true;
  for (const auto& [mode, unit] : units) {
    plan.initial_ranks[mode] = unit.first;
    if (unit.first > 20) all_small = false;
  }
  if (all_small) {
    plan.skip = true;
    plan.skip_reason = "already-small";
  }

  for (const auto& [mode, unit] : units) {
    const int initial = unit.first;
    int extreme = vbmf_extreme_rank(unit.second);
    if (extreme == 0) {
      extreme = 1;
      plan.near_pure_noise = true;
    }
    extreme = std::min(extreme, initial);
    plan.extreme_ranks[mode] = extreme;
    plan.weakened_ranks[mode] =
        weaken ? weaken_rank(initial, extreme, factor) : std::min(extreme, initial);
  }

  if (!plan.skip) {
    bool any_change = false;
    for (const auto& [mode, w] : plan.weakened_ranks)
      if (w != plan.initial_ranks[mode]) any_change = true;
    if (!any_change) {
      plan.skip = true;
      plan.skip_reason = "no-gain";
    }
  }
  return plan;
}

std::int64_t projected_factorized_conv_params(int d, int s, int t, int r3, int r4,
                                              std::size_t bias_len) {
  return static_cast<std::int64_t>(s) * r3 + static_cast<std::int64_t>(d) * d * r3 * r4 +
         static_cast<std::int64_t>(r4) * t + static_cast<std::int64_t>(bias_len);
}

}  // namespace

std::vector<RankPlan> build_rank_plan(const ModelGraph& model, double weakening_factor,
                                      bool weaken) {
  if (weaken && !(weakening_factor > 0.0 && weakening_factor < 1.0))
    throw InvalidArgument("weakening factor must lie in (0, 1)");

  std::vector<RankPlan> plans;
  const auto& layers = model.layers();
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const Layer& layer = layers[i];

    if (const auto* conv = std::get_if<Conv>(&layer.op)) {
      std::vector<std::pair<int, std::pair<int, Matrix>>> units;
      units.emplace_back(3, std::make_pair(conv->in_channels(), matricize(conv->kernel, 3)));
      units.emplace_back(4, std::make_pair(conv->out_channels(), matricize(conv->kernel, 4)));
      RankPlan plan =
          make_plan(layer.name, i, PlanKind::conv, units, weakening_factor, weaken);
      plan.params_current = layer_param_count(layer.op);
      plan.params_projected = projected_factorized_conv_params(
          conv->kernel_size(), conv->in_channels(), conv->out_channels(),
          plan.weakened_ranks[3], plan.weakened_ranks[4], conv->bias.size());
      if (!plan.skip && plan.params_projected >= plan.params_current) {
        plan.skip = true;
        plan.skip_reason = "no-gain";
      }
      plans.push_back(std::move(plan));
    } else if (const auto* fc = std::get_if<FC>(&layer.op)) {
      const int initial = std::min(fc->in_features(), fc->out_features());
      std::vector<std::pair<int, std::pair<int, Matrix>>> units;
      units.emplace_back(0, std::make_pair(initial, fc->weight));
      RankPlan plan = make_plan(layer.name, i, PlanKind::fc, units, weakening_factor, weaken);
      plan.params_current = layer_param_count(layer.op);
      const std::int64_t p = plan.weakened_ranks[0];
      plan.params_projected =
          p * (fc->in_features() + fc->out_features()) + static_cast<std::int64_t>(fc->bias.size());
      if (!plan.skip && plan.params_projected >= plan.params_current) {
        plan.skip = true;
        plan.skip_reason = "no-gain";
      }
      plans.push_back(std::move(plan));
    } else if (const auto* fconv = std::get_if<FactorizedConv>(&layer.op)) {
      // Re-analysis runs on the factorized stack directly: the core kernel's
      // channel modes carry the stack's inner ranks.
      std::vector<std::pair<int, std::pair<int, Matrix>>> units;
      units.emplace_back(3, std::make_pair(fconv->rank3(), matricize(fconv->middle, 3)));
      units.emplace_back(4, std::make_pair(fconv->rank4(), matricize(fconv->middle, 4)));
      RankPlan plan =
          make_plan(layer.name, i, PlanKind::factorized_conv, units, weakening_factor, weaken);
      plan.params_current = layer_param_count(layer.op);
      plan.params_projected =
          static_cast<std::int64_t>(fconv->in_channels()) * plan.weakened_ranks[3] +
          static_cast<std::int64_t>(fconv->kernel_size()) * fconv->kernel_size() *
              plan.weakened_ranks[3] * plan.weakened_ranks[4] +
          static_cast<std::int64_t>(plan.weakened_ranks[4]) * fconv->out_channels() +
          static_cast<std::int64_t>(fconv->bias.size());
      if (!plan.skip && plan.params_projected >= plan.params_current) {
        plan.skip = true;
        plan.skip_reason = "no-gain";
      }
      plans.push_back(std::move(plan));
    } else if (const auto* ffc = std::get_if<FactorizedFC>(&layer.op)) {
      // Both factors see the shared inner rank; the retained subspace must
      // carry the signal of each, so their VBMF estimates are combined with
      // max before weakening.
      const int p = ffc->inner_rank();
      RankPlan plan;
      plan.layer_id = layer.name;
      plan.layer_index = i;
      plan.kind = PlanKind::factorized_fc;
      plan.weakening_factor = weakening_factor;
      plan.initial_ranks[0] = p;
      int e_first = vbmf_extreme_rank(ffc->first);
      int e_last = vbmf_extreme_rank(ffc->last);
      if (e_first == 0 || e_last == 0) plan.near_pure_noise = true;
      int extreme = std::clamp(std::max(e_first, e_last), 1, p);
      plan.extreme_ranks[0] = extreme;
      plan.weakened_ranks[0] = weaken ? weaken_rank(p, extreme, weakening_factor) : extreme;
      if (p <= 20) {
        plan.skip = true;
        plan.skip_reason = "already-small";
      } else if (plan.weakened_ranks[0] == p) {
        plan.skip = true;
        plan.skip_reason = "no-gain";
      }
      plan.params_current = layer_param_count(layer.op);
      plan.params_projected = static_cast<std::int64_t>(plan.weakened_ranks[0]) *
                                  (ffc->in_features() + ffc->out_features()) +
                              static_cast<std::int64_t>(ffc->bias.size());
      if (!plan.skip && plan.params_projected >= plan.params_current) {
        plan.skip = true;
        plan.skip_reason = "no-gain";
      }
      plans.push_back(std::move(plan));
    }
  }

  if (plans.empty()) throw NothingToDo("model has no decomposable layers");
  return plans;
}

}  // namespace nnc

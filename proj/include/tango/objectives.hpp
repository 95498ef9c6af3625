#pragma once

// Weighted multi-task loss and evaluation metrics.

#include <span>
#include <string_view>
#include <vector>

#include "tango/autodiff.hpp"
#include "tango/networks.hpp"

namespace tango::obj {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kRmseEpsilon = 1e-12;

struct LossWeights {
  double asr = 0.33;
  double ser = 0.33;
  double gr = 0.33;
  double ae = 0.33;

  // Every weight >= 0 and at least one > 0.
  void validate() const;
  // "a,b,c,d" in ASR, SER, GR, AE order.
  static LossWeights parse(std::string_view text);
};

struct TaskLosses {
  double ce_asr = 0.0;
  double ce_ser = 0.0;
  double bce_gr = 0.0;
  double rmse_ae = 0.0;
  double ot_align = 0.0;
  double total = 0.0;
};

// Labels for one batch. Age is on the standardized scale the model predicts.
struct BatchTargets {
  std::vector<std::size_t> speaker;
  std::vector<std::size_t> emotion;
  std::vector<int> gender;
  std::vector<double> age;
};

struct LossVars {
  ad::Var total;
  TaskLosses values;
};

// Tasks the model does not produce contribute nothing. `ot_weight` adds
// ot_weight * mean_b <plan_b, cost_b> when the outputs carry a plan.
LossVars multitask_loss(ad::Graph& g, const nets::ForwardVars& outputs,
                        const BatchTargets& targets, const LossWeights& w,
                        double ot_weight = 0.0);

// Same loss evaluated on materialized outputs.
TaskLosses multitask_loss(const std::vector<nets::TaskOutputs>& outputs,
                          const BatchTargets& targets, const LossWeights& w);

// First index of the maximum.
std::size_t argmax(std::span<const double> values);

// Percentage of equal entries.
double accuracy(std::span<const std::size_t> predictions,
                std::span<const std::size_t> targets);
double rmse(std::span<const double> predictions,
            std::span<const double> targets);

}  // namespace tango::obj

#include "tango/objectives.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "tango/errors.hpp"
#include "tango/ops.hpp"

namespace tango::obj {

using ad::Graph;
using ad::Tensor;
using ad::Var;

void LossWeights::validate() const {
  for (double v : {asr, ser, gr, ae}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("loss weights must be finite and >= 0");
    }
  }
  if (asr + ser + gr + ae <= 0.0) {
    throw ConfigError("at least one loss weight must be > 0");
  }
}

LossWeights LossWeights::parse(std::string_view text) {
  std::vector<double> values;
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("loss weights: cannot parse '" + item + "'");
    }
  }
  if (values.size() != 4) {
    throw ConfigError("loss weights: expected 4 comma-separated values");
  }
  LossWeights w{values[0], values[1], values[2], values[3]};
  w.validate();
  return w;
}

namespace {

Var cross_entropy(Graph& g, Var probs, const std::vector<std::size_t>& labels,
                  const char* task) {
  const auto& p = g.value(probs);
  if (labels.size() != p.dim(0)) {
    throw ContractError(std::string(task) + ": " +
                        std::to_string(labels.size()) + " labels for batch " +
                        std::to_string(p.dim(0)));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= p.dim(1)) {
      throw DataError(std::string(task) + " label " +
                      std::to_string(labels[i]) + " out of range [0, " +
                      std::to_string(p.dim(1)) + ") at sample " +
                      std::to_string(i));
    }
  }
  Var picked = ad::gather(g, probs, labels);
  Var logp = ad::log_clamped(g, picked, kProbabilityFloor,
                             1.0 - kProbabilityFloor);
  return ad::affine(g, ad::mean(g, logp), -1.0);
}

Var binary_cross_entropy(Graph& g, Var prob, const std::vector<int>& labels) {
  const auto& p = g.value(prob);
  const std::size_t n = p.dim(0);
  if (labels.size() != n) {
    throw ContractError("gr: label count does not match batch");
  }
  Tensor y({n, 1}), not_y({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw DataError("gr label " + std::to_string(labels[i]) +
                      " is not 0/1 at sample " + std::to_string(i));
    }
    y[i] = labels[i];
    not_y[i] = 1 - labels[i];
  }
  Var log_p = ad::log_clamped(g, prob, kProbabilityFloor,
                              1.0 - kProbabilityFloor);
  Var log_q = ad::log_clamped(g, ad::affine(g, prob, -1.0, 1.0),
                              kProbabilityFloor, 1.0 - kProbabilityFloor);
  Var terms = ad::add(g, ad::mul(g, g.constant(std::move(y), "gr.target"), log_p),
                      ad::mul(g, g.constant(std::move(not_y), "gr.target"), log_q));
  return ad::affine(g, ad::mean(g, terms), -1.0);
}

Var root_mean_square(Graph& g, Var pred, const std::vector<double>& target) {
  const auto& p = g.value(pred);
  if (target.size() != p.dim(0)) {
    throw ContractError("ae: target count does not match batch");
  }
  Var diff = ad::sub(g, pred,
                     g.constant(Tensor(p.shape, target), "ae.target"));
  return ad::sqrt_eps(g, ad::mean(g, ad::mul(g, diff, diff)), kRmseEpsilon);
}

}  // namespace

LossVars multitask_loss(Graph& g, const nets::ForwardVars& outputs,
                        const BatchTargets& targets, const LossWeights& w,
                        double ot_weight) {
  std::vector<std::pair<Var, double>> terms;
  LossVars out;
  if (outputs.asr) {
    Var l = cross_entropy(g, *outputs.asr, targets.speaker, "asr");
    out.values.ce_asr = g.value(l)[0];
    terms.emplace_back(l, w.asr);
  }
  if (outputs.ser) {
    Var l = cross_entropy(g, *outputs.ser, targets.emotion, "ser");
    out.values.ce_ser = g.value(l)[0];
    terms.emplace_back(l, w.ser);
  }
  if (outputs.gr) {
    Var l = binary_cross_entropy(g, *outputs.gr, targets.gender);
    out.values.bce_gr = g.value(l)[0];
    terms.emplace_back(l, w.gr);
  }
  if (outputs.ae) {
    Var l = root_mean_square(g, *outputs.ae, targets.age);
    out.values.rmse_ae = g.value(l)[0];
    terms.emplace_back(l, w.ae);
  }
  if (ot_weight > 0.0 && outputs.plan && outputs.cost) {
    const double batch = static_cast<double>(g.shape(*outputs.cost)[0]);
    Var l = ad::affine(
        g, ad::sum(g, ad::mul(g, *outputs.plan, *outputs.cost)), 1.0 / batch);
    out.values.ot_align = g.value(l)[0];
    terms.emplace_back(l, ot_weight);
  }
  if (terms.empty()) throw ContractError("multitask_loss: no task outputs");
  Var total = ad::affine(g, terms[0].first, terms[0].second);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    total = ad::add(g, total, ad::affine(g, terms[i].first, terms[i].second));
  }
  out.total = total;
  out.values.total = g.value(total)[0];
  return out;
}

TaskLosses multitask_loss(const std::vector<nets::TaskOutputs>& outputs,
                          const BatchTargets& targets, const LossWeights& w) {
  if (outputs.empty()) throw ContractError("multitask_loss: empty batch");
  const std::size_t n = outputs.size();
  Graph g;
  nets::ForwardVars vars;
  auto stack = [&](auto getter, std::size_t width) {
    Tensor t({n, width});
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = getter(outputs[i]);
      if (row.size() != width) {
        throw ShapeError("multitask_loss: ragged outputs in batch");
      }
      std::copy(row.begin(), row.end(), t.data.begin() + i * width);
    }
    return g.constant(std::move(t));
  };
  const auto& first = outputs.front();
  if (first.asr) {
    vars.asr = stack([](const auto& o) { return o.asr.value(); },
                     first.asr->size());
  }
  if (first.ser) {
    vars.ser = stack([](const auto& o) { return o.ser.value(); },
                     first.ser->size());
  }
  if (first.gr) {
    vars.gr = stack(
        [](const auto& o) { return std::vector<double>{o.gr.value()}; }, 1);
  }
  if (first.ae) {
    vars.ae = stack(
        [](const auto& o) { return std::vector<double>{o.ae.value()}; }, 1);
  }
  return multitask_loss(g, vars, targets, w).values;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double accuracy(std::span<const std::size_t> predictions,
                std::span<const std::size_t> targets) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ContractError("accuracy: need equal, non-empty sequences");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    hits += predictions[i] == targets[i];
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(predictions.size());
}

double rmse(std::span<const double> predictions,
            std::span<const double> targets) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ContractError("rmse: need equal, non-empty sequences");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(predictions.size()));
}

}  // namespace tango::obj

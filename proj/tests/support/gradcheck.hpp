#pragma once

// Central finite-difference checks for graph operations and whole models.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tango/autodiff.hpp"
#include "tango/networks.hpp"
#include "tango/objectives.hpp"
#include "tango/ops.hpp"
#include "tango/ot.hpp"

namespace tango::check {

// Two estimates: a narrow two-point difference (suffers roundoff on tiny
// gradients) and a wider fourth-order stencil (suffers when it straddles a
// relu or max-pool switch). A wrong analytic gradient disagrees with both.
inline constexpr double kNarrowStep = 1e-6;
inline constexpr double kWideStep = 1e-4;
inline constexpr double kGradTolerance = 1e-4;
// Below this magnitude both gradients count as zero and the absolute
// difference is compared instead.
inline constexpr double kGradFloor = 1e-6;

struct GradReport {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
};

struct Differences {
  double narrow = 0.0;
  double wide = 0.0;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradFloor});
}

inline double relative_error(double a, const Differences& d) {
  return std::min(relative_error(a, d.narrow), relative_error(a, d.wide));
}

template <typename F>
Differences central_differences(double& x, F& f) {
  const double keep = x;
  auto at = [&](double offset) {
    x = keep + offset;
    return f(false);
  };
  Differences d;
  d.narrow = (at(kNarrowStep) - at(-kNarrowStep)) / (2 * kNarrowStep);
  const double h = kWideStep;
  d.wide = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  x = keep;
  return d;
}

inline std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n,
                                         double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline ad::Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape,
                                double scale = 1.0) {
  const auto n = ad::element_count(shape);
  return ad::Tensor(std::move(shape), normal_values(rng, n, scale));
}

// Builds an output from the inputs (bound as parameters); it is reduced to
// a scalar with fixed random weights.
using OpBuilder =
    std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

inline GradReport check_op(std::vector<ad::Tensor> inputs,
                           const OpBuilder& build, std::uint64_t seed) {
  std::vector<double> weights;
  auto evaluate = [&](bool backward) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(g.parameter(t, "x"));
    const ad::Var out = build(g, vars);
    if (weights.empty()) {
      std::mt19937_64 wrng(seed ^ 0x9e3779b97f4a7c15ULL);
      weights = normal_values(wrng, g.value(out).size());
    }
    const ad::Var w = g.constant(ad::Tensor(g.shape(out), weights), "w");
    const ad::Var loss = ad::sum(g, ad::mul(g, out, w));
    if (backward) g.backward(loss);
    return g.value(loss)[0];
  };

  for (auto& t : inputs) {
    t.requires_grad = true;
    t.zero_grad();
  }
  evaluate(true);
  GradReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> analytic = inputs[k].grad;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const auto numeric = central_differences(inputs[k].data[i], evaluate);
      const double err = relative_error(analytic[i], numeric);
      ++report.checked;
      if (err > report.worst) {
        report.worst = err;
        report.where = "input " + std::to_string(k) + "[" + std::to_string(i) +
                       "] analytic " + fmt(analytic[i]) +
                       " numeric " + fmt(numeric.narrow) + "/" + fmt(numeric.wide);
      }
    }
  }
  return report;
}

struct OpCase {
  std::string name;
  // Draws inputs for one seed.
  std::function<std::vector<ad::Tensor>(std::mt19937_64&)> inputs;
  OpBuilder build;
};

// Positive values away from zero, for log and sqrt.
inline ad::Tensor positive_tensor(std::mt19937_64& rng, ad::Shape shape) {
  std::uniform_real_distribution<double> dist(0.2, 2.0);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

inline std::vector<OpCase> op_cases() {
  using ad::Graph;
  using ad::Tensor;
  using ad::Var;
  using Inputs = std::vector<Tensor>;
  std::vector<OpCase> cases;
  auto add = [&](std::string name, auto inputs, OpBuilder build) {
    cases.push_back({std::move(name), inputs, std::move(build)});
  };

  add("matmul", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::matmul(g, x[0], x[1]); });
  add("matmul_batched", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {2, 3, 4}), random_tensor(r, {2, 4, 3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::matmul(g, x[0], x[1]); });
  add("transpose", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {2, 3, 4})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::transpose(g, x[0]); });
  add("reshape", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {2, 6})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::reshape(g, x[0], {3, 4}); });
  add("concat", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {2, 3, 2}), random_tensor(r, {2, 3, 4})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::concat(g, x[0], x[1]); });
  add("add", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {3, 3}), random_tensor(r, {3, 3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::add(g, x[0], x[1]); });
  add("sub", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {3, 3}), random_tensor(r, {3, 3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::sub(g, x[0], x[1]); });
  add("mul", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {3, 3}), random_tensor(r, {3, 3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::mul(g, x[0], x[1]); });
  add("affine", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {5})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::affine(g, x[0], -1.7, 0.4); });
  add("sum", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {2, 5})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::sum(g, x[0]); });
  add("mean", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {2, 5})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::mean(g, x[0]); });
  add("relu", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {4, 5})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::relu(g, x[0]); });
  add("sigmoid", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {4, 5}, 3.0)}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::sigmoid(g, x[0]); });
  add("gate", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {4, 5}, 3.0)}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::gate(g, x[0]); });
  add("softmax", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {3, 4}, 2.0)}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::softmax(g, x[0]); });
  add("log_clamped", [](std::mt19937_64& r) { return Inputs{positive_tensor(r, {6})}; },
      [](Graph& g, const std::vector<Var>& x) {
        return ad::log_clamped(g, x[0], 1e-12, 10.0);
      });
  add("sqrt_eps", [](std::mt19937_64& r) { return Inputs{positive_tensor(r, {6})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::sqrt_eps(g, x[0], 1e-12); });
  add("gather", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {3, 4})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::gather(g, x[0], {2, 0, 3}); });
  add("linear", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {3, 5}), random_tensor(r, {4, 5}),
                      random_tensor(r, {4})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::linear(g, x[0], x[1], x[2]); });
  add("linear_vector", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {5}), random_tensor(r, {4, 5}),
                      random_tensor(r, {4})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::linear(g, x[0], x[1], x[2]); });
  for (auto act : {ad::Activation::kRelu, ad::Activation::kSigmoid,
                   ad::Activation::kSoftmax, ad::Activation::kLinear}) {
    add("dense_" + std::string(ad::activation_name(act)),
        [](std::mt19937_64& r) {
          return Inputs{random_tensor(r, {3, 5}), random_tensor(r, {4, 5}),
                        random_tensor(r, {4})};
        },
        [act](Graph& g, const std::vector<Var>& x) {
          return ad::dense(g, x[0], x[1], x[2], act);
        });
  }
  add("conv1d", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {2, 7}), random_tensor(r, {3, 2, 3}),
                      random_tensor(r, {3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::conv1d(g, x[0], x[1], x[2]); });
  add("conv1d_batched", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {2, 2, 7}), random_tensor(r, {3, 2, 3}),
                      random_tensor(r, {3})};
      },
      [](Graph& g, const std::vector<Var>& x) { return ad::conv1d(g, x[0], x[1], x[2]); });
  add("maxpool1d", [](std::mt19937_64& r) { return Inputs{random_tensor(r, {2, 3, 8})}; },
      [](Graph& g, const std::vector<Var>& x) { return ad::maxpool1d(g, x[0]); });
  add("cost_matrix", [](std::mt19937_64& r) {
        return Inputs{random_tensor(r, {2, 3, 4}), random_tensor(r, {2, 4, 4})};
      },
      [](Graph& g, const std::vector<Var>& x) {
        return ot::cost_matrix(g, x[0], x[1], 1e-12);
      });
  add("sinkhorn_unrolled", [](std::mt19937_64& r) {
        return Inputs{positive_tensor(r, {2, 3, 4})};
      },
      [](Graph& g, const std::vector<Var>& x) {
        ot::SinkhornConfig cfg;
        cfg.epsilon = 0.5;
        cfg.max_iterations = 60;
        cfg.tolerance = 1e-300;  // every evaluation runs the same iterations
        return ot::sinkhorn_plan(g, x[0], cfg, true);
      });
  return cases;
}

// Smallest architectures the two conv blocks admit with token length > 1.
inline nets::ModelConfig tiny_config(nets::Family family,
                                     std::optional<nets::Task> task,
                                     std::uint64_t seed) {
  nets::ModelConfig cfg;
  cfg.family = family;
  cfg.task = task;
  const bool two = family == nets::Family::kMvmtConcat ||
                   family == nets::Family::kTango;
  cfg.view_dims = two ? std::vector<std::size_t>{20, 18}
                      : std::vector<std::size_t>{20};
  cfg.conv_channels = {3, 4};
  cfg.svst_fcn = {6, 5};
  cfg.shared_fcn = {6, 5};
  cfg.head_width = 4;
  cfg.n_speakers = 3;
  cfg.n_emotions = 2;
  cfg.seed = seed;
  return cfg;
}

struct ArchCase {
  std::string name;
  nets::Family family;
  std::optional<nets::Task> task;
  bool unroll = false;
  double ot_weight = 0.0;
};

inline std::vector<ArchCase> arch_cases() {
  using nets::Family;
  using nets::Task;
  return {
      {"svst_asr", Family::kSvst, Task::kAsr},
      {"svst_ae", Family::kSvst, Task::kAe},
      {"svmt", Family::kSvmt, std::nullopt},
      {"mvmt_concat", Family::kMvmtConcat, std::nullopt},
      {"tango", Family::kTango, std::nullopt, false, 0.3},
      {"tango_unrolled", Family::kTango, std::nullopt, true, 0.3},
  };
}

// Compares parameter gradients of the full multitask loss with central
// differences. Without unrolling the plan is held at its value at the
// unperturbed parameters, matching the stop-gradient in the model.
inline GradReport check_arch(const ArchCase& ac, std::uint64_t seed) {
  auto cfg = tiny_config(ac.family, ac.task, seed);
  cfg.ot_unroll = ac.unroll;
  if (ac.unroll) {
    cfg.sinkhorn.epsilon = 0.5;
    cfg.sinkhorn.max_iterations = 60;
    cfg.sinkhorn.tolerance = 1e-300;
  }
  nets::Model model(cfg);
  std::mt19937_64 rng(seed * 7919 + 3);
  // Zero biases put ReLU inputs exactly on the kink once a layer goes dark;
  // move to a generic point where the loss is differentiable.
  for (auto& p : model.parameters()) {
    for (auto& v : p.tensor.data) v += normal_values(rng, 1, 0.1)[0];
  }
  const std::size_t batch = 3;
  std::vector<ad::Tensor> views;
  for (auto d : cfg.view_dims) views.push_back(random_tensor(rng, {batch, d}));
  obj::BatchTargets t;
  std::uniform_int_distribution<std::size_t> spk(0, cfg.n_speakers - 1);
  std::uniform_int_distribution<std::size_t> emo(0, cfg.n_emotions - 1);
  for (std::size_t b = 0; b < batch; ++b) {
    t.speaker.push_back(spk(rng));
    t.emotion.push_back(emo(rng));
    t.gender.push_back(static_cast<int>(b % 2));
    t.age.push_back(normal_values(rng, 1)[0]);
  }
  const obj::LossWeights w{0.4, 0.3, 0.2, 0.5};

  ad::Tensor frozen_plan;
  bool have_plan = false;
  auto evaluate = [&](bool backward) {
    ad::Graph g;
    nets::ForwardOptions opts;
    if (have_plan) opts.fixed_plan = &frozen_plan;
    const auto fv = model.forward(g, views, opts);
    if (!have_plan && fv.plan && !ac.unroll) {
      frozen_plan = g.value(*fv.plan);
      have_plan = true;
    }
    const auto lv = obj::multitask_loss(g, fv, t, w, ac.ot_weight);
    if (backward) g.backward(lv.total);
    return g.value(lv.total)[0];
  };

  model.zero_grad();
  evaluate(true);
  GradReport report;
  for (auto& p : model.parameters()) {
    const std::vector<double> analytic = p.tensor.grad;
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const auto numeric = central_differences(p.tensor.data[i], evaluate);
      const double err = relative_error(analytic[i], numeric);
      ++report.checked;
      if (err > report.worst) {
        report.worst = err;
        report.where = p.name + "[" + std::to_string(i) + "] analytic " +
                       fmt(analytic[i]) + " numeric " +
                       fmt(numeric.narrow) + "/" + fmt(numeric.wide);
      }
    }
  }
  return report;
}

}  // namespace tango::check

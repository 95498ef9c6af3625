#include "tango/networks.hpp"

#include <cmath>
#include <string>

#include "tango/errors.hpp"
#include "tango/random.hpp"

namespace tango::nets {

using ad::Activation;
using ad::Graph;
using ad::Shape;
using ad::Var;

namespace {

constexpr std::array<Task, 4> kAllTasks{Task::kAsr, Task::kSer, Task::kGr,
                                        Task::kAe};

std::string view_prefix(std::size_t v) { return "view" + std::to_string(v); }

Activation output_activation(Task t) {
  switch (t) {
    case Task::kAsr:
    case Task::kSer: return Activation::kSoftmax;
    case Task::kGr: return Activation::kSigmoid;
    case Task::kAe: return Activation::kLinear;
  }
  return Activation::kLinear;
}

}  // namespace

Family parse_family(std::string_view name) {
  if (name == "svst") return Family::kSvst;
  if (name == "svmt") return Family::kSvmt;
  if (name == "mvmt" || name == "mvmt_concat" || name == "mvmt-concat") {
    return Family::kMvmtConcat;
  }
  if (name == "tango") return Family::kTango;
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kSvst: return "svst";
    case Family::kSvmt: return "svmt";
    case Family::kMvmtConcat: return "mvmt_concat";
    case Family::kTango: return "tango";
  }
  return "tango";
}

std::string_view family_label(Family f) {
  switch (f) {
    case Family::kSvst: return "SVST";
    case Family::kSvmt: return "SVMT";
    case Family::kMvmtConcat: return "MVMT";
    case Family::kTango: return "TANGO";
  }
  return "TANGO";
}

Task parse_task(std::string_view name) {
  if (name == "asr") return Task::kAsr;
  if (name == "ser") return Task::kSer;
  if (name == "gr") return Task::kGr;
  if (name == "ae") return Task::kAe;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::kAsr: return "asr";
    case Task::kSer: return "ser";
    case Task::kGr: return "gr";
    case Task::kAe: return "ae";
  }
  return "asr";
}

void ModelConfig::validate() const {
  const bool single = family == Family::kSvst || family == Family::kSvmt;
  if (family == Family::kSvst && !task) {
    throw ConfigError("svst requires a task (asr|ser|gr|ae)");
  }
  if (family != Family::kSvst && task) {
    throw ConfigError(std::string(family_name(family)) +
                      " is multi-task; a single task is only valid for svst");
  }
  if (single && view_dims.size() != 1) {
    throw ConfigError(std::string(family_name(family)) +
                      " expects exactly one view");
  }
  if (!single && view_dims.size() != 2) {
    throw ConfigError(std::string(family_name(family)) +
                      " expects exactly two views");
  }
  if (conv_channels[0] == 0 || conv_channels[1] == 0 || kernel_size == 0 ||
      head_width == 0) {
    throw ConfigError("conv channels, kernel size and head width must be > 0");
  }
  if (svst_fcn.empty() || shared_fcn.empty()) {
    throw ConfigError("fully connected stacks must have at least one layer");
  }
  for (auto w : svst_fcn) {
    if (w == 0) throw ConfigError("svst layer widths must be > 0");
  }
  for (auto w : shared_fcn) {
    if (w == 0) throw ConfigError("shared layer widths must be > 0");
  }
  if (n_speakers == 0 || n_emotions == 0) {
    throw ConfigError("n_speakers and n_emotions must be positive");
  }
  sinkhorn.validate();
  for (auto d : view_dims) conv_trace(*this, d);
}

bool ModelConfig::has_task(Task t) const {
  return family != Family::kSvst || task == t;
}

ConvTrace conv_trace(const ModelConfig& cfg, std::size_t view_dim) {
  const std::size_t k = cfg.kernel_size;
  auto block = [&](std::size_t len) -> std::size_t {
    if (len < k) {
      throw ConfigError("view dimension " + std::to_string(view_dim) +
                        " too short for two conv blocks (kernel " +
                        std::to_string(k) + ")");
    }
    const std::size_t conv = len - k + 1;
    if (conv < 2) {
      throw ConfigError("view dimension " + std::to_string(view_dim) +
                        " too short for max-pooling after convolution");
    }
    return conv / 2;
  };
  ConvTrace t;
  t.length = block(block(view_dim));
  t.channels = cfg.conv_channels[1];
  return t;
}

std::size_t fusion_width(const ModelConfig& cfg) {
  switch (cfg.family) {
    case Family::kSvst:
    case Family::kSvmt: return conv_trace(cfg, cfg.view_dims[0]).flat();
    case Family::kMvmtConcat:
      return conv_trace(cfg, cfg.view_dims[0]).flat() +
             conv_trace(cfg, cfg.view_dims[1]).flat();
    case Family::kTango: {
      const auto a = conv_trace(cfg, cfg.view_dims[0]);
      const auto b = conv_trace(cfg, cfg.view_dims[1]);
      const auto dir = cfg.transport_direction;
      const std::size_t f1 =
          a.flat() * (dir == ot::Direction::kX1ToX2 ? 1 : 2);
      const std::size_t f2 =
          b.flat() * (dir == ot::Direction::kX2ToX1 ? 1 : 2);
      return f1 + f2;
    }
  }
  return 0;
}

void Model::add_param(std::string name, Shape shape, std::size_t fan_in,
                      std::size_t fan_out, bool glorot) {
  Tensor t(std::move(shape));
  t.requires_grad = true;
  const bool is_bias = t.rank() == 1;
  if (!is_bias) {
    const double limit =
        glorot ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
               : std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng(cfg_.seed, name);
    for (double& v : t.data) v = rng.uniform(-limit, limit);
  }
  t.zero_grad();
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(t)});
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto [c1, c2] = cfg_.conv_channels;
  const std::size_t k = cfg_.kernel_size;
  for (std::size_t v = 0; v < cfg_.view_count(); ++v) {
    const auto p = view_prefix(v);
    add_param(p + ".conv1.w", {c1, 1, k}, k, c1 * k, false);
    add_param(p + ".conv1.b", {c1}, 0, 0, false);
    add_param(p + ".conv2.w", {c2, c1, k}, c1 * k, c2 * k, false);
    add_param(p + ".conv2.b", {c2}, 0, 0, false);
  }
  const auto& widths =
      cfg_.family == Family::kSvst ? cfg_.svst_fcn : cfg_.shared_fcn;
  std::size_t in = fusion_width(cfg_);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto p = "fc" + std::to_string(i + 1);
    add_param(p + ".w", {widths[i], in}, in, widths[i], false);
    add_param(p + ".b", {widths[i]}, 0, 0, false);
    in = widths[i];
  }
  auto out_width = [&](Task t) -> std::size_t {
    switch (t) {
      case Task::kAsr: return cfg_.n_speakers;
      case Task::kSer: return cfg_.n_emotions;
      default: return 1;
    }
  };
  if (cfg_.family == Family::kSvst) {
    const Task t = *cfg_.task;
    const auto p = "out." + std::string(task_name(t));
    add_param(p + ".w", {out_width(t), in}, in, out_width(t), true);
    add_param(p + ".b", {out_width(t)}, 0, 0, true);
    return;
  }
  const std::size_t h = cfg_.head_width;
  for (Task t : kAllTasks) {
    const auto p = "head." + std::string(task_name(t));
    add_param(p + ".hidden.w", {h, in}, in, h, false);
    add_param(p + ".hidden.b", {h}, 0, 0, false);
    add_param(p + ".out.w", {out_width(t), h}, h, out_width(t), true);
    add_param(p + ".out.b", {out_width(t)}, 0, 0, true);
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

Tensor& Model::parameter(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw ContractError("no parameter named '" + std::string(name) + "'");
  }
  return params_[it->second].tensor;
}

const Tensor& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Var Model::bind(Graph& g, std::string_view name) {
  return g.parameter(parameter(name), std::string(name));
}

Var Model::view_tokens(Graph& g, std::size_t view, const Tensor& x,
                       bool gated) {
  if (x.rank() != 2 || x.dim(1) != cfg_.view_dims[view]) {
    throw ShapeError("view " + std::to_string(view) + ": expected [B x " +
                     std::to_string(cfg_.view_dims[view]) + "], got " +
                     ad::to_string(x.shape));
  }
  const auto p = view_prefix(view);
  Var h = g.constant(Tensor({x.dim(0), 1, x.dim(1)}, x.data),
                     p + ".input");
  h = ad::conv1d(g, h, bind(g, p + ".conv1.w"), bind(g, p + ".conv1.b"));
  h = ad::maxpool1d(g, ad::relu(g, h));
  h = ad::conv1d(g, h, bind(g, p + ".conv2.w"), bind(g, p + ".conv2.b"));
  h = ad::maxpool1d(g, ad::relu(g, h));
  if (gated) h = ad::gate(g, h);
  return h;  // [B x C x L]
}

Var Model::fcn(Graph& g, Var x, const std::vector<std::size_t>& widths,
               std::string_view prefix) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto p = std::string(prefix) + std::to_string(i + 1);
    x = ad::dense(g, x, bind(g, p + ".w"), bind(g, p + ".b"),
                  Activation::kRelu);
  }
  return x;
}

Var Model::output_layer(Graph& g, Var x, Task t, std::string_view name) {
  const std::string p(name);
  return ad::dense(g, x, bind(g, p + ".w"), bind(g, p + ".b"),
                   output_activation(t));
}

void Model::heads(Graph& g, Var trunk, ForwardVars& out) {
  for (Task t : kAllTasks) {
    const auto p = "head." + std::string(task_name(t));
    Var h = ad::dense(g, trunk, bind(g, p + ".hidden.w"),
                      bind(g, p + ".hidden.b"), Activation::kRelu);
    Var y = output_layer(g, h, t, p + ".out");
    switch (t) {
      case Task::kAsr: out.asr = y; break;
      case Task::kSer: out.ser = y; break;
      case Task::kGr: out.gr = y; break;
      case Task::kAe: out.ae = y; break;
    }
  }
}

ForwardVars Model::forward(Graph& g, const std::vector<Tensor>& views,
                           const ForwardOptions& opts) {
  if (views.size() != cfg_.view_count()) {
    throw ShapeError("model expects " + std::to_string(cfg_.view_count()) +
                     " view(s), got " + std::to_string(views.size()));
  }
  const std::size_t batch = views[0].dim(0);
  for (const auto& v : views) {
    if (v.rank() != 2 || v.dim(0) != batch) {
      throw ShapeError("views must be [B x D] with a common batch size");
    }
  }
  auto flatten = [&](Var x) {
    return ad::reshape(g, x, {batch, g.value(x).size() / batch});
  };

  ForwardVars out;
  Var fused;
  switch (cfg_.family) {
    case Family::kSvst:
    case Family::kSvmt:
      fused = flatten(view_tokens(g, 0, views[0], false));
      break;
    case Family::kMvmtConcat:
      fused = ad::concat(g, flatten(view_tokens(g, 0, views[0], false)),
                         flatten(view_tokens(g, 1, views[1], false)));
      break;
    case Family::kTango: {
      Var t1 = ad::transpose(g, view_tokens(g, 0, views[0], true));
      Var t2 = ad::transpose(g, view_tokens(g, 1, views[1], true));
      const double n1 = static_cast<double>(g.shape(t1)[1]);
      const double n2 = static_cast<double>(g.shape(t2)[1]);
      Var cost = ot::cost_matrix(g, t1, t2, cfg_.sinkhorn.zero_guard);
      Var plan;
      if (opts.fixed_plan) {
        if (opts.fixed_plan->shape != g.shape(cost)) {
          throw ShapeError("fixed plan shape " +
                           ad::to_string(opts.fixed_plan->shape) +
                           " does not match cost " +
                           ad::to_string(g.shape(cost)));
        }
        plan = g.constant(*opts.fixed_plan, "sinkhorn_plan[fixed]");
      } else {
        plan = ot::sinkhorn_plan(g, cost, cfg_.sinkhorn, cfg_.ot_unroll,
                                 &out.plans);
      }
      out.cost = cost;
      out.plan = plan;
      const auto dir = cfg_.transport_direction;
      Var f1 = t1, f2 = t2;
      if (dir != ot::Direction::kX1ToX2) {
        Var into1 = ad::affine(g, ad::matmul(g, plan, t2), n1);
        if (opts.zero_into_view1) {
          into1 = g.constant(Tensor(g.shape(into1)), "zeros");
        }
        f1 = ad::concat(g, into1, t1);
      }
      if (dir != ot::Direction::kX2ToX1) {
        Var into2 =
            ad::affine(g, ad::matmul(g, ad::transpose(g, plan), t1), n2);
        if (opts.zero_into_view2) {
          into2 = g.constant(Tensor(g.shape(into2)), "zeros");
        }
        f2 = ad::concat(g, into2, t2);
      }
      fused = ad::concat(g, flatten(f1), flatten(f2));
      break;
    }
  }

  if (cfg_.family == Family::kSvst) {
    Var h = fcn(g, fused, cfg_.svst_fcn, "fc");
    const Task t = *cfg_.task;
    Var y = output_layer(g, h, t, "out." + std::string(task_name(t)));
    switch (t) {
      case Task::kAsr: out.asr = y; break;
      case Task::kSer: out.ser = y; break;
      case Task::kGr: out.gr = y; break;
      case Task::kAe: out.ae = y; break;
    }
    return out;
  }
  heads(g, fcn(g, fused, cfg_.shared_fcn, "fc"), out);
  return out;
}

std::vector<TaskOutputs> Model::predict(const std::vector<Tensor>& views) {
  Graph g;
  const auto vars = forward(g, views);
  const std::size_t batch = views.at(0).dim(0);
  std::vector<TaskOutputs> outs(batch);
  auto rows = [&](const std::optional<Var>& v, auto assign) {
    if (!v) return;
    const auto& t = g.value(*v);
    const std::size_t w = t.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      assign(outs[b], std::vector<double>(t.data.begin() + b * w,
                                          t.data.begin() + (b + 1) * w));
    }
  };
  rows(vars.asr, [](TaskOutputs& o, std::vector<double> v) { o.asr = v; });
  rows(vars.ser, [](TaskOutputs& o, std::vector<double> v) { o.ser = v; });
  rows(vars.gr, [](TaskOutputs& o, std::vector<double> v) { o.gr = v[0]; });
  rows(vars.ae, [](TaskOutputs& o, std::vector<double> v) { o.ae = v[0]; });
  return outs;
}

}  // namespace tango::nets

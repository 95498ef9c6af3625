#pragma once

// The four architecture families: single-view single-task (svst), single-view
// multi-task (svmt), two-view concatenation fusion (mvmt_concat) and gated
// optimal-transport fusion (tango).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tango/autodiff.hpp"
#include "tango/ops.hpp"
#include "tango/ot.hpp"

namespace tango::nets {

using ad::Tensor;

enum class Family { kSvst, kSvmt, kMvmtConcat, kTango };
enum class Task { kAsr, kSer, kGr, kAe };

Family parse_family(std::string_view name);  // accepts "mvmt" for mvmt_concat
std::string_view family_name(Family f);
// Table label: SVST, SVMT, MVMT, TANGO.
std::string_view family_label(Family f);
Task parse_task(std::string_view name);
std::string_view task_name(Task t);

struct ModelConfig {
  Family family = Family::kTango;
  std::optional<Task> task;
  std::vector<std::size_t> view_dims;
  std::array<std::size_t, 2> conv_channels{32, 64};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> svst_fcn{200, 64, 56};
  std::vector<std::size_t> shared_fcn{200, 64};
  std::size_t head_width = 30;
  std::size_t n_speakers = 2;
  std::size_t n_emotions = 2;
  ot::Direction transport_direction = ot::Direction::kBoth;
  ot::SinkhornConfig sinkhorn;
  bool ot_unroll = false;
  std::uint64_t seed = 42;

  // Throws ConfigError on invalid family/task/view combinations.
  void validate() const;
  std::size_t view_count() const { return view_dims.size(); }
  bool has_task(Task t) const;
};

// Sequence length and channel count leaving the two conv blocks.
struct ConvTrace {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t flat() const { return channels * length; }
};
ConvTrace conv_trace(const ModelConfig& cfg, std::size_t view_dim);

// Width of the representation entering the first fully connected layer.
std::size_t fusion_width(const ModelConfig& cfg);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Graph handles for one forward pass over a batch.
struct ForwardVars {
  std::optional<ad::Var> asr;  // [B x n_speakers] probabilities
  std::optional<ad::Var> ser;  // [B x n_emotions] probabilities
  std::optional<ad::Var> gr;   // [B x 1] probability of label 1
  std::optional<ad::Var> ae;   // [B x 1] standardized age
  // TANGO only.
  std::optional<ad::Var> cost;  // [B x n1 x n2]
  std::optional<ad::Var> plan;  // [B x n1 x n2]
  std::vector<ot::TransportPlan> plans;
};

// Per-sample output values.
struct TaskOutputs {
  std::optional<std::vector<double>> asr;
  std::optional<std::vector<double>> ser;
  std::optional<double> gr;
  std::optional<double> ae;
};

struct ForwardOptions {
  // Replaces the Sinkhorn plan with a fixed [B x n1 x n2] tensor.
  const Tensor* fixed_plan = nullptr;
  // Zero the transported block landing in view 1 / view 2 while keeping the
  // full-width layout.
  bool zero_into_view1 = false;
  bool zero_into_view2 = false;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;

  // Age standardization statistics from the training partition.
  double age_mean = 0.0;
  double age_std = 1.0;

  // views[v] is [B x view_dims[v]].
  ForwardVars forward(ad::Graph& g, const std::vector<Tensor>& views,
                      const ForwardOptions& opts = {});

  // Runs a forward pass without gradients and unpacks per-sample outputs.
  // ae values are standardized (see age_mean / age_std).
  std::vector<TaskOutputs> predict(const std::vector<Tensor>& views);

  void zero_grad();

 private:
  ad::Var bind(ad::Graph& g, std::string_view name);
  ad::Var view_tokens(ad::Graph& g, std::size_t view, const Tensor& x,
                      bool gated);
  ad::Var fcn(ad::Graph& g, ad::Var x, const std::vector<std::size_t>& widths,
              std::string_view prefix);
  void heads(ad::Graph& g, ad::Var trunk, ForwardVars& out);
  ad::Var output_layer(ad::Graph& g, ad::Var x, Task t, std::string_view name);

  void add_param(std::string name, ad::Shape shape, std::size_t fan_in,
                 std::size_t fan_out, bool glorot);

  ModelConfig cfg_;
  std::vector<NamedTensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tango::nets

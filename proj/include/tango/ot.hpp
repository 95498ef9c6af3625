#pragma once

// Entropic optimal transport between the token sets of two views.

#include <optional>
#include <string_view>
#include <vector>

#include "tango/autodiff.hpp"

namespace tango::ot {

using ad::Tensor;

struct SinkhornConfig {
  double epsilon = 0.1;
  int max_iterations = 200;
  double tolerance = 1e-6;
  double zero_guard = 1e-12;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

// Pairwise Euclidean distances divided by their maximum.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  double max_raw = 0.0;
  bool zero_guarded = false;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct TransportPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> gamma;
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  // Largest absolute marginal violation (rows and columns) at termination.
  double residual = 0.0;
  int iterations_used = 0;
  bool converged = false;

  double at(std::size_t i, std::size_t j) const { return gamma[i * cols + j]; }
  Tensor as_tensor() const;
};

enum class Direction { kBoth, kX1ToX2, kX2ToX1 };

// Accepts "both", "x1_to_x2", "x2_to_x1" and the kebab-case spellings.
Direction parse_direction(std::string_view name);
std::string_view direction_name(Direction d);

// a: [n1 x d], b: [n2 x d].
CostMatrix cost_matrix(const Tensor& a, const Tensor& b,
                       double zero_guard = 1e-12);
CostMatrix cost_matrix_from_values(std::size_t rows, std::size_t cols,
                                   std::vector<double> values);

// Log-domain Sinkhorn with uniform marginals.
TransportPlan sinkhorn(const CostMatrix& m, const SinkhornConfig& cfg);

struct Transported {
  std::optional<Tensor> into_view1;  // n1 * gamma * x2, [n1 x d]
  std::optional<Tensor> into_view2;  // n2 * gamma^T * x1, [n2 x d]
};

Transported transport(const TransportPlan& plan, const Tensor& x1,
                      const Tensor& x2, Direction direction);

// Elementwise x * sigmoid(x).
Tensor gate(const Tensor& x);

// Frobenius inner product <gamma, M>.
double ot_distance(const TransportPlan& plan, const CostMatrix& m);

// Graph versions over a leading batch axis.

// tokens_a [B x n1 x d], tokens_b [B x n2 x d] -> [B x n1 x n2].
ad::Var cost_matrix(ad::Graph& g, ad::Var tokens_a, ad::Var tokens_b,
                    double zero_guard);

// cost [B x n1 x n2] -> plans [B x n1 x n2]. Without `unroll` the plan is a
// constant of the graph (no gradient flows into the cost). With `unroll`
// the backward pass differentiates through every Sinkhorn iteration.
// `plans_out`, when given, receives one TransportPlan per batch item.
ad::Var sinkhorn_plan(ad::Graph& g, ad::Var cost, const SinkhornConfig& cfg,
                      bool unroll, std::vector<TransportPlan>* plans_out = nullptr);

}  // namespace tango::ot

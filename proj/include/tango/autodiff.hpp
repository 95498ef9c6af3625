#pragma once

// Minimal tape-based reverse-mode differentiation over dense float64 arrays.
//
// A Graph owns an append-only list of nodes. Every operation appends one node
// holding its forward value and a closure that pushes the node's gradient
// into its inputs. Parameters live outside the graph and are bound by
// reference; backward() accumulates into Tensor::grad of each bound
// parameter that requires a gradient.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tango::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Allocates (if needed) and clears the gradient buffer.
  void zero_grad();
};

struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor value, std::string label = "const");
  // Binds an external parameter. The tensor must outlive the graph.
  Var parameter(Tensor& param, std::string label = "param");

  // Appends an operation node. `inputs` must already be in the graph.
  Var record(std::string op, std::vector<Var> inputs, Tensor value,
             BackwardFn backward);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  // Gradient of the node as produced by the last backward(); zeros if the
  // node was not reached.
  std::vector<double> grad(Var v) const;

  // Gradient accumulators used by backward closures.
  std::span<double> grad_buffer(std::size_t id);
  std::span<const double> out_grad(std::size_t id) const;
  std::size_t input(std::size_t node, std::size_t k) const {
    return nodes_[node].inputs[k];
  }

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  // One line per node: index, op, shape, input ids.
  std::string dump() const;

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor* bound = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace tango::ad

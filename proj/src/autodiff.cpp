#include "tango/autodiff.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "tango/errors.hpp"

namespace tango::ad {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto extent : shape) {
    if (extent == 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  check_shape(shape);
  data.assign(element_count(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  check_shape(shape);
  if (element_count(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

Var Graph::constant(Tensor value, std::string label) {
  Node node;
  node.op = std::move(label);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param, std::string label) {
  Node node;
  node.op = std::move(label);
  node.bound = &param;
  node.needs_grad = param.requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::record(std::string op, std::vector<Var> inputs, Tensor value,
                  BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.id >= nodes_.size()) {
      throw ContractError("operation '" + node.op +
                          "' references a node outside the graph");
    }
    node.inputs.push_back(in.id);
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  node.value = std::move(value);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
  const auto& node = nodes_.at(v.id);
  return node.bound ? *node.bound : node.value;
}

std::vector<double> Graph::grad(Var v) const {
  const auto& node = nodes_.at(v.id);
  if (node.grad.empty()) return std::vector<double>(value(v).size(), 0.0);
  return node.grad;
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) {
    node.grad.assign(node.bound ? node.bound->size() : node.value.size(), 0.0);
  }
  return node.grad;
}

std::span<const double> Graph::out_grad(std::size_t id) const {
  return nodes_[id].grad;
}

void Graph::backward(Var loss) {
  if (loss.id >= nodes_.size()) {
    throw ContractError("backward: loss node is not part of this graph");
  }
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        to_string(value(loss).shape));
  }
  for (auto& node : nodes_) node.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id)[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.empty() || !node.needs_grad) continue;
    if (node.bound) {
      auto& target = *node.bound;
      if (target.grad.size() != target.size()) target.zero_grad();
      for (std::size_t k = 0; k < node.grad.size(); ++k) {
        target.grad[k] += node.grad[k];
      }
    } else if (node.backward) {
      node.backward(*this, i);
    }
  }
}

std::string Graph::dump() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    out << i << ' ' << node.op << ' '
        << to_string(node.bound ? node.bound->shape : node.value.shape);
    if (!node.inputs.empty()) {
      out << " <-";
      for (auto in : node.inputs) out << ' ' << in;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tango::ad

#include "tango/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tango/errors.hpp"

namespace tango::ad {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a,
                                 const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) +
                   " and " + to_string(b));
}

// Elementwise unary op with derivative expressed through input and output.
template <class Fwd, class Deriv>
Var unary(Graph& g, std::string op, Var x, Fwd fwd, Deriv deriv) {
  const auto& in = g.value(x);
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return g.record(std::move(op), {x}, std::move(out),
                  [deriv](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    const auto& xin = gr.value(Var{xi});
                    const auto& yout = gr.value(Var{self});
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < dx.size(); ++i) {
                      dx[i] += dy[i] * deriv(xin[i], yout[i]);
                    }
                  });
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation act) {
  switch (act) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

Var matmul(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  const bool batched = A.rank() == 3;
  if (A.rank() != B.rank() || (A.rank() != 2 && A.rank() != 3)) {
    shape_mismatch("matmul", A.shape, B.shape);
  }
  const std::size_t batch = batched ? A.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t n = A.dim(off), k = A.dim(off + 1);
  const std::size_t m = B.dim(off + 1);
  if (B.dim(off) != k || (batched && B.dim(0) != batch)) {
    shape_mismatch("matmul", A.shape, B.shape);
  }
  Tensor C(batched ? Shape{batch, n, m} : Shape{n, m});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* pa = A.data.data() + s * n * k;
    const double* pb = B.data.data() + s * k * m;
    double* pc = C.data.data() + s * n * m;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = pb + p * m;
        double* crow = pc + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  return g.record(
      "matmul", {a, b}, std::move(C),
      [batch, n, k, m](Graph& gr, std::size_t self) {
        const auto ai = gr.input(self, 0), bi = gr.input(self, 1);
        const auto& Av = gr.value(Var{ai});
        const auto& Bv = gr.value(Var{bi});
        auto dc = gr.out_grad(self);
        if (gr.needs_grad(ai)) {
          auto da = gr.grad_buffer(ai);
          for (std::size_t s = 0; s < batch; ++s) {
            const double* pb = Bv.data.data() + s * k * m;
            const double* pdc = dc.data() + s * n * m;
            double* pda = da.data() + s * n * k;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                  acc += pdc[i * m + j] * pb[p * m + j];
                }
                pda[i * k + p] += acc;
              }
            }
          }
        }
        if (gr.needs_grad(bi)) {
          auto db = gr.grad_buffer(bi);
          for (std::size_t s = 0; s < batch; ++s) {
            const double* pa = Av.data.data() + s * n * k;
            const double* pdc = dc.data() + s * n * m;
            double* pdb = db.data() + s * k * m;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const double aip = pa[i * k + p];
                if (aip == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) {
                  pdb[p * m + j] += aip * pdc[i * m + j];
                }
              }
            }
          }
        }
      });
}

Var transpose(Graph& g, Var x) {
  const auto& X = g.value(x);
  if (X.rank() != 2 && X.rank() != 3) {
    throw ShapeError("transpose: expected rank 2 or 3, got " +
                     to_string(X.shape));
  }
  const bool batched = X.rank() == 3;
  const std::size_t batch = batched ? X.dim(0) : 1;
  const std::size_t r = X.dim(batched ? 1 : 0), c = X.dim(batched ? 2 : 1);
  Tensor Y(batched ? Shape{batch, c, r} : Shape{c, r});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        Y[s * r * c + j * r + i] = X[s * r * c + i * c + j];
      }
    }
  }
  return g.record("transpose", {x}, std::move(Y),
                  [batch, r, c](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t s = 0; s < batch; ++s) {
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                          dx[s * r * c + i * c + j] += dy[s * r * c + j * r + i];
                        }
                      }
                    }
                  });
}

Var reshape(Graph& g, Var x, Shape shape) {
  const auto& X = g.value(x);
  if (element_count(shape) != X.size()) {
    shape_mismatch("reshape", X.shape, shape);
  }
  Tensor Y(std::move(shape), X.data);
  return g.record("reshape", {x}, std::move(Y),
                  [](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                  });
}

Var concat(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.rank() != B.rank() ||
      !std::equal(A.shape.begin(), A.shape.end() - 1, B.shape.begin())) {
    shape_mismatch("concat", A.shape, B.shape);
  }
  const std::size_t wa = A.shape.back(), wb = B.shape.back();
  const std::size_t rows = A.size() / wa;
  Shape out_shape = A.shape;
  out_shape.back() = wa + wb;
  Tensor Y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data.data() + r * wa, wa, Y.data.data() + r * (wa + wb));
    std::copy_n(B.data.data() + r * wb, wb, Y.data.data() + r * (wa + wb) + wa);
  }
  return g.record(
      "concat", {a, b}, std::move(Y),
      [rows, wa, wb](Graph& gr, std::size_t self) {
        auto dy = gr.out_grad(self);
        const auto ai = gr.input(self, 0), bi = gr.input(self, 1);
        if (gr.needs_grad(ai)) {
          auto da = gr.grad_buffer(ai);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < wa; ++j) {
              da[r * wa + j] += dy[r * (wa + wb) + j];
            }
          }
        }
        if (gr.needs_grad(bi)) {
          auto db = gr.grad_buffer(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < wb; ++j) {
              db[r * wb + j] += dy[r * (wa + wb) + wa + j];
            }
          }
        }
      });
}

namespace {

template <class Fwd, class DA, class DB>
Var binary(Graph& g, std::string op, Var a, Var b, Fwd fwd, DA da_fn,
           DB db_fn) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.shape != B.shape) shape_mismatch(op, A.shape, B.shape);
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = fwd(A[i], B[i]);
  return g.record(std::move(op), {a, b}, std::move(Y),
                  [da_fn, db_fn](Graph& gr, std::size_t self) {
                    const auto ai = gr.input(self, 0), bi = gr.input(self, 1);
                    const auto& Av = gr.value(Var{ai});
                    const auto& Bv = gr.value(Var{bi});
                    auto dy = gr.out_grad(self);
                    if (gr.needs_grad(ai)) {
                      auto da = gr.grad_buffer(ai);
                      for (std::size_t i = 0; i < da.size(); ++i) {
                        da[i] += dy[i] * da_fn(Av[i], Bv[i]);
                      }
                    }
                    if (gr.needs_grad(bi)) {
                      auto db = gr.grad_buffer(bi);
                      for (std::size_t i = 0; i < db.size(); ++i) {
                        db[i] += dy[i] * db_fn(Av[i], Bv[i]);
                      }
                    }
                  });
}

}  // namespace

Var add(Graph& g, Var a, Var b) {
  return binary(
      g, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Graph& g, Var a, Var b) {
  return binary(
      g, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Graph& g, Var a, Var b) {
  return binary(
      g, "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var affine(Graph& g, Var x, double scale, double shift) {
  return unary(
      g, "affine", x, [=](double v) { return scale * v + shift; },
      [=](double, double) { return scale; });
}

Var sum(Graph& g, Var x) {
  const auto& X = g.value(x);
  double total = 0.0;
  for (double v : X.data) total += v;
  return g.record("sum", {x}, Tensor({1}, {total}),
                  [](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    const double dy = gr.out_grad(self)[0];
                    for (double& d : gr.grad_buffer(xi)) d += dy;
                  });
}

Var mean(Graph& g, Var x) {
  const double n = static_cast<double>(g.value(x).size());
  return affine(g, sum(g, x), 1.0 / n);
}

Var relu(Graph& g, Var x) {
  return unary(
      g, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Graph& g, Var x) {
  return unary(g, "sigmoid", x, sigmoid_scalar,
               [](double, double y) { return y * (1.0 - y); });
}

Var gate(Graph& g, Var x) {
  return unary(
      g, "gate", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s + v * s * (1.0 - s);
      });
}

Var softmax(Graph& g, Var x) {
  const auto& X = g.value(x);
  const std::size_t w = X.shape.back();
  const std::size_t rows = X.size() / w;
  Tensor Y(X.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = X.data.data() + r * w;
    double* out = Y.data.data() + r * w;
    const double top = *std::max_element(in, in + w);
    double z = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      out[j] = std::exp(in[j] - top);
      z += out[j];
    }
    for (std::size_t j = 0; j < w; ++j) out[j] /= z;
  }
  return g.record("softmax", {x}, std::move(Y),
                  [rows, w](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    const auto& Yv = gr.value(Var{self});
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < w; ++j) {
                        dot += dy[r * w + j] * Yv[r * w + j];
                      }
                      for (std::size_t j = 0; j < w; ++j) {
                        dx[r * w + j] += Yv[r * w + j] * (dy[r * w + j] - dot);
                      }
                    }
                  });
}

Var activate(Graph& g, Var x, Activation act) {
  switch (act) {
    case Activation::kLinear: return x;
    case Activation::kRelu: return relu(g, x);
    case Activation::kSigmoid: return sigmoid(g, x);
    case Activation::kSoftmax: return softmax(g, x);
  }
  return x;
}

Var log_clamped(Graph& g, Var x, double lo, double hi) {
  return unary(
      g, "log", x, [=](double v) { return std::log(std::clamp(v, lo, hi)); },
      [=](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0 / v; });
}

Var sqrt_eps(Graph& g, Var x, double eps) {
  return unary(
      g, "sqrt", x, [=](double v) { return std::sqrt(v + eps); },
      [](double, double y) { return 0.5 / y; });
}

Var gather(Graph& g, Var x, const std::vector<std::size_t>& index) {
  const auto& X = g.value(x);
  if (X.rank() != 2 || X.dim(0) != index.size()) {
    throw ShapeError("gather: expected [" + std::to_string(index.size()) +
                     " x C], got " + to_string(X.shape));
  }
  const std::size_t w = X.dim(1);
  Tensor Y({index.size()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= w) {
      throw ContractError("gather: index " + std::to_string(index[r]) +
                          " out of range for width " + std::to_string(w));
    }
    Y[r] = X[r * w + index[r]];
  }
  return g.record("gather", {x}, std::move(Y),
                  [index, w](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t r = 0; r < index.size(); ++r) {
                      dx[r * w + index[r]] += dy[r];
                    }
                  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const auto& Bv = g.value(b);
  if (W.rank() != 2 || Bv.rank() != 1 || Bv.dim(0) != W.dim(0) ||
      (X.rank() != 1 && X.rank() != 2) || X.shape.back() != W.dim(1)) {
    throw ShapeError("dense: input " + to_string(X.shape) + ", weights " +
                     to_string(W.shape) + ", bias " + to_string(Bv.shape));
  }
  const std::size_t m = W.dim(0), n = W.dim(1);
  const std::size_t batch = X.rank() == 2 ? X.dim(0) : 1;
  Tensor Y(X.rank() == 2 ? Shape{batch, m} : Shape{m});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xr = X.data.data() + s * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wr = W.data.data() + i * n;
      double acc = Bv[i];
      for (std::size_t j = 0; j < n; ++j) acc += wr[j] * xr[j];
      Y[s * m + i] = acc;
    }
  }
  return g.record(
      "dense", {x, w, b}, std::move(Y),
      [batch, m, n](Graph& gr, std::size_t self) {
        const auto xi = gr.input(self, 0), wi = gr.input(self, 1),
                   bi = gr.input(self, 2);
        const auto& Xv = gr.value(Var{xi});
        const auto& Wv = gr.value(Var{wi});
        auto dy = gr.out_grad(self);
        if (gr.needs_grad(xi)) {
          auto dx = gr.grad_buffer(xi);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t i = 0; i < m; ++i) {
              const double d = dy[s * m + i];
              if (d == 0.0) continue;
              const double* wr = Wv.data.data() + i * n;
              double* dxr = dx.data() + s * n;
              for (std::size_t j = 0; j < n; ++j) dxr[j] += d * wr[j];
            }
          }
        }
        if (gr.needs_grad(wi)) {
          auto dw = gr.grad_buffer(wi);
          for (std::size_t s = 0; s < batch; ++s) {
            const double* xr = Xv.data.data() + s * n;
            for (std::size_t i = 0; i < m; ++i) {
              const double d = dy[s * m + i];
              if (d == 0.0) continue;
              double* dwr = dw.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) dwr[j] += d * xr[j];
            }
          }
        }
        if (gr.needs_grad(bi)) {
          auto db = gr.grad_buffer(bi);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t i = 0; i < m; ++i) db[i] += dy[s * m + i];
          }
        }
      });
}

Var dense(Graph& g, Var x, Var w, Var b, Activation act) {
  return activate(g, linear(g, x, w, b), act);
}

Var conv1d(Graph& g, Var x, Var kernels, Var bias) {
  const auto& X = g.value(x);
  const auto& K = g.value(kernels);
  const auto& Bv = g.value(bias);
  if ((X.rank() != 2 && X.rank() != 3) || K.rank() != 3 || Bv.rank() != 1 ||
      Bv.dim(0) != K.dim(0)) {
    throw ShapeError("conv1d: input " + to_string(X.shape) + ", kernels " +
                     to_string(K.shape) + ", bias " + to_string(Bv.shape));
  }
  const bool batched = X.rank() == 3;
  const std::size_t batch = batched ? X.dim(0) : 1;
  const std::size_t cin = X.dim(batched ? 1 : 0);
  const std::size_t len = X.dim(batched ? 2 : 1);
  const std::size_t cout = K.dim(0), width = K.dim(2);
  if (K.dim(1) != cin) {
    throw ShapeError("conv1d: input " + to_string(X.shape) +
                     " has channel count different from kernels " +
                     to_string(K.shape));
  }
  if (len < width) {
    throw ShapeError("conv1d: sequence too short (length " +
                     std::to_string(len) + " < kernel " +
                     std::to_string(width) + ")");
  }
  const std::size_t lout = len - width + 1;
  Tensor Y(batched ? Shape{batch, cout, lout} : Shape{cout, lout});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = X.data.data() + s * cin * len;
    for (std::size_t o = 0; o < cout; ++o) {
      double* yr = Y.data.data() + (s * cout + o) * lout;
      std::fill(yr, yr + lout, Bv[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xr = xs + c * len;
        const double* kr = K.data.data() + (o * cin + c) * width;
        for (std::size_t t = 0; t < width; ++t) {
          const double kv = kr[t];
          for (std::size_t p = 0; p < lout; ++p) yr[p] += kv * xr[p + t];
        }
      }
    }
  }
  return g.record(
      "conv1d", {x, kernels, bias}, std::move(Y),
      [batch, cin, len, cout, width, lout](Graph& gr, std::size_t self) {
        const auto xi = gr.input(self, 0), ki = gr.input(self, 1),
                   bi = gr.input(self, 2);
        const auto& Xv = gr.value(Var{xi});
        const auto& Kv = gr.value(Var{ki});
        auto dy = gr.out_grad(self);
        const bool want_x = gr.needs_grad(xi), want_k = gr.needs_grad(ki);
        std::span<double> dx, dk;
        if (want_x) dx = gr.grad_buffer(xi);
        if (want_k) dk = gr.grad_buffer(ki);
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t o = 0; o < cout; ++o) {
            const double* dyr = dy.data() + (s * cout + o) * lout;
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t xoff = (s * cin + c) * len;
              const std::size_t koff = (o * cin + c) * width;
              for (std::size_t t = 0; t < width; ++t) {
                if (want_k) {
                  double acc = 0.0;
                  for (std::size_t p = 0; p < lout; ++p) {
                    acc += dyr[p] * Xv[xoff + p + t];
                  }
                  dk[koff + t] += acc;
                }
                if (want_x) {
                  const double kv = Kv[koff + t];
                  double* dxr = dx.data() + xoff + t;
                  for (std::size_t p = 0; p < lout; ++p) dxr[p] += kv * dyr[p];
                }
              }
            }
          }
        }
        if (gr.needs_grad(bi)) {
          auto db = gr.grad_buffer(bi);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t o = 0; o < cout; ++o) {
              const double* dyr = dy.data() + (s * cout + o) * lout;
              for (std::size_t p = 0; p < lout; ++p) db[o] += dyr[p];
            }
          }
        }
      });
}

Var maxpool1d(Graph& g, Var x, std::size_t window, std::size_t stride) {
  const auto& X = g.value(x);
  if (window == 0 || stride == 0) {
    throw ConfigError("maxpool1d: window and stride must be positive");
  }
  const std::size_t len = X.shape.back();
  if (len < window) {
    throw ShapeError("maxpool1d: sequence length " + std::to_string(len) +
                     " shorter than window " + std::to_string(window));
  }
  const std::size_t rows = X.size() / len;
  const std::size_t lout = (len - window) / stride + 1;
  Shape out_shape = X.shape;
  out_shape.back() = lout;
  Tensor Y(out_shape);
  std::vector<std::size_t> argmax(rows * lout);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data.data() + r * len;
    for (std::size_t p = 0; p < lout; ++p) {
      std::size_t best = p * stride;
      for (std::size_t t = 1; t < window; ++t) {
        if (xr[p * stride + t] > xr[best]) best = p * stride + t;
      }
      argmax[r * lout + p] = r * len + best;
      Y[r * lout + p] = xr[best];
    }
  }
  return g.record("maxpool1d", {x}, std::move(Y),
                  [argmax = std::move(argmax)](Graph& gr, std::size_t self) {
                    const auto xi = gr.input(self, 0);
                    if (!gr.needs_grad(xi)) return;
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < argmax.size(); ++i) {
                      dx[argmax[i]] += dy[i];
                    }
                  });
}

}  // namespace tango::ad

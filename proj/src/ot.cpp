#include "tango/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tango/errors.hpp"

namespace tango::ot {

namespace {

struct SinkhornState {
  std::vector<double> f, g;
  // Potentials after every half-step, kept only when differentiating.
  std::vector<std::vector<double>> f_history, g_history;
};

// Log-domain Sinkhorn on a dense row-major cost. Fills plan and returns the
// dual potentials.
SinkhornState run_sinkhorn(const double* m, std::size_t n1, std::size_t n2,
                           const SinkhornConfig& cfg, bool keep_history,
                           TransportPlan& plan) {
  cfg.validate();
  for (std::size_t k = 0; k < n1 * n2; ++k) {
    if (!std::isfinite(m[k]) || m[k] < 0.0) {
      throw NumericError("sinkhorn: cost entry " + std::to_string(k) +
                         " is not a finite non-negative value");
    }
  }
  const double eps = cfg.epsilon;
  const double log_a = std::log(1.0 / static_cast<double>(n1));
  const double log_b = std::log(1.0 / static_cast<double>(n2));
  const double a = 1.0 / static_cast<double>(n1);
  const double b = 1.0 / static_cast<double>(n2);

  SinkhornState st;
  st.f.assign(n1, 0.0);
  st.g.assign(n2, 0.0);
  std::vector<double> scratch(std::max(n1, n2));

  auto row_residual = [&]() {
    double worst = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n2; ++j) {
        s += std::exp((st.f[i] + st.g[j] - m[i * n2 + j]) / eps);
      }
      worst = std::max(worst, std::abs(s - a));
    }
    return worst;
  };

  int it = 0;
  double residual = std::numeric_limits<double>::infinity();
  plan.converged = false;
  while (it < cfg.max_iterations) {
    ++it;
    for (std::size_t i = 0; i < n1; ++i) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n2; ++j) {
        scratch[j] = (st.g[j] - m[i * n2 + j]) / eps;
        top = std::max(top, scratch[j]);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < n2; ++j) s += std::exp(scratch[j] - top);
      st.f[i] = eps * log_a - eps * (top + std::log(s));
    }
    if (keep_history) st.f_history.push_back(st.f);
    for (std::size_t j = 0; j < n2; ++j) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n1; ++i) {
        scratch[i] = (st.f[i] - m[i * n2 + j]) / eps;
        top = std::max(top, scratch[i]);
      }
      double s = 0.0;
      for (std::size_t i = 0; i < n1; ++i) s += std::exp(scratch[i] - top);
      st.g[j] = eps * log_b - eps * (top + std::log(s));
    }
    if (keep_history) st.g_history.push_back(st.g);
    residual = row_residual();
    if (std::isnan(residual)) {
      throw NumericError("sinkhorn: NaN encountered at iteration " +
                         std::to_string(it));
    }
    if (residual <= cfg.tolerance) {
      plan.converged = true;
      break;
    }
  }

  plan.rows = n1;
  plan.cols = n2;
  plan.iterations_used = it;
  plan.row_marginal.assign(n1, a);
  plan.col_marginal.assign(n2, b);
  plan.gamma.resize(n1 * n2);
  std::vector<double> rows(n1, 0.0), cols(n2, 0.0);
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      const double v = std::exp((st.f[i] + st.g[j] - m[i * n2 + j]) / eps);
      plan.gamma[i * n2 + j] = v;
      rows[i] += v;
      cols[j] += v;
    }
  }
  double worst = 0.0;
  for (double r : rows) worst = std::max(worst, std::abs(r - a));
  for (double c : cols) worst = std::max(worst, std::abs(c - b));
  plan.residual = worst;
  return st;
}

// Reverse sweep through the unrolled iterations. `dgamma` is dL/dgamma; the
// result is dL/dM.
std::vector<double> sinkhorn_vjp(const double* m, std::size_t n1,
                                 std::size_t n2, double eps,
                                 const SinkhornState& st,
                                 const std::vector<double>& gamma,
                                 const double* dgamma) {
  const double a = 1.0 / static_cast<double>(n1);
  const double b = 1.0 / static_cast<double>(n2);
  std::vector<double> dm(n1 * n2, 0.0), df(n1, 0.0), dg(n2, 0.0);
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      const double t = dgamma[i * n2 + j] * gamma[i * n2 + j] / eps;
      df[i] += t;
      dg[j] += t;
      dm[i * n2 + j] -= t;
    }
  }
  const std::size_t iters = st.f_history.size();
  const std::vector<double> zeros(n2, 0.0);
  for (std::size_t t = iters; t-- > 0;) {
    const auto& f = st.f_history[t];
    const auto& g = st.g_history[t];
    // g_t = G(f_t, M)
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t j = 0; j < n2; ++j) {
        const double p = std::exp((f[i] + g[j] - m[i * n2 + j]) / eps) / b;
        df[i] -= dg[j] * p;
        dm[i * n2 + j] += dg[j] * p;
      }
    }
    std::fill(dg.begin(), dg.end(), 0.0);
    // f_t = F(g_{t-1}, M)
    const auto& g_prev = t > 0 ? st.g_history[t - 1] : zeros;
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t j = 0; j < n2; ++j) {
        const double q =
            std::exp((f[i] + g_prev[j] - m[i * n2 + j]) / eps) / a;
        dg[j] -= df[i] * q;
        dm[i * n2 + j] += df[i] * q;
      }
    }
    std::fill(df.begin(), df.end(), 0.0);
  }
  return dm;
}

void pairwise_distances(const double* a, std::size_t n1, const double* b,
                        std::size_t n2, std::size_t d, double* out) {
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[i * d + k] - b[j * d + k];
        s += diff * diff;
      }
      out[i * n2 + j] = std::sqrt(s);
    }
  }
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) {
    throw ConfigError("sinkhorn: epsilon must be > 0, got " +
                      std::to_string(epsilon));
  }
  if (max_iterations <= 0) {
    throw ConfigError("sinkhorn: max_iterations must be positive");
  }
  if (!(tolerance > 0.0)) {
    throw ConfigError("sinkhorn: tolerance must be > 0");
  }
  if (!(zero_guard >= 0.0)) {
    throw ConfigError("sinkhorn: zero_guard must be >= 0");
  }
}

Tensor TransportPlan::as_tensor() const { return Tensor({rows, cols}, gamma); }

Direction parse_direction(std::string_view name) {
  if (name == "both") return Direction::kBoth;
  if (name == "x1_to_x2" || name == "x1-to-x2") return Direction::kX1ToX2;
  if (name == "x2_to_x1" || name == "x2-to-x1") return Direction::kX2ToX1;
  throw ConfigError("unknown transport direction '" + std::string(name) + "'");
}

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::kBoth: return "both";
    case Direction::kX1ToX2: return "x1_to_x2";
    case Direction::kX2ToX1: return "x2_to_x1";
  }
  return "both";
}

CostMatrix cost_matrix(const Tensor& a, const Tensor& b, double zero_guard) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("cost_matrix: token dimensions differ: " +
                     ad::to_string(a.shape) + " vs " + ad::to_string(b.shape));
  }
  CostMatrix m;
  m.rows = a.dim(0);
  m.cols = b.dim(0);
  m.values.resize(m.rows * m.cols);
  pairwise_distances(a.data.data(), m.rows, b.data.data(), m.cols, a.dim(1),
                     m.values.data());
  m.max_raw = *std::max_element(m.values.begin(), m.values.end());
  if (m.max_raw < zero_guard || m.max_raw == 0.0) {
    std::fill(m.values.begin(), m.values.end(), 0.0);
    m.zero_guarded = true;
  } else {
    for (double& v : m.values) v /= m.max_raw;
  }
  return m;
}

CostMatrix cost_matrix_from_values(std::size_t rows, std::size_t cols,
                                   std::vector<double> values) {
  if (rows == 0 || cols == 0 || values.size() != rows * cols) {
    throw ShapeError("cost matrix: expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " values");
  }
  CostMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values = std::move(values);
  m.max_raw = *std::max_element(m.values.begin(), m.values.end());
  return m;
}

TransportPlan sinkhorn(const CostMatrix& m, const SinkhornConfig& cfg) {
  TransportPlan plan;
  run_sinkhorn(m.values.data(), m.rows, m.cols, cfg, false, plan);
  return plan;
}

Transported transport(const TransportPlan& plan, const Tensor& x1,
                      const Tensor& x2, Direction direction) {
  if (x1.rank() != 2 || x2.rank() != 2 || x1.dim(0) != plan.rows ||
      x2.dim(0) != plan.cols) {
    throw ShapeError("transport: plan " + std::to_string(plan.rows) + "x" +
                     std::to_string(plan.cols) + " does not conform to " +
                     ad::to_string(x1.shape) + " and " +
                     ad::to_string(x2.shape));
  }
  const std::size_t n1 = plan.rows, n2 = plan.cols;
  Transported out;
  if (direction != Direction::kX1ToX2) {
    const std::size_t d = x2.dim(1);
    Tensor t({n1, d});
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t j = 0; j < n2; ++j) {
        const double w = plan.at(i, j);
        for (std::size_t k = 0; k < d; ++k) t[i * d + k] += w * x2[j * d + k];
      }
      for (std::size_t k = 0; k < d; ++k) t[i * d + k] *= static_cast<double>(n1);
    }
    out.into_view1 = std::move(t);
  }
  if (direction != Direction::kX2ToX1) {
    const std::size_t d = x1.dim(1);
    Tensor t({n2, d});
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t i = 0; i < n1; ++i) {
        const double w = plan.at(i, j);
        for (std::size_t k = 0; k < d; ++k) t[j * d + k] += w * x1[i * d + k];
      }
      for (std::size_t k = 0; k < d; ++k) t[j * d + k] *= static_cast<double>(n2);
    }
    out.into_view2 = std::move(t);
  }
  return out;
}

Tensor gate(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = v / (1.0 + std::exp(-v));
  }
  return y;
}

double ot_distance(const TransportPlan& plan, const CostMatrix& m) {
  if (plan.rows != m.rows || plan.cols != m.cols) {
    throw ShapeError("ot_distance: plan and cost shapes differ");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < m.values.size(); ++k) {
    s += plan.gamma[k] * m.values[k];
  }
  return s;
}

ad::Var cost_matrix(ad::Graph& g, ad::Var tokens_a, ad::Var tokens_b,
                    double zero_guard) {
  const auto& A = g.value(tokens_a);
  const auto& B = g.value(tokens_b);
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) ||
      A.dim(2) != B.dim(2)) {
    throw ShapeError("cost_matrix: token shapes " + ad::to_string(A.shape) +
                     " and " + ad::to_string(B.shape) + " do not conform");
  }
  const std::size_t batch = A.dim(0), n1 = A.dim(1), n2 = B.dim(1),
                    d = A.dim(2);
  Tensor M({batch, n1, n2});
  std::vector<double> raw(batch * n1 * n2);
  std::vector<std::size_t> argmax(batch);
  std::vector<double> maxima(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    double* r = raw.data() + s * n1 * n2;
    pairwise_distances(A.data.data() + s * n1 * d, n1,
                       B.data.data() + s * n2 * d, n2, d, r);
    const auto top = std::max_element(r, r + n1 * n2);
    argmax[s] = static_cast<std::size_t>(top - r);
    maxima[s] = *top;
    if (maxima[s] < zero_guard || maxima[s] == 0.0) {
      maxima[s] = 0.0;
      continue;
    }
    for (std::size_t k = 0; k < n1 * n2; ++k) {
      M[s * n1 * n2 + k] = r[k] / maxima[s];
    }
  }
  return g.record(
      "cost_matrix", {tokens_a, tokens_b}, std::move(M),
      [batch, n1, n2, d, raw = std::move(raw), argmax = std::move(argmax),
       maxima = std::move(maxima)](ad::Graph& gr, std::size_t self) {
        const auto ai = gr.input(self, 0), bi = gr.input(self, 1);
        const auto& Av = gr.value(ad::Var{ai});
        const auto& Bv = gr.value(ad::Var{bi});
        auto dM = gr.out_grad(self);
        const bool want_a = gr.needs_grad(ai), want_b = gr.needs_grad(bi);
        std::span<double> da, db;
        if (want_a) da = gr.grad_buffer(ai);
        if (want_b) db = gr.grad_buffer(bi);
        std::vector<double> dD(n1 * n2);
        for (std::size_t s = 0; s < batch; ++s) {
          if (maxima[s] == 0.0) continue;
          const double top = maxima[s];
          const double* r = raw.data() + s * n1 * n2;
          const double* dm = dM.data() + s * n1 * n2;
          double through_max = 0.0;
          for (std::size_t k = 0; k < n1 * n2; ++k) {
            dD[k] = dm[k] / top;
            through_max -= dm[k] * r[k] / (top * top);
          }
          dD[argmax[s]] += through_max;
          for (std::size_t i = 0; i < n1; ++i) {
            for (std::size_t j = 0; j < n2; ++j) {
              const double dist = r[i * n2 + j];
              if (dist == 0.0) continue;
              const double coef = dD[i * n2 + j] / dist;
              const double* pa = Av.data.data() + (s * n1 + i) * d;
              const double* pb = Bv.data.data() + (s * n2 + j) * d;
              for (std::size_t k = 0; k < d; ++k) {
                const double v = coef * (pa[k] - pb[k]);
                if (want_a) da[(s * n1 + i) * d + k] += v;
                if (want_b) db[(s * n2 + j) * d + k] -= v;
              }
            }
          }
        }
      });
}

ad::Var sinkhorn_plan(ad::Graph& g, ad::Var cost, const SinkhornConfig& cfg,
                      bool unroll, std::vector<TransportPlan>* plans_out) {
  const auto& C = g.value(cost);
  if (C.rank() != 3) {
    throw ShapeError("sinkhorn_plan: expected [B x n1 x n2], got " +
                     ad::to_string(C.shape));
  }
  const std::size_t batch = C.dim(0), n1 = C.dim(1), n2 = C.dim(2);
  Tensor P({batch, n1, n2});
  std::vector<SinkhornState> states;
  if (plans_out) plans_out->clear();
  for (std::size_t s = 0; s < batch; ++s) {
    TransportPlan plan;
    auto st = run_sinkhorn(C.data.data() + s * n1 * n2, n1, n2, cfg, unroll,
                           plan);
    std::copy(plan.gamma.begin(), plan.gamma.end(),
              P.data.begin() + static_cast<std::ptrdiff_t>(s * n1 * n2));
    if (unroll) states.push_back(std::move(st));
    if (plans_out) plans_out->push_back(std::move(plan));
  }
  if (!unroll) return g.constant(std::move(P), "sinkhorn_plan[stop_grad]");
  const double eps = cfg.epsilon;
  return g.record(
      "sinkhorn_plan[unrolled]", {cost}, std::move(P),
      [batch, n1, n2, eps, states = std::move(states)](ad::Graph& gr,
                                                        std::size_t self) {
        const auto ci = gr.input(self, 0);
        if (!gr.needs_grad(ci)) return;
        const auto& Cv = gr.value(ad::Var{ci});
        const auto& Pv = gr.value(ad::Var{self});
        auto dP = gr.out_grad(self);
        auto dC = gr.grad_buffer(ci);
        for (std::size_t s = 0; s < batch; ++s) {
          const std::size_t off = s * n1 * n2;
          std::vector<double> gamma(Pv.data.begin() + off,
                                    Pv.data.begin() + off + n1 * n2);
          auto dm = sinkhorn_vjp(Cv.data.data() + off, n1, n2, eps, states[s],
                                 gamma, dP.data() + off);
          for (std::size_t k = 0; k < n1 * n2; ++k) dC[off + k] += dm[k];
        }
      });
}

}  // namespace tango::ot

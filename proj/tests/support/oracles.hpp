#pragma once

// Reference computations written independently of the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace tango::check {

// Plain scaling iterations u = a / (K v), v = b / (K^T u) with
// K = exp(-M / eps) and uniform a, b.
inline std::vector<double> scaling_plan(const std::vector<double>& cost,
                                        std::size_t n, std::size_t m,
                                        double eps, int iterations = 10000) {
  std::vector<double> k(n * m);
  for (std::size_t i = 0; i < n * m; ++i) k[i] = std::exp(-cost[i] / eps);
  std::vector<double> u(n, 1.0), v(m, 1.0);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += k[i * m + j] * v[j];
      u[i] = (1.0 / n) / s;
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i * m + j] * u[i];
      v[j] = (1.0 / m) / s;
    }
  }
  std::vector<double> plan(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) plan[i * m + j] = u[i] * k[i * m + j] * v[j];
  }
  return plan;
}

// With uniform marginals on an n x n problem the optimum sits on a vertex of
// the Birkhoff polytope: a permutation matrix scaled by 1/n.
inline double exact_ot_by_permutations(const std::vector<double>& cost,
                                       std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ||a_i - b_j|| for row-major a [n x d], b [m x d].
inline std::vector<double> pairwise_distances(const std::vector<double>& a,
                                              const std::vector<double>& b,
                                              std::size_t n, std::size_t m,
                                              std::size_t d) {
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[i * d + k] - b[j * d + k];
        s += diff * diff;
      }
      out[i * m + j] = std::sqrt(s);
    }
  }
  return out;
}

inline double plan_entropy(const std::vector<double>& plan) {
  double h = 0.0;
  for (double p : plan) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace tango::check

#include "stgat/netrecon.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stgat/errors.hpp"
#include "stgat/rng.hpp"

namespace stgat::net {

namespace {

double max_relative_violation(const Matrix& a,
                              const std::vector<double>& rows,
                              const std::vector<double>& cols) {
  const std::size_t n = rows.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = a.row_sum(i);
    if (rows[i] > 0.0) {
      worst = std::max(worst, std::abs(s - rows[i]) / rows[i]);
    } else {
      worst = std::max(worst, std::abs(s));
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double s = a.col_sum(j);
    if (cols[j] > 0.0) {
      worst = std::max(worst, std::abs(s - cols[j]) / cols[j]);
    } else {
      worst = std::max(worst, std::abs(s));
    }
  }
  return worst;
}

}  // namespace

double rescale_columns(const std::vector<double>& row_marginals,
                       std::vector<double>& col_marginals) {
  double sum_r = 0.0, sum_c = 0.0;
  for (double v : row_marginals) sum_r += v;
  for (double v : col_marginals) sum_c += v;
  if (sum_c <= 0.0) {
    if (sum_r <= 0.0) return 1.0;
    throw DataError("rescale_columns: zero column total with nonzero rows");
  }
  const double factor = sum_r / sum_c;
  for (double& v : col_marginals) v *= factor;
  return factor;
}

ExposureMatrix ras_reconstruct(const std::vector<double>& row_marginals,
                               const std::vector<double>& col_marginals,
                               double tol, std::size_t max_iter) {
  const std::size_t n = row_marginals.size();
  if (col_marginals.size() != n) {
    throw DataError("ras_reconstruct: marginal lengths differ");
  }
  double sum_r = 0.0, sum_c = 0.0;
  for (double v : row_marginals) {
    if (v < 0.0) throw DataError("ras_reconstruct: negative row marginal");
    sum_r += v;
  }
  for (double v : col_marginals) {
    if (v < 0.0) throw DataError("ras_reconstruct: negative column marginal");
    sum_c += v;
  }
  if (n == 1) {
    if (sum_r == 0.0 && sum_c == 0.0) {
      ExposureMatrix out;
      out.n = 1;
      out.a = Matrix(1, 1, 0.0);
      out.row_marginals = row_marginals;
      out.col_marginals = col_marginals;
      return out;
    }
    throw DataError("ras_reconstruct: n=1 with nonzero marginals has no "
                    "feasible off-diagonal matrix");
  }
  if (n == 0) throw DataError("ras_reconstruct: empty marginals");
  if (sum_r > 0.0 && std::abs(sum_r - sum_c) / sum_r > 1e-6) {
    throw DataError("ras_reconstruct: marginal totals disagree (" +
                    std::to_string(sum_r) + " vs " + std::to_string(sum_c) +
                    "); rescale columns first");
  }

  ExposureMatrix out;
  out.n = n;
  out.row_marginals = row_marginals;
  out.col_marginals = col_marginals;
  out.a = Matrix(n, n, 0.0);
  Matrix& a = out.a;

  if (sum_r == 0.0) return out;  // all-zero marginals: zero matrix, converged

  // entropy prior start: outer product of the marginals, zero diagonal
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) a(i, j) = row_marginals[i] * col_marginals[j] / sum_r;
    }
  }

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      const double s = a.row_sum(i);
      if (s > 0.0) {
        const double f = row_marginals[i] / s;
        for (std::size_t j = 0; j < n; ++j) a(i, j) *= f;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double s = a.col_sum(j);
      if (s > 0.0) {
        const double f = col_marginals[j] / s;
        for (std::size_t i = 0; i < n; ++i) a(i, j) *= f;
      }
    }
    out.iterations = iter;
    out.residual = max_relative_violation(a, row_marginals, col_marginals);
    if (out.residual <= tol) return out;
  }
  throw ConvergenceError(
      "ras_reconstruct: no convergence after " + std::to_string(max_iter) +
          " iterations, residual " + std::to_string(out.residual),
      out.residual);
}

EdgeList normalize_edges(const ExposureMatrix& mat,
                         const std::vector<double>& tier1,
                         double prune_threshold) {
  const std::size_t n = mat.n;
  if (tier1.size() != n) {
    throw DataError("normalize_edges: tier1 length does not match matrix");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (tier1[j] <= 0.0) {
      throw DataError("normalize_edges: non-positive tier1 capital at node " +
                      std::to_string(j));
    }
  }
  EdgeList out;
  out.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = mat.a(i, j) / tier1[j];
      if (w >= prune_threshold && w > 0.0) {
        out.edges.push_back({i, j, w});
      }
    }
  }
  return out;
}

ad::Tensor macro_multiplier(const std::array<double, panel::kMacroDim>& z,
                            const MacroMlp& mlp) {
  ad::Tensor zt =
      ad::constant({1, panel::kMacroDim}, std::vector<double>(z.begin(), z.end()));
  ad::Tensor h = ad::tanh(ad::add_rowvec(ad::matmul(zt, mlp.w1), mlp.b1));
  return ad::sigmoid(ad::add_rowvec(ad::matmul(h, mlp.w2), mlp.b2));
}

EdgeList condition_edges(const EdgeList& edges, double m) {
  EdgeList out = edges;
  for (auto& e : out.edges) e.weight *= m;
  return out;
}

EdgeList permute_edges(const EdgeList& edges, std::uint64_t seed) {
  const std::size_t n = edges.n;
  if (n < 2) throw DataError("permute_edges: need at least 2 nodes");
  const std::size_t n_pairs = n * (n - 1);
  if (edges.edges.size() > n_pairs) {
    throw DataError("permute_edges: more edges than ordered node pairs");
  }
  // draw edge slots without replacement from all non-self ordered pairs
  std::vector<std::size_t> pairs(n_pairs);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) pairs[k++] = i * n + j;
    }
  }
  Rng rng(mix_seed(seed, 0x9e47u));
  // partial Fisher-Yates: first E entries are a uniform sample
  const std::size_t e = edges.edges.size();
  for (std::size_t i = 0; i < e; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n_pairs - i));
    std::swap(pairs[i], pairs[j]);
  }
  EdgeList out;
  out.n = n;
  out.edges.reserve(e);
  for (std::size_t i = 0; i < e; ++i) {
    out.edges.push_back(
        {pairs[i] / n, pairs[i] % n, edges.edges[i].weight});
  }
  return out;
}

}  // namespace stgat::net

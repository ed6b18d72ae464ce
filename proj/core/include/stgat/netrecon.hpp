#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "stgat/matrix.hpp"
#include "stgat/panel.hpp"
#include "stgat/tensor.hpp"

namespace stgat::net {

// Bilateral exposure matrix balanced to the observed marginals.
struct ExposureMatrix {
  std::size_t n = 0;
  Matrix a;  // a(i,j) = exposure of i to j; zero diagonal
  std::vector<double> row_marginals;
  std::vector<double> col_marginals;
  std::size_t iterations = 0;
  double residual = 0.0;  // max relative marginal violation at exit
};

struct Edge {
  std::size_t src = 0;  // holder of the claim
  std::size_t dst = 0;  // counterparty whose distress transmits to src
  double weight = 0.0;  // exposure / tier1 capital of dst (LGD fraction)
};

struct EdgeList {
  std::size_t n = 0;
  std::vector<Edge> edges;
};

// RAS / iterative proportional fitting with an entropy-prior start and the
// diagonal pinned to zero on every sweep. Marginal totals must already agree
// to 1e-6 relative (rescale_columns below does that); convergence is the max
// relative row/column violation <= tol.
ExposureMatrix ras_reconstruct(const std::vector<double>& row_marginals,
                               const std::vector<double>& col_marginals,
                               double tol = 1e-8,
                               std::size_t max_iter = 10000);

// Scales col_marginals by (sum rows / sum cols); returns the factor applied.
double rescale_columns(const std::vector<double>& row_marginals,
                       std::vector<double>& col_marginals);

// a(i,j) / tier1[j], dropping weights below `prune_threshold` (boundary is
// kept). Zero entries are never emitted.
EdgeList normalize_edges(const ExposureMatrix& mat,
                         const std::vector<double>& tier1,
                         double prune_threshold = 0.001);

// Learned scalar stress multiplier sigma(MLP(z)) in (0,1); stays on the tape
// so training can push gradients into the MLP weights.
struct MacroMlp {
  ad::Tensor w1;  // 7 x hidden
  ad::Tensor b1;  // 1 x hidden
  ad::Tensor w2;  // hidden x 1
  ad::Tensor b2;  // 1 x 1
};
ad::Tensor macro_multiplier(const std::array<double, panel::kMacroDim>& z,
                            const MacroMlp& mlp);

// Plain scaling of every edge weight by m (topology untouched).
EdgeList condition_edges(const EdgeList& edges, double m);

// Same weights, uniformly re-drawn source-target pairs (no self loops,
// no duplicates). Deterministic per seed.
EdgeList permute_edges(const EdgeList& edges, std::uint64_t seed);

}  // namespace stgat::net

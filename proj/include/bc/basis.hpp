// Piecewise-linear time hats on a uniform subgrid, least-squares projection
// onto them, tensor source bases over patch nodes, and smooth window bumps
// used as test functions.
#pragma once

#include <vector>

#include "bc/fields.hpp"
#include "bc/types.hpp"

namespace bc {

// Hats with spacing delta = stride * dt, centered at (l+1) * delta for
// l = 0..n-1. All of them vanish at t = 0 and at the last covered node, so
// every element is compactly supported inside (0, T).
struct TimeBasis {
  TimeGrid grid;
  int stride = 1;
  double delta = 0.0;
  int n = 0;
  double center(int l) const { return (l + 1) * delta; }
};

TimeBasis make_time_basis(const TimeGrid& grid, int stride);

double hat_value(const TimeBasis& b, int l, double t);
// Samples of hat l on the fine grid (nt+1 entries).
VectorXd hat_samples(const TimeBasis& b, int l);
// Coefficients -> fine-grid samples.
VectorXcd synth_time(const TimeBasis& b, const VectorXcd& c);
// Least-squares fit of fine-grid samples by the hats, using the same
// trapezoid pairing throughout, so functions in the span project exactly.
VectorXcd project_time(const TimeBasis& b, const VectorXcd& samples);

// Hats tensored with single-node indicators on a patch; column j addresses
// node j / n and hat j % n (node-major blocks).
struct SourceBasis {
  TimeBasis time;
  std::vector<int> nodes;
  int cols() const { return time.n * (int)nodes.size(); }
  int node_of(int j) const { return nodes[j / time.n]; }
  int hat_of(int j) const { return j % time.n; }
};

SourceBasis make_source_basis(const std::vector<int>& nodes, const TimeGrid& grid, int stride);
// Basis element j as a field supported on its single node.
SpaceTimeField basis_source(const SourceBasis& b, int j);
// Coefficients -> field on all basis nodes.
SpaceTimeField synth_source(const SourceBasis& b, const VectorXcd& coeffs);
// Per-node least-squares projection of a field sampled on the basis nodes.
VectorXcd project_source(const SourceBasis& b, const SpaceTimeField& f);

// C^2 window bump cos^4(pi x / 2) on |x| < 1 and its second derivative.
double bump(double x);
double bump_d2(double x);

}  // namespace bc

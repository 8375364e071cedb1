// Time grids, coefficient fields (A, Q and the transposed zero-order term),
// space-time sample arrays, wavefield history, and the discrete differential
// operators they share.
#pragma once

#include <vector>

#include "bc/geometry.hpp"
#include "bc/types.hpp"

namespace bc {

struct TimeGrid {
  double dt = 0.0;
  int nt = 0;       // steps; samples are 0..nt
  double T = 0.0;   // horizon = nt * dt
  double t(int m) const { return m * dt; }
  int samples() const { return nt + 1; }
};

// Largest stable step for the explicit scheme on this grid (before the 0.9
// safety factor): 2 / sqrt(lambda_max) per-node estimate.
double cfl_limit(const DiscreteDomain& dom);

TimeGrid make_time_grid(const DiscreteDomain& dom, double T, double cfl = 0.9);
// Grids over (0,T) and (0,2T) sharing one step, so T is a sample of both.
std::pair<TimeGrid, TimeGrid> make_time_grid_pair(const DiscreteDomain& dom, double T,
                                                  double cfl = 0.9);

// Coefficients of the operator Delta_g - A.grad - Q. The zero-order term of
// the transposed operator Delta_g + A.grad - Q_ad is kept in sync.
struct CoefficientField {
  VectorXcd ax, ay;  // vector field components (ay unused in 1D)
  VectorXcd q;
  VectorXcd q_ad;  // Q - div_g A
};

CoefficientField make_coefficients(const DiscreteDomain& dom, VectorXcd ax, VectorXcd ay,
                                   VectorXcd q);
CoefficientField zero_coefficients(const DiscreteDomain& dom);

// Discrete differential operators (centered interior, one-sided at the
// boundary). grad_g returns the metric gradient c^2 grad; div_g the metric
// divergence; laplace_g the Laplace-Beltrami operator of g = c^{-2} dx^2.
void gradient(const DiscreteDomain& dom, const VectorXcd& f, VectorXcd& gx, VectorXcd& gy);
VectorXcd grad_g_x(const DiscreteDomain& dom, const VectorXcd& f);
VectorXcd grad_g_y(const DiscreteDomain& dom, const VectorXcd& f);
VectorXcd div_g(const DiscreteDomain& dom, const VectorXcd& ax, const VectorXcd& ay);
VectorXcd laplace_g(const DiscreteDomain& dom, const VectorXcd& f);

// Samples over a time grid on listed elements (boundary patch nodes, interior
// node set, or receiver features): vals is (nt+1) x |elems|.
struct SpaceTimeField {
  TimeGrid time;
  std::vector<int> elems;
  MatrixXcd vals;
};

SpaceTimeField zero_field(const TimeGrid& time, std::vector<int> elems);

// Full space-time solution history plus the final snapshot pair.
struct Wavefield {
  TimeGrid time;
  MatrixXcd u;  // n_nodes x (nt+1); column m is the snapshot at t_m
  VectorXcd u_T, ut_T;
};

// L2(M) bilinear pairing with volume quadrature: sum w_i a_i b_i (no conjugation).
cplx pair_volume(const DiscreteDomain& dom, const VectorXcd& a, const VectorXcd& b);
// Bilinear space-time pairing over a patch: sum_t sum_e dt w_e a b (trapezoid in t).
cplx pair_spacetime(const DiscreteDomain& dom, const SpaceTimeField& a, const SpaceTimeField& b);
// Hermitian L2(M) norm.
double norm_volume(const DiscreteDomain& dom, const VectorXcd& a);
double norm_spacetime(const DiscreteDomain& dom, const SpaceTimeField& a);

// Energy (kinetic + metric Dirichlet + real(Q) potential) of a snapshot pair.
double field_energy(const DiscreteDomain& dom, const CoefficientField& coeff, const VectorXcd& u,
                    const VectorXcd& ut);

}  // namespace bc

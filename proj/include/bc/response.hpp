// Boundary measurement operators: the source-to-trace map assembled column
// by column from wave solves, the time filters R and J, the connecting
// operator built from them, and direct two-solve checks of the pairing and
// transposition identities.
#pragma once

#include <vector>

#include "bc/basis.hpp"
#include "bc/geometry.hpp"
#include "bc/wave.hpp"

namespace bc {

// Where measurements are taken: a boundary patch (modified normal trace) or
// an interior node set B carrying a weight kappa (samples of kappa * u).
struct ReceiverSpec {
  bool interior = false;
  std::vector<int> nodes;
  VectorXcd kappa;  // sampled on the whole domain; used in the interior case
};

ReceiverSpec boundary_receiver(const BoundaryPatch& r);
ReceiverSpec interior_receiver(const std::vector<int>& nodes, const VectorXcd& kappa);

// Dense realization of the source-to-measurement map over (0, horizon).
// Row index = sample m * |receiver| + element e; column j is the measured
// trace of the basis source j.
struct ResponseOperator {
  std::vector<int> source_nodes;
  ReceiverSpec receiver;
  SourceBasis basis;  // over (0, horizon)
  TimeGrid grid;      // the (0, horizon) grid
  MatrixXcd mat;

  int rows() const { return (int)mat.rows(); }
  int cols() const { return (int)mat.cols(); }
  SpaceTimeField apply(const VectorXcd& coeffs) const;
};

// Dense realization of the connecting map on (0,T): sources in the (0,T)
// basis to fields on (0,T) x V.
struct ConnectingOperator {
  std::vector<int> v_nodes;
  ReceiverSpec receiver;
  SourceBasis basis;  // over (0,T)
  TimeGrid grid;      // the (0,T) grid
  MatrixXcd mat;

  SpaceTimeField apply(const VectorXcd& coeffs) const;
};

// Rpsi(t) = psi(T - t): samples reversed in place on the uniform grid.
SpaceTimeField time_reverse(const SpaceTimeField& psi, double T);
// Jpsi(t) = 1/2 integral_t^{2T-t} psi(s) ds, trapezoid rule; psi lives on
// (0, 2T), the result on (0, T).
SpaceTimeField time_integrate_J(const SpaceTimeField& psi, double T);

// Column j = measured trace of solve_forward(basis_j): modified normal trace
// on a boundary receiver, kappa * u samples on an interior one.
ResponseOperator assemble_response(const DiscreteDomain& dom, const CoefficientField& coeff,
                                   const BoundaryPatch& S, const ReceiverSpec& receiver,
                                   const TimeGrid& grid2T, int stride,
                                   const WaveOptions& opt = {});

// K = J Lambda - R Lambda R J on the shared half-horizon grid. The inner
// R J of a basis source is re-expanded in the source basis by least squares
// (held constant past T, which the restricted output cannot see).
ConnectingOperator assemble_connecting(const ResponseOperator& lam);

struct IdentityCheck {
  cplx lhs = 0.0, rhs = 0.0;
  double gap = 0.0;
};

// Final-state pairing identity: <v^p(T), u^f(T)>_M against <p, K f> on
// (0,T) x V, the left side via two direct solves (forward for f, transposed
// for p), the right via the assembled matrix. Bilinear pairings throughout.
IdentityCheck verify_blago(const DiscreteDomain& dom, const CoefficientField& coeff,
                           const ConnectingOperator& K, const VectorXcd& f_coeffs,
                           const SpaceTimeField& p, const WaveOptions& opt = {});

// Transposition identity: <Lambda_{S,R} f, p> against <f, R Lambda'_{R,S} R p>
// where the primed map solves the transposed equation and takes the trace
// with the opposite sign convention. Both sides by direct solves.
IdentityCheck verify_transposition(const DiscreteDomain& dom, const CoefficientField& coeff,
                                   const BoundaryPatch& S, const BoundaryPatch& R, double T,
                                   const SpaceTimeField& f, const SpaceTimeField& p,
                                   const WaveOptions& opt = {});

}  // namespace bc

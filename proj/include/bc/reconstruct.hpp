// Gauge algebra on coefficient pairs, point-value recovery from localized
// sources, per-node operator identification, orbit comparison, gluing of
// gauge patches, interior continuation of boundary data, and the local /
// foliated reconstruction drivers built from all of these.
#pragma once

#include <vector>

#include "bc/control.hpp"
#include "bc/response.hpp"

namespace bc {

// Nowhere-vanishing multiplier pinned to 1 on an anchor set.
struct GaugeField {
  VectorXcd kappa;
  NodeSet anchor;
};

// Validates: no zero of kappa anywhere, |kappa - 1| <= 1e-10 on the anchor.
GaugeField make_gauge(const DiscreteDomain& dom, VectorXcd kappa, NodeSet anchor);
GaugeField unit_gauge(const DiscreteDomain& dom, NodeSet anchor);

enum class Provenance { Truth, Recovered, Gauged };

// Coefficient pair (A, Q) with a region of validity. Values are stored on
// full-length vectors; entries outside the region are not meaningful.
struct OperatorCoefficients {
  NodeSet region;
  VectorXcd ax, ay, q;
  Provenance provenance = Provenance::Truth;
};

OperatorCoefficients truth_coefficients(const DiscreteDomain& dom, const CoefficientField& c);
// Usable by the solvers; values outside the region are zeroed.
CoefficientField to_coefficient_field(const DiscreteDomain& dom, const OperatorCoefficients& c);

// Multiplicative change of representative:
//   A_k = A + 2 kappa^{-1} grad_g kappa,
//   Q_k = Q + kappa (A.grad - Delta_g) kappa^{-1},
// derivatives by the shared centered stencils. Nodes of the region whose
// stencil leaves it use whatever values the input vectors carry there, so the
// inputs must be valid on a one-cell collar.
OperatorCoefficients apply_gauge(const DiscreteDomain& dom, const OperatorCoefficients& c,
                                 const GaugeField& g);

struct OrbitWitness {
  bool equivalent = false;
  GaugeField witness;
  double curl_residual = 0.0;  // loop consistency of (A2 - A1)/2 (2D only)
  double a_residual = 0.0;
  double q_residual = 0.0;
};

// Tests whether c2 is a gauge transform of c1 with kappa = 1 on the anchor:
// grad log kappa must equal (A2 - A1)/2, which is integrated over a spanning
// tree of the shared region, and the Q relation is then checked against
// apply_gauge. Throws if the shared region is disconnected from the anchor.
OrbitWitness orbit_equivalent(const DiscreteDomain& dom, const OperatorCoefficients& c1,
                              const OperatorCoefficients& c2, const NodeSet& anchor,
                              double tol = 0.05);

// Tail limits of the pairings <profile, K f_j> over a localized source
// sequence: one value per test profile, estimating the profile's adjoint
// state at the plan's target point (scaled by the construction's gauge
// factor). Throws NumericalError when a sequence fails the Cauchy check at
// tolerance tol relative to the profile scale.
struct PointValues {
  int x_node = -1;
  VectorXcd values;    // one tail estimate per profile
  MatrixXcd sequence;  // n_profiles x |js| raw pairings
  double worst_gap = 0.0;
};

PointValues recover_point_values(const DiscreteDomain& dom, const ConnectingOperator& K,
                                 const LocalizedSourcePlan& src,
                                 const std::vector<SpaceTimeField>& profiles, double tol = 0.05);

// Per-node least squares for  w_tt = Delta_g w + B.grad w + c w  over a
// family of sampled fields, followed by the bilinear transposition
// A = B, Q = div_g B - c. Samples must be valid on sample_region (one cell
// more than region); nodes whose stencil leaves sample_region or whose local
// system is rank-deficient are flagged and filled from recovered neighbors.
struct CoefficientFit {
  OperatorCoefficients coeffs;
  NodeSet flagged;
};

CoefficientFit recover_coefficients(const DiscreteDomain& dom, const std::vector<VectorXcd>& w,
                                    const std::vector<VectorXcd>& w_tt, const NodeSet& region,
                                    const NodeSet& sample_region);

// A value field recovered on one patch, known up to a patch-wise factor.
struct GaugePatch {
  NodeSet region;
  VectorXcd values;
};

// Rescales every patch so the pairwise overlap ratios against the anchor
// patch's scale are 1, then blends overlaps. Ratio per overlap by least
// squares; factors solved on the patch graph anchored at anchor_patch.
// Throws NumericalError naming the worst overlap when the post-rescale
// spread exceeds tol.
struct StitchResult {
  NodeSet region;
  VectorXcd values;
  std::vector<cplx> factors;
  double worst_spread = 0.0;
};

StitchResult stitch_gauges(const DiscreteDomain& dom, const std::vector<GaugePatch>& patches,
                           int anchor_patch, double tol);

struct ContinuationOptions {
  double window = 0.0;    // probe support length; 0: reach of the target set
  double alpha = 1e-10;   // relative Tikhonov weight of the moment solve
  int max_probes = 400;   // cap on the probe family size
};

// Moves response data inward: returns samples of the (gauge-weighted) wave
// field on target_nodes for every source column of lam, built by pairing the
// connecting operator of lam against probe states of the representative
// adjoint equation and inverting the resulting moment problem; the horizon is
// filled by time translation on the hat grid. Boundary data seeds the first
// interior operator (Dirichlet probes on lam's receiver patch); interior data
// is extended ball to ball (forcing probes on lam's receiver set). rep must
// be valid wherever the probe states reach, i.e. within `window` of the
// target set. The output spans (0, lam.grid.T / 2) and keeps the leading
// source columns of lam that fit in that horizon.
ResponseOperator continue_interior_data(const DiscreteDomain& dom,
                                        const OperatorCoefficients& rep,
                                        const ResponseOperator& lam,
                                        const std::vector<int>& target_nodes,
                                        const ContinuationOptions& opt = {});

struct ReconstructionOptions {
  double depth = 0.3;        // collar depth measured from R
  double eps = 0.1;          // localization patch radius
  double eps_prime = 0.05;   // cylinder half-width
  int rungs = 8;             // cap-radius ladder length, in hat spacings
  double alpha = 0.0;        // localized-source regularization; 0: auto
  double tol = 0.08;         // extrapolation residual allowed per value
  double stitch_tol = 0.25;  // overlap spread allowed when gluing patches
  int profiles = 6;          // test profiles per cap
  int x_stride = 1;          // node stride of the recovery grid
};

// Everything the drivers report: the glued representative (provenance
// Recovered, kappa = 1 on R enforced through the boundary values of the test
// profiles), the nodes that had to be interpolated, and stitch diagnostics.
struct Reconstruction {
  OperatorCoefficients coeffs;
  NodeSet flagged;
  StitchResult stitch;
};

// Local reconstruction on a collar of R from boundary data alone. lam spans
// (0, 2T) with sources on S and the modified normal trace on R.
Reconstruction reconstruct_local(const DiscreteDomain& dom, const ResponseOperator& lam,
                                 const BoundaryPatch& S, const BoundaryPatch& R, double T,
                                 const ReconstructionOptions& opt = {});

// Global variant: iterates the local step along the foliation, moving the
// data inward with continue_interior_data before each slice and gluing the
// per-slice gauges, until the last slice value.
Reconstruction reconstruct_foliated(const DiscreteDomain& dom, const ResponseOperator& lam,
                                    const BoundaryPatch& S, const BoundaryPatch& R,
                                    const FoliationSpec& fol, double T,
                                    const ReconstructionOptions& opt = {});

}  // namespace bc

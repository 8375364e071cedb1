// Discrete control: the dense source-to-final-state map, its Tikhonov
// pseudoinverse, localized source sequences with their diagnostics, the
// trace support test, and the weak-pairing subset oracle.
#pragma once

#include <vector>

#include "bc/basis.hpp"
#include "bc/geometry.hpp"
#include "bc/response.hpp"
#include "bc/wave.hpp"

namespace bc {

// Dense realization of f -> u^f(T) on node values; ut holds the companion
// velocity block when requested. w carries the volume quadrature weights and
// gram the source-side L2((0,T) x S) Gram matrix, so weighted matrix algebra
// reproduces the continuous pairings.
struct ControlMap {
  std::vector<int> source_nodes;
  SourceBasis basis;  // over (0,T)
  TimeGrid grid;
  MatrixXcd u;
  MatrixXcd ut;  // empty unless assembled with velocity
  VectorXd w;
  MatrixXd gram;
  std::vector<std::uint8_t> interior;  // reachability is judged away from the rim

  int cols() const { return (int)u.cols(); }
  VectorXcd apply(const VectorXcd& coeffs) const { return u * coeffs; }
};

// Column j = final state of the forward solve driven by basis source j.
ControlMap assemble_control_map(const DiscreteDomain& dom, const CoefficientField& coeff,
                                const BoundaryPatch& S, const TimeGrid& gridT, int stride,
                                bool with_velocity = false);

// The L2((0,T) x S) Gram of the source basis on its own, for callers that
// need source-side norms without assembling any wave solves.
MatrixXd source_gram(const DiscreteDomain& dom, const SourceBasis& basis);

struct TikhonovResult {
  VectorXcd f;
  double residual = 0.0;  // ||Uf - target|| / ||target||, volume-weighted
};

// Minimizer of ||Uf - target||^2_{L2(M)} + alpha ||f||^2_{L2((0,T)xS)} via the
// normal equations.
TikhonovResult tikhonov_pseudoinverse(const ControlMap& U, const VectorXcd& target,
                                      double alpha);

struct ControlMargin {
  double sigma_min = 0.0, sigma_max = 0.0;
};

// Extreme singular values of the map between the weighted source geometry and
// the span of smooth probe states, the scales the grid can actually carry a
// wave into. The low end is the controllability margin reported for every
// plan.
ControlMargin controllability_margin(const DiscreteDomain& dom, const ControlMap& U);

// Sources f_j aimed at the normalized indicators of the shrinking sets X_j,
// with the diagnostics that make the localization conditions decidable:
// source norms against |X_j|^{-1/2}, final-state mass escaping X_j, and the
// pairing sequence against the constant test function.
struct LocalizedSourcePlan {
  LocalizationPlan plan;
  double alpha = 0.0;
  ControlMargin margin;
  bool margin_warning = false;
  std::vector<VectorXcd> f;  // per-j source coefficients
  MatrixXcd u_T;             // per-j final states, node values in columns
  VectorXd norm_f;           // L2((0,T)xS) norms
  VectorXd xj_measure;       // |X_j|
  VectorXd c_bound;          // norm_f * sqrt(|X_j|)
  VectorXd support_residual; // relative final-state mass outside X_j (2-cell band)
  VectorXcd pairing;         // <u_j(T), 1>, bilinear
  bool pairing_converged = false;
};

// alpha <= 0 selects the default 1e-6 * ||U||^2. Warns through the plan (not
// an error) when the controllability margin is small relative to ||U||.
LocalizedSourcePlan localized_sources(const DiscreteDomain& dom, const ControlMap& U,
                                      const LocalizationPlan& plan, double alpha,
                                      double target_tol = 0.05);

// Pairings <u_j(T), psi> for all j in the plan.
VectorXcd pairing_sequence(const DiscreteDomain& dom, const LocalizedSourcePlan& lsp,
                           const VectorXcd& psi);
// Cauchy test over the last (up to) five entries.
bool sequence_converged(const VectorXcd& seq, double tol);

struct SupportCheck {
  bool pass = false;
  double residual = 0.0;
};

// Largest normalized pairing |<phi, kf>| / (||phi|| ||kf||) over windowed
// bumps supported inside the cap, at three dyadic widths per element; pass
// iff it stays below tau. An empty cap passes vacuously.
SupportCheck support_test(const DiscreteDomain& dom, const SpaceTimeField& kf,
                          const SpaceTimeCap& cap, double tau);

// Decides whether waves excited from sources supported in the time cap of
// height h1 over V are weakly reproduced, through all pairings against the
// operator's range, by sources from the h2 cap: max residual over the h1
// basis of the least-squares fit by h2 columns, compared with tau. rho_max
// reports that residual when non-null.
bool subset_oracle(const DiscreteDomain& dom, const ConnectingOperator& K,
                   const std::vector<int>& v_nodes, const HeightProfile& h1,
                   const HeightProfile& h2, double T, double tau,
                   double* rho_max = nullptr);

}  // namespace bc

// Leapfrog solver for (d_t^2 - Delta_g + A.grad + Q) u = 0 with Dirichlet
// injection, its transposed variant with interior forcing, and the modified
// normal trace along the inward normal.
#pragma once

#include <optional>

#include "bc/fields.hpp"
#include "bc/geometry.hpp"

namespace bc {

enum class TraceSign { Forward, Adjoint };  // -1/2 (A,nu)_g u vs +1/2 (A,nu)_g u

struct WaveOptions {
  ExecPolicy policy = default_policy();
  bool keep_history = true;  // false: only the final snapshot pair is stored
};

// Forward problem: zero Cauchy data, Dirichlet data f injected on its patch
// nodes (all other boundary nodes held at zero).
Wavefield solve_forward(const DiscreteDomain& dom, const CoefficientField& coeff,
                        const SpaceTimeField& f, const WaveOptions& opt = {});

// Transposed problem (d_t^2 - Delta_g - A.grad + Q_ad) v = kappa * H with
// Dirichlet data phi; either input may be null. kappa defaults to 1.
Wavefield solve_adjoint(const DiscreteDomain& dom, const CoefficientField& coeff,
                        const SpaceTimeField* phi, const SpaceTimeField* H,
                        const VectorXcd* kappa, const TimeGrid& time,
                        const WaveOptions& opt = {});

// d_nu u +/- shift, where d_nu is the one-sided 3-point derivative along the
// inward unit normal of g and shift = -(Forward) or +(Adjoint) half (A,nu)_g u.
SpaceTimeField neumann_trace(const Wavefield& u, const DiscreteDomain& dom,
                             const CoefficientField& coeff, const BoundaryPatch& gamma,
                             TraceSign sign);

// Samples of u on a node set over time: vals(m, k) = u(t_m, nodes[k]).
SpaceTimeField restrict_field(const Wavefield& u, const std::vector<int>& nodes);

std::pair<VectorXcd, VectorXcd> final_state(const DiscreteDomain& dom,
                                            const CoefficientField& coeff,
                                            const SpaceTimeField& f);

// Max residual of the recorded history against the scheme (interior nodes,
// forcing term included when given). Self-check: should be ~1e-10.
double scheme_residual(const Wavefield& w, const DiscreteDomain& dom,
                       const CoefficientField& coeff, bool adjoint,
                       const SpaceTimeField* H = nullptr, const VectorXcd* kappa = nullptr);

// The solver's interior spatial operator applied to one snapshot:
// Delta_g u - A.grad u - Q u (forward) or Delta_g u + A.grad u - Q_ad u
// (adjoint). Boundary rows are zero.
VectorXcd apply_spatial_operator(const DiscreteDomain& dom, const CoefficientField& coeff,
                                 const VectorXcd& u, bool adjoint);

}  // namespace bc

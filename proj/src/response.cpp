#include "bc/response.hpp"

#include <cmath>
#include <cstdio>

namespace bc {

namespace {

void require_horizon(double have, double want, const char* who) {
  if (std::abs(have - want) > 1e-9 * std::max(1.0, std::abs(want))) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "%s: field horizon %.6g does not match %.6g", who, have, want);
    throw ConfigError(msg);
  }
}

// Prefix-trapezoid realization of psi -> 1/2 integral_t^{2T-t} psi.
VectorXcd j_filter(const TimeGrid& g2, const VectorXcd& samples) {
  int nt2 = g2.nt, nt = nt2 / 2;
  VectorXcd prefix(nt2 + 1);
  prefix[0] = 0.0;
  for (int m = 1; m <= nt2; ++m)
    prefix[m] = prefix[m - 1] + 0.5 * g2.dt * (samples[m - 1] + samples[m]);
  VectorXcd out(nt + 1);
  for (int m = 0; m <= nt; ++m) out[m] = 0.5 * (prefix[nt2 - m] - prefix[m]);
  return out;
}

TimeGrid half_grid(const TimeGrid& g2) {
  if (g2.nt % 2 != 0)
    throw ConfigError("connecting operator: horizon grid must have an even step count");
  TimeGrid g;
  g.dt = g2.dt;
  g.nt = g2.nt / 2;
  g.T = 0.5 * g2.T;
  return g;
}

}  // namespace

ReceiverSpec boundary_receiver(const BoundaryPatch& r) {
  ReceiverSpec spec;
  spec.interior = false;
  spec.nodes = r.nodes;
  return spec;
}

ReceiverSpec interior_receiver(const std::vector<int>& nodes, const VectorXcd& kappa) {
  ReceiverSpec spec;
  spec.interior = true;
  spec.nodes = nodes;
  spec.kappa = kappa;
  return spec;
}

SpaceTimeField ResponseOperator::apply(const VectorXcd& coeffs) const {
  if ((int)coeffs.size() != cols()) throw ConfigError("response apply: coefficient count mismatch");
  VectorXcd flat = mat * coeffs;
  SpaceTimeField out = zero_field(grid, receiver.nodes);
  int nv = (int)receiver.nodes.size();
  for (int m = 0; m <= grid.nt; ++m)
    for (int e = 0; e < nv; ++e) out.vals(m, e) = flat[m * nv + e];
  return out;
}

SpaceTimeField ConnectingOperator::apply(const VectorXcd& coeffs) const {
  if ((int)coeffs.size() != (int)mat.cols())
    throw ConfigError("connecting apply: coefficient count mismatch");
  VectorXcd flat = mat * coeffs;
  SpaceTimeField out = zero_field(grid, v_nodes);
  int nv = (int)v_nodes.size();
  for (int m = 0; m <= grid.nt; ++m)
    for (int e = 0; e < nv; ++e) out.vals(m, e) = flat[m * nv + e];
  return out;
}

SpaceTimeField time_reverse(const SpaceTimeField& psi, double T) {
  require_horizon(psi.time.T, T, "time_reverse");
  SpaceTimeField out = psi;
  for (int m = 0; m <= psi.time.nt; ++m) out.vals.row(m) = psi.vals.row(psi.time.nt - m);
  return out;
}

SpaceTimeField time_integrate_J(const SpaceTimeField& psi, double T) {
  require_horizon(psi.time.T, 2.0 * T, "time_integrate_J");
  TimeGrid g = half_grid(psi.time);
  SpaceTimeField out = zero_field(g, psi.elems);
  for (int e = 0; e < (int)psi.elems.size(); ++e)
    out.vals.col(e) = j_filter(psi.time, psi.vals.col(e));
  return out;
}

ResponseOperator assemble_response(const DiscreteDomain& dom, const CoefficientField& coeff,
                                   const BoundaryPatch& S, const ReceiverSpec& receiver,
                                   const TimeGrid& grid2T, int stride, const WaveOptions& opt) {
  if (receiver.nodes.empty()) throw ConfigError("assemble_response: empty receiver");
  if (receiver.interior) {
    if ((int)receiver.kappa.size() != dom.n_nodes())
      throw ConfigError("assemble_response: interior receiver weight has wrong size");
    for (int node : receiver.nodes)
      if (dom.is_boundary[node])
        throw ConfigError("assemble_response: interior receiver touches the boundary");
  }
  ResponseOperator lam;
  lam.source_nodes = S.nodes;
  lam.receiver = receiver;
  lam.basis = make_source_basis(S.nodes, grid2T, stride);
  lam.grid = grid2T;
  int nv = (int)receiver.nodes.size();
  lam.mat = MatrixXcd::Zero((grid2T.nt + 1) * nv, lam.basis.cols());

  WaveOptions solver_opt = opt;
  solver_opt.keep_history = true;
  BoundaryPatch rpatch;
  rpatch.nodes = receiver.nodes;
  rpatch.role = PatchRole::Receiver;
  for (int j = 0; j < lam.basis.cols(); ++j) {
    try {
      SpaceTimeField f = basis_source(lam.basis, j);
      Wavefield w = solve_forward(dom, coeff, f, solver_opt);
      if (receiver.interior) {
        for (int m = 0; m <= grid2T.nt; ++m)
          for (int e = 0; e < nv; ++e)
            lam.mat(m * nv + e, j) =
                receiver.kappa[receiver.nodes[e]] * w.u(receiver.nodes[e], m);
      } else {
        SpaceTimeField tr = neumann_trace(w, dom, coeff, rpatch, TraceSign::Forward);
        for (int m = 0; m <= grid2T.nt; ++m)
          for (int e = 0; e < nv; ++e) lam.mat(m * nv + e, j) = tr.vals(m, e);
      }
    } catch (const std::exception& ex) {
      char msg[192];
      std::snprintf(msg, sizeof msg, "assemble_response: column %d: %s", j, ex.what());
      throw NumericalError(msg);
    }
  }
  return lam;
}

ConnectingOperator assemble_connecting(const ResponseOperator& lam) {
  TimeGrid gT = half_grid(lam.grid);
  ConnectingOperator K;
  K.v_nodes = lam.receiver.nodes;
  K.receiver = lam.receiver;
  K.basis = make_source_basis(lam.basis.nodes, gT, lam.basis.time.stride);
  K.grid = gT;
  int nv = (int)K.v_nodes.size();
  int n1 = K.basis.time.n, n2 = lam.basis.time.n;
  int ntT = gT.nt, nt2 = lam.grid.nt;
  K.mat = MatrixXcd::Zero((ntT + 1) * nv, K.basis.cols());

  // Re-expansion coefficients of R J (basis hat l), one column per hat.
  // Past T the filtered source is held constant: the (0,T) restriction of
  // the response cannot depend on data after T.
  MatrixXcd C2(n2, n1);
  for (int l = 0; l < n1; ++l) {
    VectorXcd hat = hat_samples(lam.basis.time, l).cast<cplx>();
    VectorXcd jf = j_filter(lam.grid, hat);
    VectorXcd g2(nt2 + 1);
    for (int m = 0; m <= ntT; ++m) g2[m] = jf[ntT - m];
    for (int m = ntT + 1; m <= nt2; ++m) g2[m] = g2[ntT];
    C2.col(l) = project_time(lam.basis.time, g2);
  }

  int top_rows = (ntT + 1) * nv;  // samples 0..ntT sit in the leading rows
  for (size_t k = 0; k < K.basis.nodes.size(); ++k) {
    MatrixXcd t2 = lam.mat.topRows(top_rows).middleCols((int)k * n2, n2) * C2;
    for (int l = 0; l < n1; ++l) {
      int j1 = (int)k * n1 + l, j2 = (int)k * n2 + l;
      for (int e = 0; e < nv; ++e) {
        VectorXcd col(nt2 + 1);
        for (int m = 0; m <= nt2; ++m) col[m] = lam.mat(m * nv + e, j2);
        VectorXcd jcol = j_filter(lam.grid, col);
        for (int m = 0; m <= ntT; ++m)
          K.mat(m * nv + e, j1) = jcol[m] - t2((ntT - m) * nv + e, l);
      }
    }
  }
  return K;
}

IdentityCheck verify_blago(const DiscreteDomain& dom, const CoefficientField& coeff,
                           const ConnectingOperator& K, const VectorXcd& f_coeffs,
                           const SpaceTimeField& p, const WaveOptions& opt) {
  require_horizon(p.time.T, K.grid.T, "verify_blago");
  if (p.elems != K.v_nodes) throw ConfigError("verify_blago: p is not sampled on V");

  WaveOptions lean = opt;
  lean.keep_history = false;
  SpaceTimeField f = synth_source(K.basis, f_coeffs);
  Wavefield u = solve_forward(dom, coeff, f, lean);

  Wavefield v;
  if (K.receiver.interior)
    v = solve_adjoint(dom, coeff, nullptr, &p, &K.receiver.kappa, K.grid, lean);
  else
    v = solve_adjoint(dom, coeff, &p, nullptr, nullptr, K.grid, lean);

  IdentityCheck out;
  out.lhs = pair_volume(dom, v.u_T, u.u_T);
  out.rhs = pair_spacetime(dom, p, K.apply(f_coeffs));
  double scale = std::max(std::abs(out.lhs), std::abs(out.rhs));
  out.gap = scale < 1e-14 ? 0.0 : std::abs(out.lhs - out.rhs) / scale;
  return out;
}

IdentityCheck verify_transposition(const DiscreteDomain& dom, const CoefficientField& coeff,
                                   const BoundaryPatch& S, const BoundaryPatch& R, double T,
                                   const SpaceTimeField& f, const SpaceTimeField& p,
                                   const WaveOptions& opt) {
  require_horizon(f.time.T, T, "verify_transposition");
  require_horizon(p.time.T, T, "verify_transposition");
  if (f.elems != S.nodes || p.elems != R.nodes)
    throw ConfigError("verify_transposition: data is not sampled on its patch");

  WaveOptions full = opt;
  full.keep_history = true;

  Wavefield u = solve_forward(dom, coeff, f, full);
  SpaceTimeField lf = neumann_trace(u, dom, coeff, R, TraceSign::Forward);

  SpaceTimeField rp = time_reverse(p, T);
  Wavefield v = solve_adjoint(dom, coeff, &rp, nullptr, nullptr, f.time, full);
  SpaceTimeField tr = neumann_trace(v, dom, coeff, S, TraceSign::Adjoint);
  SpaceTimeField rtr = time_reverse(tr, T);

  IdentityCheck out;
  out.lhs = pair_spacetime(dom, lf, p);
  out.rhs = pair_spacetime(dom, f, rtr);
  double scale = std::max(std::abs(out.lhs), std::abs(out.rhs));
  out.gap = scale < 1e-14 ? 0.0 : std::abs(out.lhs - out.rhs) / scale;
  return out;
}

}  // namespace bc

#include "bc/wave.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace bc {

namespace {

// Interior rows of the spatial operator in compressed sparse form; Dirichlet
// (boundary) rows are left empty.
struct SpatialOp {
  int n = 0;
  std::vector<int> ptr, col;
  std::vector<cplx> w;
};

SpatialOp assemble_spatial(const DiscreteDomain& dom, const CoefficientField& coeff,
                           bool adjoint) {
  const double s1 = adjoint ? 1.0 : -1.0;  // sign of the first-order term
  const VectorXcd& qv = adjoint ? coeff.q_ad : coeff.q;
  const int n = dom.n_nodes();
  SpatialOp op;
  op.n = n;
  op.ptr.assign(n + 1, 0);
  op.col.reserve(9 * n);
  op.w.reserve(9 * n);
  auto c = [&](int i) { return dom.metric.speed(i); };

  std::vector<std::pair<int, cplx>> row;
  auto add = [&](int j, cplx v) { row.emplace_back(j, v); };
  auto flush = [&](int i) {
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& e : row) {
      op.col.push_back(e.first);
      op.w.push_back(e.second);
    }
    op.ptr[i + 1] = (int)op.col.size();
    row.clear();
  };

  switch (dom.kind) {
    case DomainKind::Interval: {
      const double h2 = dom.dx * dom.dx, two_h = 2.0 * dom.dx;
      flush(0);
      for (int i = 1; i < dom.nx; ++i) {
        double ci = c(i), ce = 0.5 * (ci + c(i + 1)), cw = 0.5 * (ci + c(i - 1));
        add(i - 1, ci * cw / h2 - s1 * coeff.ax[i] / two_h);
        add(i, -ci * (ce + cw) / h2 - qv[i]);
        add(i + 1, ci * ce / h2 + s1 * coeff.ax[i] / two_h);
        flush(i);
      }
      flush(dom.nx);
      return op;
    }
    case DomainKind::Rectangle: {
      const double h2 = dom.dx * dom.dx, two_h = 2.0 * dom.dx;
      for (int jj = 0; jj <= dom.ny; ++jj)
        for (int ii = 0; ii <= dom.nx; ++ii) {
          int id = dom.rect_id(ii, jj);
          if (dom.is_boundary[id]) {
            flush(id);
            continue;
          }
          double cc = c(id) * c(id);
          add(dom.rect_id(ii - 1, jj), cc / h2 - s1 * coeff.ax[id] / two_h);
          add(dom.rect_id(ii + 1, jj), cc / h2 + s1 * coeff.ax[id] / two_h);
          add(dom.rect_id(ii, jj - 1), cc / h2 - s1 * coeff.ay[id] / two_h);
          add(dom.rect_id(ii, jj + 1), cc / h2 + s1 * coeff.ay[id] / two_h);
          add(id, -4.0 * cc / h2 - qv[id]);
          flush(id);
        }
      return op;
    }
    case DomainKind::Disk: {
      const double dr = dom.dx, dth = dom.dtheta;
      // center row: ring-mean Laplacian plus plane-fit gradient
      {
        double cc = c(0) * c(0);
        add(0, -4.0 * cc / (dr * dr) - qv[0]);
        for (int j = 0; j < dom.ntheta; ++j) {
          double th = j * dth;
          cplx gw = s1 * (coeff.ax[0] * std::cos(th) + coeff.ay[0] * std::sin(th)) * 2.0 /
                    ((double)dom.ntheta * dr);
          add(dom.disk_id(1, j), 4.0 * cc / ((double)dom.ntheta * dr * dr) + gw);
        }
        flush(0);
      }
      for (int i = 1; i <= dom.nr; ++i) {
        double r = i * dr;
        for (int j = 0; j < dom.ntheta; ++j) {
          int id = dom.disk_id(i, j);
          if (dom.is_boundary[id]) {
            flush(id);
            continue;
          }
          double cc = c(id) * c(id);
          double th = j * dth, ct = std::cos(th), st = std::sin(th);
          cplx ar = coeff.ax[id] * ct + coeff.ay[id] * st;   // radial component
          cplx at = -coeff.ax[id] * st + coeff.ay[id] * ct;  // azimuthal component
          int inner = i == 1 ? 0 : dom.disk_id(i - 1, j);
          int outer = dom.disk_id(i + 1, j);
          int left = dom.disk_id(i, j - 1 + dom.ntheta);
          int right = dom.disk_id(i, j + 1);
          add(outer, cc * (1.0 / (dr * dr) + 1.0 / (2.0 * dr * r)) + s1 * ar / (2.0 * dr));
          add(inner, cc * (1.0 / (dr * dr) - 1.0 / (2.0 * dr * r)) - s1 * ar / (2.0 * dr));
          add(right, cc / (r * r * dth * dth) + s1 * at / (2.0 * r * dth));
          add(left, cc / (r * r * dth * dth) - s1 * at / (2.0 * r * dth));
          add(id, -2.0 * cc / (dr * dr) - 2.0 * cc / (r * r * dth * dth) - qv[id]);
          flush(id);
        }
      }
      return op;
    }
  }
  return op;
}

void check_step(const DiscreteDomain& dom, double dt) {
  double lim = cfl_limit(dom);
  if (!(dt > 0.0) || dt > lim * (1.0 + 1e-12)) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "wave solve: dt = %.6g exceeds the stable step %.6g for this grid", dt, lim);
    throw ConfigError(msg);
  }
}

struct Forcing {
  const SpaceTimeField* H = nullptr;
  std::vector<cplx> kap;  // kappa sampled on H->elems
  VectorXcd buf;

  Forcing(const DiscreteDomain& dom, const SpaceTimeField* h, const VectorXcd* kappa) : H(h) {
    buf = VectorXcd::Zero(dom.n_nodes());
    if (!H) return;
    kap.resize(H->elems.size());
    for (size_t e = 0; e < H->elems.size(); ++e)
      kap[e] = kappa ? (*kappa)[H->elems[e]] : cplx(1.0);
  }
  void fill(int m) {
    if (!H) return;
    buf.setZero();
    for (size_t e = 0; e < H->elems.size(); ++e) buf[H->elems[e]] = kap[e] * H->vals(m, (int)e);
  }
};

Wavefield run_scheme(const DiscreteDomain& dom, const CoefficientField& coeff, bool adjoint,
                     const SpaceTimeField* dirichlet, const SpaceTimeField* H,
                     const VectorXcd* kappa, const TimeGrid& time, const WaveOptions& opt) {
  const int n = dom.n_nodes(), nt = time.nt;
  const double dt = time.dt, dt2 = dt * dt;
  check_step(dom, dt);
  if (nt < 2) throw ConfigError("wave solve: need at least two steps");
  if (dirichlet && dirichlet->time.nt != nt)
    throw ConfigError("wave solve: boundary data is on a different time grid");
  if (H && H->time.nt != nt) throw ConfigError("wave solve: forcing is on a different time grid");

  SpatialOp op = assemble_spatial(dom, coeff, adjoint);
  Forcing force(dom, H, kappa);

  Wavefield out;
  out.time = time;

  MatrixXcd hist;
  VectorXcd b_prev, b_cur, b_next, b_prev2;
  if (opt.keep_history) {
    hist = MatrixXcd::Zero(n, nt + 1);
  } else {
    b_prev = VectorXcd::Zero(n);
    b_cur = VectorXcd::Zero(n);
    b_next = VectorXcd::Zero(n);
  }
  auto col = [&](int m) { return opt.keep_history ? hist.col(m).data() : nullptr; };

  auto inject = [&](cplx* u, int m) {
    for (int b : dom.boundary_nodes) u[b] = cplx(0.0);
    if (dirichlet)
      for (size_t k = 0; k < dirichlet->elems.size(); ++k)
        u[dirichlet->elems[k]] = dirichlet->vals(m, (int)k);
  };

  cplx* pp = opt.keep_history ? col(0) : b_prev.data();
  cplx* pc = opt.keep_history ? col(1) : b_cur.data();
  inject(pp, 0);

  // zero Cauchy data: u^1 = u^0 + (dt^2/2)(L u^0 + F^0) in the interior
  force.fill(0);
  {
    const cplx* u0 = pp;
    cplx* u1 = pc;
    const cplx* F = force.buf.data();
    par_for(opt.policy, n, [&](std::int64_t i) {
      cplx s = F[i];
      for (int k = op.ptr[i]; k < op.ptr[i + 1]; ++k) s += op.w[k] * u0[op.col[k]];
      u1[i] = u0[i] + 0.5 * dt2 * s;
    });
    inject(u1, 1);
  }

  for (int m = 1; m < nt; ++m) {
    cplx* pn;
    if (opt.keep_history) {
      pp = col(m - 1);
      pc = col(m);
      pn = col(m + 1);
    } else {
      pn = b_next.data();
    }
    force.fill(m);
    const cplx* F = force.buf.data();
    const cplx* up = pp;
    const cplx* uc = pc;
    par_for(opt.policy, n, [&](std::int64_t i) {
      cplx s = F[i];
      for (int k = op.ptr[i]; k < op.ptr[i + 1]; ++k) s += op.w[k] * uc[op.col[k]];
      pn[i] = 2.0 * uc[i] - up[i] + dt2 * s;
    });
    inject(pn, m + 1);
    if (!opt.keep_history) {
      if (m + 1 == nt) b_prev2 = b_prev;  // u^{nt-2} survives the final rotation
      std::swap(b_prev, b_cur);
      std::swap(b_cur, b_next);
      pp = b_prev.data();
      pc = b_cur.data();
    }
  }

  if (opt.keep_history) {
    out.u_T = hist.col(nt);
    out.ut_T = (3.0 * hist.col(nt) - 4.0 * hist.col(nt - 1) + hist.col(nt - 2)) / (2.0 * dt);
    out.u = std::move(hist);
  } else {
    out.u_T = b_cur;
    out.ut_T = (3.0 * b_cur - 4.0 * b_prev + b_prev2) / (2.0 * dt);
  }
  return out;
}

}  // namespace

Wavefield solve_forward(const DiscreteDomain& dom, const CoefficientField& coeff,
                        const SpaceTimeField& f, const WaveOptions& opt) {
  for (int node : f.elems)
    if (!dom.is_boundary[node]) throw ConfigError("solve_forward: source node not on the boundary");
  return run_scheme(dom, coeff, false, &f, nullptr, nullptr, f.time, opt);
}

Wavefield solve_adjoint(const DiscreteDomain& dom, const CoefficientField& coeff,
                        const SpaceTimeField* phi, const SpaceTimeField* H,
                        const VectorXcd* kappa, const TimeGrid& time, const WaveOptions& opt) {
  if (phi)
    for (int node : phi->elems)
      if (!dom.is_boundary[node])
        throw ConfigError("solve_adjoint: boundary data node not on the boundary");
  return run_scheme(dom, coeff, true, phi, H, kappa, time, opt);
}

namespace {

// One-sided 3-point stencil for c * (inward normal . grad u) at patch node b.
void trace_stencil(const DiscreteDomain& dom, int b,
                   std::vector<std::pair<int, cplx>>& st) {
  double cb = dom.metric.speed(b);
  switch (dom.kind) {
    case DomainKind::Interval: {
      double f = cb / (2.0 * dom.dx);
      int d = (b == 0) ? 1 : -1;
      st.push_back({b, -3.0 * f});
      st.push_back({b + d, 4.0 * f});
      st.push_back({b + 2 * d, -f});
      return;
    }
    case DomainKind::Disk: {
      int i = (b - 1) / dom.ntheta + 1, j = (b - 1) % dom.ntheta;
      double f = cb / (2.0 * dom.dx);
      st.push_back({b, -3.0 * f});
      st.push_back({dom.disk_id(i - 1, j), 4.0 * f});
      st.push_back({dom.disk_id(i - 2, j), -f});
      return;
    }
    case DomainKind::Rectangle: {
      Vec2 nh = dom.inward_normal(b);
      int i = b % (dom.nx + 1), j = b / (dom.nx + 1);
      if (std::abs(nh.x) > 1e-12) {
        int sx = nh.x > 0 ? 1 : -1;
        double f = std::abs(nh.x) * cb / (2.0 * dom.dx);
        st.push_back({dom.rect_id(i, j), -3.0 * f});
        st.push_back({dom.rect_id(i + sx, j), 4.0 * f});
        st.push_back({dom.rect_id(i + 2 * sx, j), -f});
      }
      if (std::abs(nh.y) > 1e-12) {
        int sy = nh.y > 0 ? 1 : -1;
        double f = std::abs(nh.y) * cb / (2.0 * dom.dx);
        st.push_back({dom.rect_id(i, j), -3.0 * f});
        st.push_back({dom.rect_id(i, j + sy), 4.0 * f});
        st.push_back({dom.rect_id(i, j + 2 * sy), -f});
      }
      return;
    }
  }
}

}  // namespace

SpaceTimeField neumann_trace(const Wavefield& u, const DiscreteDomain& dom,
                             const CoefficientField& coeff, const BoundaryPatch& gamma,
                             TraceSign sign) {
  if (u.u.cols() != u.time.samples())
    throw ConfigError("neumann_trace: solution history is required");
  SpaceTimeField tr = zero_field(u.time, gamma.nodes);
  double half = sign == TraceSign::Adjoint ? 0.5 : -0.5;
  std::vector<std::pair<int, cplx>> st;
  for (size_t k = 0; k < gamma.nodes.size(); ++k) {
    int b = gamma.nodes[k];
    st.clear();
    trace_stencil(dom, b, st);
    Vec2 nh = dom.inward_normal(b);
    // (A, nu)_g for the metric unit inward normal nu = c * nhat
    cplx anu = (coeff.ax[b] * nh.x + coeff.ay[b] * nh.y) / dom.metric.speed(b);
    st.push_back({b, half * anu});
    for (int m = 0; m <= u.time.nt; ++m) {
      cplx v = 0.0;
      for (auto& e : st) v += e.second * u.u(e.first, m);
      tr.vals(m, (int)k) = v;
    }
  }
  return tr;
}

SpaceTimeField restrict_field(const Wavefield& u, const std::vector<int>& nodes) {
  if (u.u.cols() != u.time.samples())
    throw ConfigError("restrict_field: solution history is required");
  SpaceTimeField out = zero_field(u.time, nodes);
  for (size_t k = 0; k < nodes.size(); ++k)
    for (int m = 0; m <= u.time.nt; ++m) out.vals(m, (int)k) = u.u(nodes[k], m);
  return out;
}

std::pair<VectorXcd, VectorXcd> final_state(const DiscreteDomain& dom,
                                            const CoefficientField& coeff,
                                            const SpaceTimeField& f) {
  WaveOptions opt;
  opt.keep_history = false;
  Wavefield w = solve_forward(dom, coeff, f, opt);
  return {std::move(w.u_T), std::move(w.ut_T)};
}

VectorXcd apply_spatial_operator(const DiscreteDomain& dom, const CoefficientField& coeff,
                                 const VectorXcd& u, bool adjoint) {
  SpatialOp op = assemble_spatial(dom, coeff, adjoint);
  VectorXcd out = VectorXcd::Zero(op.n);
  const cplx* up = u.data();
  cplx* op_out = out.data();
  par_for(op.n, [&](std::int64_t i) {
    cplx s = 0.0;
    for (int k = op.ptr[i]; k < op.ptr[i + 1]; ++k) s += op.w[k] * up[op.col[k]];
    op_out[i] = s;
  });
  return out;
}

double scheme_residual(const Wavefield& w, const DiscreteDomain& dom,
                       const CoefficientField& coeff, bool adjoint, const SpaceTimeField* H,
                       const VectorXcd* kappa) {
  if (w.u.cols() != w.time.samples())
    throw ConfigError("scheme_residual: solution history is required");
  SpatialOp op = assemble_spatial(dom, coeff, adjoint);
  Forcing force(dom, H, kappa);
  const double dt2 = w.time.dt * w.time.dt;
  double worst = 0.0;
  for (int m = 1; m < w.time.nt; ++m) {
    force.fill(m);
    for (int i = 0; i < op.n; ++i) {
      if (dom.is_boundary[i]) continue;
      cplx s = force.buf[i];
      for (int k = op.ptr[i]; k < op.ptr[i + 1]; ++k) s += op.w[k] * w.u(op.col[k], m);
      cplx r = w.u(i, m + 1) - 2.0 * w.u(i, m) + w.u(i, m - 1) - dt2 * s;
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

}  // namespace bc

#include "bc/reconstruct.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <map>
#include <string>
#include <utility>

#include "bc/wave.hpp"

namespace bc {

using Eigen::RowVectorXcd;

namespace {

// Adjacency of the centered difference stencils. Narrower than the graph
// neighborhood geometry uses for distance isotropy; this is what the
// derivative operators actually read, so validity and spanning-tree
// integration are judged against it.
void stencil_neighbors(const DiscreteDomain& dom, int id, std::vector<int>& out) {
  out.clear();
  switch (dom.kind) {
    case DomainKind::Interval:
      if (id > 0) out.push_back(id - 1);
      if (id < dom.nx) out.push_back(id + 1);
      return;
    case DomainKind::Rectangle: {
      int w = dom.nx + 1, ii = id % w, jj = id / w;
      if (ii > 0) out.push_back(id - 1);
      if (ii < dom.nx) out.push_back(id + 1);
      if (jj > 0) out.push_back(id - w);
      if (jj < dom.ny) out.push_back(id + w);
      return;
    }
    case DomainKind::Disk: {
      if (id == 0) {
        for (int j = 0; j < dom.ntheta; ++j) out.push_back(dom.disk_id(1, j));
        return;
      }
      int r = (id - 1) / dom.ntheta + 1, j = (id - 1) % dom.ntheta;
      out.push_back(dom.disk_id(r, j + 1));
      out.push_back(dom.disk_id(r, j - 1));
      out.push_back(r == 1 ? 0 : dom.disk_id(r - 1, j));
      if (r < dom.nr) out.push_back(dom.disk_id(r + 1, j));
      return;
    }
  }
}

bool stencil_ok(const DiscreteDomain& dom, const std::vector<std::uint8_t>& mask, int id,
                std::vector<int>& scratch) {
  if (!mask[id] || dom.is_boundary[id]) return false;
  stencil_neighbors(dom, id, scratch);
  for (int nb : scratch)
    if (!mask[nb]) return false;
  return true;
}

// Multi-pass neighbor averaging: fills `want` nodes missing from `have` using
// whatever neighbors are already known. Nodes with no known neighbor after
// all passes stay unknown.
void fill_from_neighbors(const DiscreteDomain& dom, std::vector<VectorXcd*> fields,
                         std::vector<std::uint8_t>& have, const std::vector<std::uint8_t>& want) {
  int n = dom.n_nodes();
  std::vector<int> nb;
  for (;;) {
    std::vector<int> ready;
    for (int i = 0; i < n; ++i) {
      if (!want[i] || have[i]) continue;
      stencil_neighbors(dom, i, nb);
      for (int k : nb)
        if (have[k]) {
          ready.push_back(i);
          break;
        }
    }
    if (ready.empty()) return;
    for (int i : ready) {
      stencil_neighbors(dom, i, nb);
      int cnt = 0;
      for (VectorXcd* f : fields) {
        cplx acc = 0.0;
        cnt = 0;
        for (int k : nb)
          if (have[k]) {
            acc += (*f)[k];
            ++cnt;
          }
        (*f)[i] = acc / (double)cnt;
      }
      (void)cnt;
    }
    for (int i : ready) have[i] = 1;
  }
}

double weighted_l2(const DiscreteDomain& dom, const VectorXcd& v,
                   const std::vector<int>& nodes) {
  double s = 0.0;
  for (int i : nodes) s += dom.vol_w[i] * std::norm(v[i]);
  return std::sqrt(s);
}

std::vector<int> intersect_nodes(const NodeSet& a, const NodeSet& b) {
  std::vector<int> out;
  int n = (int)std::min(a.mask.size(), b.mask.size());
  for (int i = 0; i < n; ++i)
    if (a.mask[i] && b.mask[i]) out.push_back(i);
  return out;
}

// Hop-count BFS over the stencil graph restricted to `mask`.
std::vector<int> bfs_depth(const DiscreteDomain& dom, const std::vector<std::uint8_t>& mask,
                           const std::vector<int>& seeds) {
  std::vector<int> d(dom.n_nodes(), -1);
  std::deque<int> q;
  for (int s : seeds)
    if (mask[s] && d[s] < 0) {
      d[s] = 0;
      q.push_back(s);
    }
  std::vector<int> nb;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    stencil_neighbors(dom, u, nb);
    for (int v : nb)
      if (mask[v] && d[v] < 0) {
        d[v] = d[u] + 1;
        q.push_back(v);
      }
  }
  return d;
}

VectorXd trapz_weights(const TimeGrid& g) {
  VectorXd w = VectorXd::Constant(g.nt + 1, g.dt);
  w[0] *= 0.5;
  w[g.nt] *= 0.5;
  return w;
}

}  // namespace

GaugeField make_gauge(const DiscreteDomain& dom, VectorXcd kappa, NodeSet anchor) {
  if ((int)kappa.size() != dom.n_nodes()) throw ConfigError("make_gauge: size mismatch");
  double mx = kappa.cwiseAbs().maxCoeff();
  if (kappa.cwiseAbs().minCoeff() <= 1e-14 * std::max(mx, 1.0))
    throw ConfigError("make_gauge: kappa vanishes somewhere");
  for (int i : anchor.nodes())
    if (std::abs(kappa[i] - 1.0) > 1e-10)
      throw ConfigError("make_gauge: kappa is not 1 on the anchor");
  return GaugeField{std::move(kappa), std::move(anchor)};
}

GaugeField unit_gauge(const DiscreteDomain& dom, NodeSet anchor) {
  return GaugeField{VectorXcd::Ones(dom.n_nodes()), std::move(anchor)};
}

OperatorCoefficients truth_coefficients(const DiscreteDomain& dom, const CoefficientField& c) {
  OperatorCoefficients out;
  out.region.mask.assign(dom.n_nodes(), 1);
  out.ax = c.ax;
  out.ay = c.ay;
  out.q = c.q;
  out.provenance = Provenance::Truth;
  return out;
}

CoefficientField to_coefficient_field(const DiscreteDomain& dom, const OperatorCoefficients& c) {
  int n = dom.n_nodes();
  VectorXcd ax = VectorXcd::Zero(n), ay = VectorXcd::Zero(n), q = VectorXcd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (c.region.contains(i)) {
      ax[i] = c.ax[i];
      ay[i] = c.ay[i];
      q[i] = c.q[i];
    }
  return make_coefficients(dom, std::move(ax), std::move(ay), std::move(q));
}

OperatorCoefficients apply_gauge(const DiscreteDomain& dom, const OperatorCoefficients& c,
                                 const GaugeField& g) {
  int n = dom.n_nodes();
  if ((int)g.kappa.size() != n || (int)c.ax.size() != n)
    throw ConfigError("apply_gauge: size mismatch");
  double mx = g.kappa.cwiseAbs().maxCoeff();
  if (g.kappa.cwiseAbs().minCoeff() <= 1e-14 * std::max(mx, 1.0))
    throw ConfigError("apply_gauge: kappa vanishes somewhere");
  VectorXcd ki = g.kappa.cwiseInverse();
  OperatorCoefficients out = c;
  out.ax = c.ax + 2.0 * ki.cwiseProduct(grad_g_x(dom, g.kappa));
  out.ay = c.ay + 2.0 * ki.cwiseProduct(grad_g_y(dom, g.kappa));
  VectorXcd ix, iy;
  gradient(dom, ki, ix, iy);
  out.q = c.q + g.kappa.cwiseProduct(c.ax.cwiseProduct(ix) + c.ay.cwiseProduct(iy) -
                                     laplace_g(dom, ki));
  out.provenance = Provenance::Gauged;
  return out;
}

OrbitWitness orbit_equivalent(const DiscreteDomain& dom, const OperatorCoefficients& c1,
                              const OperatorCoefficients& c2, const NodeSet& anchor,
                              double tol) {
  int n = dom.n_nodes();
  NodeSet reg;
  reg.mask.assign(n, 0);
  for (int i = 0; i < n; ++i)
    reg.mask[i] = (c1.region.contains(i) && c2.region.contains(i)) ? 1 : 0;

  // Euclidean gradient of log kappa demanded by the A relation.
  VectorXcd gx(n), gy(n);
  for (int i = 0; i < n; ++i) {
    double c2i = dom.metric.euclidean() ? 1.0 : dom.metric.speed(i) * dom.metric.speed(i);
    gx[i] = (c2.ax[i] - c1.ax[i]) / (2.0 * c2i);
    gy[i] = (c2.ay[i] - c1.ay[i]) / (2.0 * c2i);
  }

  // Spanning-tree integration from the anchor, loop defects tracked.
  VectorXcd ell = VectorXcd::Zero(n);
  std::vector<std::uint8_t> seen(n, 0);
  std::deque<int> q;
  std::vector<int> seeds;
  for (int i : anchor.nodes())
    if (reg.contains(i)) seeds.push_back(i);
  if (seeds.empty()) throw ConfigError("orbit_equivalent: anchor misses the shared region");
  for (int s : seeds) {
    seen[s] = 1;
    q.push_back(s);
  }
  double defect = 0.0, gscale = 0.0;
  for (int i = 0; i < n; ++i)
    if (reg.mask[i]) gscale = std::max(gscale, std::max(std::abs(gx[i]), std::abs(gy[i])));
  std::vector<int> nb;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    stencil_neighbors(dom, u, nb);
    for (int v : nb) {
      if (!reg.mask[v]) continue;
      Vec2 dxy{dom.xy[v].x - dom.xy[u].x, dom.xy[v].y - dom.xy[u].y};
      cplx inc = 0.5 * (gx[u] + gx[v]) * dxy.x + 0.5 * (gy[u] + gy[v]) * dxy.y;
      if (!seen[v]) {
        seen[v] = 1;
        ell[v] = ell[u] + inc;
        q.push_back(v);
      } else {
        defect = std::max(defect, std::abs(ell[v] - ell[u] - inc));
      }
    }
  }
  for (int i = 0; i < n; ++i)
    if (reg.mask[i] && !seen[i])
      throw ConfigError("orbit_equivalent: shared region is disconnected from the anchor");

  // kappa = 1 on the anchor up to the tree's own consistency.
  cplx mean = 0.0;
  for (int s : seeds) mean += ell[s];
  mean /= (double)seeds.size();
  OrbitWitness out;
  double sp = dom.spacing();
  double closure = defect / (sp * gscale + 1e-12);
  out.curl_residual = closure;
  if (dom.dim() == 2) {
    VectorXcd cx, cy, dummyx, dummyy;
    gradient(dom, gy, cx, dummyy);
    gradient(dom, gx, dummyx, cy);
    std::vector<int> scratch;
    double curl = 0.0;
    for (int i = 0; i < n; ++i)
      if (stencil_ok(dom, reg.mask, i, scratch)) curl = std::max(curl, std::abs(cx[i] - cy[i]));
    out.curl_residual = std::max(closure, curl / (M_PI * gscale + 1e-12));
  }

  VectorXcd kappa = VectorXcd::Ones(n);
  for (int i = 0; i < n; ++i)
    if (reg.mask[i]) kappa[i] = std::exp(ell[i] - mean);
  // Extend smoothly past the region rim so the gauge derivatives are clean
  // on the region itself.
  {
    std::vector<std::uint8_t> have = reg.mask, want = reg.mask;
    for (int pass = 0; pass < 3; ++pass) {
      std::vector<std::uint8_t> comp(n);
      for (int i = 0; i < n; ++i) comp[i] = want[i] ? 0 : 1;
      for (int i : mask_rim(dom, comp)) want[i] = 1;
    }
    std::vector<VectorXcd*> fs{&kappa};
    fill_from_neighbors(dom, fs, have, want);
  }
  out.witness.kappa = kappa;
  out.witness.anchor = anchor;

  OperatorCoefficients gauged = apply_gauge(dom, c1, out.witness);
  std::vector<int> eval;
  {
    std::vector<int> scratch;
    for (int i = 0; i < n; ++i)
      if (stencil_ok(dom, reg.mask, i, scratch)) eval.push_back(i);
    if (eval.empty())
      for (int i = 0; i < n; ++i)
        if (reg.mask[i]) eval.push_back(i);
  }
  double volw = 0.0;
  for (int i : eval) volw += dom.vol_w[i];
  double unit = std::sqrt(volw);
  VectorXcd dax = gauged.ax - c2.ax, day = gauged.ay - c2.ay, dq = gauged.q - c2.q;
  double sa = std::max({weighted_l2(dom, c1.ax, eval), weighted_l2(dom, c1.ay, eval),
                        weighted_l2(dom, c2.ax, eval), weighted_l2(dom, c2.ay, eval), unit});
  double sq = std::max({weighted_l2(dom, c1.q, eval), weighted_l2(dom, c2.q, eval), unit});
  out.a_residual =
      std::sqrt(std::pow(weighted_l2(dom, dax, eval), 2) + std::pow(weighted_l2(dom, day, eval), 2)) /
      sa;
  out.q_residual = weighted_l2(dom, dq, eval) / sq;
  out.equivalent =
      out.curl_residual <= std::max(tol, 0.05) && out.a_residual <= tol && out.q_residual <= tol;
  return out;
}

PointValues recover_point_values(const DiscreteDomain& dom, const ConnectingOperator& K,
                                 const LocalizedSourcePlan& src,
                                 const std::vector<SpaceTimeField>& profiles, double tol) {
  if (profiles.empty()) throw ConfigError("recover_point_values: no profiles");
  int nj = (int)src.f.size();
  if (nj == 0 || nj != (int)src.plan.js.size())
    throw ConfigError("recover_point_values: plan and sources disagree");
  for (const auto& p : profiles) {
    if (p.elems != K.v_nodes || p.time.nt != K.grid.nt)
      throw ConfigError("recover_point_values: profile grid mismatch");
  }
  int np = (int)profiles.size();
  PointValues out;
  out.x_node = src.plan.x_node;
  out.sequence.resize(np, nj);
  for (int j = 0; j < nj; ++j) {
    if ((int)src.f[j].size() != (int)K.mat.cols())
      throw ConfigError("recover_point_values: source coefficients do not fit the operator");
    SpaceTimeField kf = K.apply(src.f[j]);
    for (int p = 0; p < np; ++p) out.sequence(p, j) = pair_spacetime(dom, profiles[p], kf);
  }
  out.values.resize(np);
  double worst = 0.0;
  int tail = std::min(5, nj);
  for (int p = 0; p < np; ++p) {
    out.values[p] = out.sequence(p, nj - 1);
    double gap = 0.0;
    for (int a = nj - tail; a < nj; ++a)
      for (int b = a + 1; b < nj; ++b)
        gap = std::max(gap, std::abs(out.sequence(p, a) - out.sequence(p, b)));
    double scale = std::max(std::abs(out.values[p]), 0.05 * profiles[p].vals.cwiseAbs().maxCoeff());
    worst = std::max(worst, gap / std::max(scale, 1e-300));
  }
  out.worst_gap = worst;
  if (worst > tol) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "recover_point_values: sequence at node %d failed the Cauchy check "
                  "(gap %.3g, tol %.3g)",
                  src.plan.x_node, worst, tol);
    throw NumericalError(buf);
  }
  return out;
}

CoefficientFit recover_coefficients(const DiscreteDomain& dom, const std::vector<VectorXcd>& w,
                                    const std::vector<VectorXcd>& w_tt, const NodeSet& region,
                                    const NodeSet& sample_region) {
  int n = dom.n_nodes();
  int nf = (int)w.size();
  int unk = dom.dim() == 1 ? 2 : 3;
  if (nf < dom.dim() + 2 || w_tt.size() != w.size())
    throw ConfigError("recover_coefficients: need dim + 2 sample pairs");
  for (int k = 0; k < nf; ++k)
    if ((int)w[k].size() != n || (int)w_tt[k].size() != n)
      throw ConfigError("recover_coefficients: sample size mismatch");
  for (int i = 0; i < n; ++i)
    if (region.contains(i) && !sample_region.contains(i))
      throw ConfigError("recover_coefficients: region exceeds sample_region");

  std::vector<VectorXcd> lap(nf), gx(nf), gy(nf);
  for (int k = 0; k < nf; ++k) {
    lap[k] = laplace_g(dom, w[k]);
    gradient(dom, w[k], gx[k], gy[k]);
  }

  CoefficientFit out;
  out.coeffs.region = region;
  out.coeffs.provenance = Provenance::Recovered;
  out.coeffs.ax = VectorXcd::Zero(n);
  out.coeffs.ay = VectorXcd::Zero(n);
  out.coeffs.q = VectorXcd::Zero(n);
  out.flagged.mask.assign(n, 0);

  VectorXcd bx = VectorXcd::Zero(n), by = VectorXcd::Zero(n), cc = VectorXcd::Zero(n);
  std::vector<std::uint8_t> core(n, 0);
  std::vector<int> scratch;
  MatrixXcd A(nf, unk);
  VectorXcd rhs(nf);
  for (int i = 0; i < n; ++i) {
    if (!region.contains(i)) continue;
    if (!stencil_ok(dom, sample_region.mask, i, scratch)) continue;
    for (int k = 0; k < nf; ++k) {
      A(k, 0) = gx[k][i];
      if (unk == 3) A(k, 1) = gy[k][i];
      A(k, unk - 1) = w[k][i];
      rhs[k] = w_tt[k][i] - lap[k][i];
    }
    Eigen::ColPivHouseholderQR<MatrixXcd> qr(A);
    qr.setThreshold(1e-9);
    if (qr.rank() < unk) continue;
    VectorXcd sol = qr.solve(rhs);
    bx[i] = sol(0);
    if (unk == 3) by[i] = sol(1);
    cc[i] = sol(unk - 1);
    core[i] = 1;
  }

  // Q needs div_g B, so its trusted set is one stencil deeper.
  VectorXcd qv = div_g(dom, bx, by) - cc;
  std::vector<std::uint8_t> have_a = core, have_q(n, 0);
  for (int i = 0; i < n; ++i)
    if (core[i] && stencil_ok(dom, core, i, scratch)) have_q[i] = 1;

  std::vector<std::uint8_t> want(n, 0);
  for (int i = 0; i < n; ++i) want[i] = region.contains(i) ? 1 : 0;
  for (int i = 0; i < n; ++i)
    if (want[i] && !have_q[i]) out.flagged.mask[i] = 1;

  {
    std::vector<VectorXcd*> fa{&bx, &by};
    fill_from_neighbors(dom, fa, have_a, want);
    std::vector<VectorXcd*> fq{&qv};
    fill_from_neighbors(dom, fq, have_q, want);
  }
  out.coeffs.ax = bx;
  out.coeffs.ay = by;
  out.coeffs.q = qv;
  if (dom.dim() == 1) out.coeffs.ay.setZero();
  return out;
}

namespace {

// Factors on the patch graph: least squares for log f_p - log f_q = -log r_pq
// anchored at `anchor`, solved on the连 graph; throws if disconnected.
std::vector<cplx> graph_factors(int np, int anchor,
                                const std::vector<std::array<int, 2>>& edges,
                                const std::vector<cplx>& ratios, const char* who) {
  std::vector<std::vector<int>> adj(np);
  for (size_t e = 0; e < edges.size(); ++e) {
    adj[edges[e][0]].push_back((int)e);
    adj[edges[e][1]].push_back((int)e);
  }
  std::vector<int> seen(np, 0);
  std::deque<int> q{anchor};
  seen[anchor] = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    for (int e : adj[u]) {
      int v = edges[e][0] == u ? edges[e][1] : edges[e][0];
      if (!seen[v]) {
        seen[v] = 1;
        q.push_back(v);
      }
    }
  }
  for (int p = 0; p < np; ++p)
    if (!seen[p]) throw ConfigError(std::string(who) + ": patch graph is disconnected");

  // Unknowns: log-magnitude and phase per non-anchor patch.
  int m = (int)edges.size();
  MatrixXd M = MatrixXd::Zero(m, np);
  VectorXd rm(m), rp(m);
  for (int e = 0; e < m; ++e) {
    M(e, edges[e][0]) = 1.0;
    M(e, edges[e][1]) = -1.0;
    rm[e] = std::log(std::abs(ratios[e]));
    rp[e] = std::arg(ratios[e]);
  }
  MatrixXd Mr = MatrixXd::Zero(m, np - 1);
  int col = 0;
  std::vector<int> colof(np, -1);
  for (int p = 0; p < np; ++p)
    if (p != anchor) {
      Mr.col(col) = M.col(p);
      colof[p] = col++;
    }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Mr);
  VectorXd lm = qr.solve(rm), lp = qr.solve(rp);
  std::vector<cplx> f(np, 1.0);
  for (int p = 0; p < np; ++p)
    if (p != anchor) f[p] = std::exp(cplx(-lm[colof[p]], -lp[colof[p]]));
  return f;
}

}  // namespace

StitchResult stitch_gauges(const DiscreteDomain& dom, const std::vector<GaugePatch>& patches,
                           int anchor_patch, double tol) {
  int np = (int)patches.size();
  if (np == 0) throw ConfigError("stitch_gauges: no patches");
  if (anchor_patch < 0 || anchor_patch >= np) throw ConfigError("stitch_gauges: bad anchor index");
  int n = dom.n_nodes();
  for (const auto& p : patches)
    if ((int)p.values.size() != n || (int)p.region.mask.size() != n)
      throw ConfigError("stitch_gauges: patch size mismatch");

  std::vector<std::array<int, 2>> edges;
  std::vector<cplx> ratios;
  std::vector<std::vector<int>> overlap;
  for (int p = 0; p < np; ++p)
    for (int q2 = p + 1; q2 < np; ++q2) {
      std::vector<int> ov = intersect_nodes(patches[p].region, patches[q2].region);
      if (ov.empty()) continue;
      cplx num = 0.0, den = 0.0;
      for (int i : ov) {
        num += dom.vol_w[i] * std::conj(patches[q2].values[i]) * patches[p].values[i];
        den += dom.vol_w[i] * std::norm(patches[q2].values[i]);
      }
      cplx r = std::abs(den) > 1e-300 ? num / den : cplx(1.0);
      edges.push_back({p, q2});
      ratios.push_back(r == cplx(0.0) ? cplx(1.0) : r);
      overlap.push_back(std::move(ov));
    }

  StitchResult out;
  out.factors = graph_factors(np, anchor_patch, edges, ratios, "stitch_gauges");

  double worst = 0.0;
  int worst_p = -1, worst_q = -1;
  for (size_t e = 0; e < edges.size(); ++e) {
    double num = 0.0, den = 0.0;
    for (int i : overlap[e]) {
      cplx a = out.factors[edges[e][0]] * patches[edges[e][0]].values[i];
      cplx b = out.factors[edges[e][1]] * patches[edges[e][1]].values[i];
      num += dom.vol_w[i] * std::norm(a - b);
      den += dom.vol_w[i] * std::max(std::norm(a), std::norm(b));
    }
    double sp = den > 1e-300 ? std::sqrt(num / den) : 0.0;
    if (sp > worst) {
      worst = sp;
      worst_p = edges[e][0];
      worst_q = edges[e][1];
    }
  }
  out.worst_spread = worst;
  if (worst > tol) {
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "stitch_gauges: overlap of patches %d and %d spreads %.3g after rescaling "
                  "(tol %.3g)",
                  worst_p, worst_q, worst, tol);
    throw NumericalError(buf);
  }

  out.region.mask.assign(n, 0);
  out.values = VectorXcd::Zero(n);
  VectorXd cnt = VectorXd::Zero(n);
  for (int p = 0; p < np; ++p)
    for (int i = 0; i < n; ++i)
      if (patches[p].region.mask[i]) {
        out.region.mask[i] = 1;
        out.values[i] += out.factors[p] * patches[p].values[i];
        cnt[i] += 1.0;
      }
  for (int i = 0; i < n; ++i)
    if (cnt[i] > 0.0) out.values[i] /= cnt[i];
  return out;
}

// ---- data-side machinery ----

namespace {

// Bilinear pairings of hat-in-time probes on the receiver elements against
// every source column: row (e, m) holds <hat_m x elem e, K col_j> with the
// same trapezoid and element weights pair_spacetime uses.
struct PairTable {
  std::vector<int> elem_pos;  // positions into K.v_nodes
  int n1 = 0;
  MatrixXcd rows;             // (|elem_pos| * n1) x cols, element-major
};

double elem_weight(const DiscreteDomain& dom, const ConnectingOperator& K, int pos) {
  int node = K.v_nodes[pos];
  return K.receiver.interior ? dom.vol_w[node] : dom.surf_w[node];
}

PairTable pairing_table(const DiscreteDomain& dom, const ConnectingOperator& K,
                        std::int64_t max_entries = 6'000'000) {
  PairTable t;
  t.n1 = K.basis.time.n;
  int ne = (int)K.v_nodes.size(), cols = (int)K.mat.cols(), nt = K.grid.nt;
  int stride = 1;
  while ((std::int64_t)((ne + stride - 1) / stride) * t.n1 * cols > max_entries) ++stride;
  for (int p = 0; p < ne; p += stride) t.elem_pos.push_back(p);
  MatrixXcd hw(t.n1, nt + 1);
  VectorXd tw = trapz_weights(K.grid);
  for (int l = 0; l < t.n1; ++l)
    hw.row(l) = (hat_samples(K.basis.time, l).array() * tw.array()).transpose().cast<cplx>();
  t.rows.resize((int)t.elem_pos.size() * t.n1, cols);
  MatrixXcd slice(nt + 1, cols);
  for (size_t k = 0; k < t.elem_pos.size(); ++k) {
    int e = t.elem_pos[k];
    for (int m = 0; m <= nt; ++m) slice.row(m) = K.mat.row(m * ne + e);
    t.rows.middleRows((int)k * t.n1, t.n1) = elem_weight(dom, K, e) * (hw * slice);
  }
  return t;
}

// <profile, K col_j> for an arbitrary separable profile: time samples tprof
// on the elements listed in gamma_pos (transverse weight 1).
RowVectorXcd profile_row(const DiscreteDomain& dom, const ConnectingOperator& K,
                         const VectorXd& tprof, const std::vector<int>& gamma_pos) {
  int ne = (int)K.v_nodes.size(), nt = K.grid.nt;
  VectorXd tw = trapz_weights(K.grid);
  RowVectorXcd row = RowVectorXcd::Zero(K.mat.cols());
  for (int p : gamma_pos) {
    double we = elem_weight(dom, K, p);
    for (int m = 0; m <= nt; ++m)
      if (tprof[m] != 0.0) row += (we * tw[m] * tprof[m]) * K.mat.row(m * ne + p);
  }
  return row;
}

VectorXd window_samples(const TimeGrid& g, double t0, double t1) {
  VectorXd v = VectorXd::Zero(g.nt + 1);
  for (int m = 0; m <= g.nt; ++m) {
    double t = g.t(m);
    if (t > t0 && t < t1) {
      double s = std::sin(M_PI * (t - t0) / (t1 - t0));
      v[m] = s * s;
    }
  }
  return v;
}

// Ramp to one and stay there through the final time.
VectorXd plateau_samples(const TimeGrid& g, double t0, double t_flat) {
  VectorXd v = VectorXd::Zero(g.nt + 1);
  for (int m = 0; m <= g.nt; ++m) {
    double t = g.t(m);
    if (t <= t0) continue;
    if (t >= t_flat)
      v[m] = 1.0;
    else {
      double s = std::sin(0.5 * M_PI * (t - t0) / (t_flat - t0));
      v[m] = s * s;
    }
  }
  return v;
}

VectorXd second_difference(const VectorXd& v, double dt) {
  int n = (int)v.size();
  VectorXd out = VectorXd::Zero(n);
  for (int m = 1; m + 1 < n; ++m) out[m] = (v[m + 1] - 2.0 * v[m] + v[m - 1]) / (dt * dt);
  return out;
}

struct ValueFields {
  std::vector<VectorXcd> w, wtt;       // one pair per profile, full length
  std::vector<std::uint8_t> have;      // nodes with solved values
  std::vector<std::uint8_t> attempted; // the group's x grid
  int n_failed = 0;
};

// The localized-source construction from data alone. For each target x and
// ladder step j, the source minimizes its own energy plus a stiff penalty on
// all pairings with hat probes inside the shrinking caps (support control),
// normalized to unit pairing against the reference profile. Tail values of
// the profile pairings then estimate the gauge-weighted adjoint states at x.
ValueFields recover_values(const DiscreteDomain& dom, const ConnectingOperator& K,
                           const PairTable& tab, const MatrixXd& dist,
                           const std::vector<int>& targets, const std::vector<int>& gamma_pos,
                           const MatrixXd& G, const ReconstructionOptions& opt) {
  int n = dom.n_nodes(), cols = (int)K.mat.cols();
  double T = K.grid.T, dt = K.grid.dt, delta = K.basis.time.delta;
  int n1 = K.basis.time.n;
  int P = std::max(opt.profiles, dom.dim() + 2);

  double s_max = 0.0;
  for (int x : targets) {
    double d = dist.col(x).minCoeff();
    s_max = std::max(s_max, d);
  }
  // Anchors sit past the deepest target so its value comes from a real
  // shell rather than an extrapolation (see below).
  double ext = s_max + (std::max(opt.rungs, 2) + 1.5) * delta;
  double floor_m = std::max(opt.eps, 3.0 * dom.spacing());
  double slack = T - 8.0 * dt - ext;
  if (slack < floor_m)
    throw ConfigError("reconstruct: recovery region too deep for the data horizon");
  double margin = std::min(std::max(0.6 * slack, floor_m), 0.45);
  double L = ext + margin;

  // Value and curvature probes. Every profile spans all target depths (a
  // state at depth s only sees data up to T - s, so the shared early end
  // keeps the deepest samples of full size), staggered starts keep the
  // samples independent across the family.
  std::vector<VectorXd> prof(P), prof_tt(P);
  std::vector<double> prof_sup(P), prof_tt_sup(P);
  for (int q = 0; q < P; ++q) {
    double fr = P > 1 ? (double)q / (P - 1) : 0.0;
    double start = T - L + 0.6 * margin * fr;
    double end = T - 3.0 * dt;
    prof[q] = window_samples(K.grid, start, end);
    prof_tt[q] = second_difference(prof[q], dt);
    prof_sup[q] = prof[q].cwiseAbs().maxCoeff();
    prof_tt_sup[q] = prof_tt[q].cwiseAbs().maxCoeff();
  }
  VectorXd ref = plateau_samples(K.grid, T - L, T - 0.55 * L);

  MatrixXcd vrow(P, cols), trow(P, cols);
  for (int q = 0; q < P; ++q) {
    vrow.row(q) = profile_row(dom, K, prof[q], gamma_pos);
    trow.row(q) = profile_row(dom, K, prof_tt[q], gamma_pos);
  }
  RowVectorXcd m0 = profile_row(dom, K, ref, gamma_pos);

  double mu = 0.0;
  {
    double rs = tab.rows.rowwise().squaredNorm().mean();
    double gm = G.diagonal().mean();
    mu = 1e6 * gm / std::max(rs, 1e-300);
  }
  double areg = opt.alpha > 0.0 ? opt.alpha : 1.0;

  ValueFields out;
  out.attempted.assign(n, 0);
  out.have.assign(n, 0);
  out.w.assign(P, VectorXcd::Zero(n));
  out.wtt.assign(P, VectorXcd::Zero(n));
  MatrixXcd Gc = areg * G.cast<cplx>();

  bool dbg = std::getenv("BC_RECON_DEBUG") != nullptr;
  if (dbg)
    std::fprintf(stderr, "[recover_values] T=%.4g s_max=%.4g margin=%.4g L=%.4g P=%d targets=%zu\n",
                 T, s_max, margin, L, P, targets.size());

  for (int x : targets) out.attempted[x] = 1;

  // A single source's state spreads over everything its support barrier
  // allows, so the profile pairings are one-sided integrals, not point
  // values. Differencing the unnormalized pairings of consecutive barriers
  // isolates the shell of states the step released, and the same difference
  // of the reference pairings supplies the local normalization: the ratio
  // is the value at the shell. The shells sit at the released probe hats'
  // positions (depth T minus the hat peak), fixed by the basis rather than
  // by the anchor, so the per-anchor ladders pool into one shell table and
  // the nodes interpolate between bracketing shells.
  std::vector<int> gamma_sorted = gamma_pos;
  std::sort(gamma_sorted.begin(), gamma_sorted.end());
  std::vector<int> seed_to_k((int)dist.rows(), -1);
  for (size_t k = 0; k < tab.elem_pos.size(); ++k) seed_to_k[tab.elem_pos[k]] = (int)k;

  std::vector<std::pair<int, int>> anchors;  // node, foot position in tab
  for (int i = 0; i < n; ++i) {
    Eigen::Index fi;
    double d = dist.col(i).minCoeff(&fi);
    if (d < 2.0 * delta || d > ext) continue;
    if (!std::binary_search(gamma_sorted.begin(), gamma_sorted.end(), (int)fi)) continue;
    if (seed_to_k[fi] < 0) continue;
    anchors.push_back({i, seed_to_k[fi]});
  }

  struct RungSol {
    cplx den;
    VectorXcd s, t;
  };
  std::map<std::vector<int>, RungSol> cache;
  struct ShellAcc {
    double tdepth = 0.0, cnt = 0.0;
    cplx dden = 0.0;       // pooled released reference mass
    VectorXcd ds, dt;      // pooled raw pairing differences
    VectorXcd vs, vt;      // per-anchor ratio sums, for the spread estimate
    VectorXd v2s, v2t;
  };
  std::map<long, ShellAcc> shells;
  int max_rungs = std::max(opt.rungs, 2);
  int ne = (int)tab.elem_pos.size();

  for (auto [a, foot] : anchors) {
    double d = dist.col(a).minCoeff();
    std::vector<double> rad;
    for (int k = 1; k <= max_rungs; ++k)
      if (k * delta < 0.9 * d) rad.push_back(k * delta);
    int nr = (int)rad.size();
    if (nr < 2) continue;

    std::vector<std::vector<int>> keys(nr);
    std::vector<const RungSol*> sol(nr, nullptr);
    for (int kk = 0; kk < nr; ++kk) {
      std::vector<int> key(ne, n1);
      bool any = false;
      for (int k = 0; k < ne; ++k) {
        double h = dist(tab.elem_pos[k], a) - rad[kk];
        if (h <= 0.0) continue;
        int mlo = std::clamp((int)std::ceil((T - h) / delta - 1e-9), 0, n1);
        key[k] = mlo;
        if (mlo < n1) any = true;
      }
      if (!any) {
        nr = kk;
        break;
      }
      auto [it, fresh] = cache.try_emplace(key);
      if (fresh) {
        MatrixXcd N = Gc;
        for (int k = 0; k < ne; ++k)
          for (int m = key[k]; m < n1; ++m) {
            RowVectorXcd row = tab.rows.row(k * n1 + m);
            double nr2 = row.squaredNorm();
            if (nr2 <= 1e-300) continue;
            N.noalias() += (mu / nr2) * (row.adjoint() * row);
          }
        VectorXcd y = Eigen::LDLT<MatrixXcd>(N).solve(m0.conjugate().transpose());
        it->second.den = (m0 * y)(0);
        it->second.s = vrow * y;
        it->second.t = trow * y;
      }
      keys[kk] = std::move(key);
      sol[kk] = &it->second;
    }
    if (nr < 2) continue;

    double dmax = 0.0;
    for (int kk = 0; kk < nr; ++kk) dmax = std::max(dmax, std::abs(sol[kk]->den));
    for (int kk = 0; kk + 1 < nr; ++kk) {
      int r0 = keys[kk][foot], r1 = keys[kk + 1][foot];
      if (r1 <= r0) continue;  // the step released no probe under the anchor
      cplx dd = sol[kk + 1]->den - sol[kk]->den;
      if (!(std::abs(dd) > 1e-10 * dmax)) continue;
      double tdepth = T - delta * (0.5 * (r0 + r1 - 1) + 1.0);
      if (tdepth < 0.0) continue;
      long skey = std::lround(tdepth / (0.25 * delta));
      ShellAcc& acc = shells[skey];
      if (acc.cnt == 0.0) {
        acc.tdepth = tdepth;
        acc.ds = VectorXcd::Zero(P);
        acc.dt = VectorXcd::Zero(P);
        acc.vs = VectorXcd::Zero(P);
        acc.vt = VectorXcd::Zero(P);
        acc.v2s = VectorXd::Zero(P);
        acc.v2t = VectorXd::Zero(P);
      }
      acc.dden += dd;
      for (int q = 0; q < P; ++q) {
        cplx dsq = sol[kk + 1]->s[q] - sol[kk]->s[q];
        cplx dtq = sol[kk + 1]->t[q] - sol[kk]->t[q];
        acc.ds[q] += dsq;
        acc.dt[q] += dtq;
        cplx v = dsq / dd, t = dtq / dd;
        acc.vs[q] += v;
        acc.vt[q] += t;
        acc.v2s[q] += std::norm(v);
        acc.v2t[q] += std::norm(t);
      }
      acc.cnt += 1.0;
    }
  }

  std::vector<const ShellAcc*> ordered;
  for (auto& [k, acc] : shells) ordered.push_back(&acc);

  // The released mass alternates between neighboring shells (the hats
  // overlap), and the per-shell value error anticorrelates with it, so
  // weight each shell by kernel times released mass: the weighted linear
  // fit in depth cancels the texture and stays smooth in the node position.
  double wc = 2.2 * delta;
  for (int x : targets) {
    double dx = dist.col(x).minCoeff();
    std::vector<const ShellAcc*> near;
    double cut = wc;
    for (int pass = 0; pass < 2 && near.size() < 2; ++pass, cut = 3.2 * delta) {
      near.clear();
      for (const ShellAcc* s : ordered)
        if (std::abs(s->tdepth - dx) <= cut) near.push_back(s);
    }
    double worst = 0.0;
    bool ok = false;
    if (near.size() == 2) {
      // two shells only happen at the rim; never extrapolate past them
      double lo = 1e300, hi = -1e300;
      for (const ShellAcc* s : near) {
        lo = std::min(lo, s->tdepth);
        hi = std::max(hi, s->tdepth);
      }
      if (dx < lo - 0.75 * delta || dx > hi + 0.75 * delta) near.clear();
    }
    if (near.size() >= 2) {
      double sw = 0.0, sx = 0.0, sxx = 0.0, sww = 0.0;
      std::vector<double> wts(near.size());
      for (size_t i = 0; i < near.size(); ++i) {
        double u = (near[i]->tdepth - dx) / cut;
        double c = std::cos(0.5 * M_PI * std::min(std::abs(u), 1.0));
        wts[i] = c * c * std::abs(near[i]->dden);
        sw += wts[i];
        sx += wts[i] * u;
        sxx += wts[i] * u * u;
        sww += wts[i] * wts[i];
      }
      double det = sw * sxx - sx * sx;
      double n_eff = sww > 0.0 ? sw * sw / sww : 1.0;
      ok = sw > 0.0 && (near.size() == 2 || det > 1e-12 * sw * sxx || sxx == 0.0);
      if (ok) {
        for (int q = 0; q < P; ++q) {
          cplx b0, b1;
          cplx sv = 0.0, sxv = 0.0, st2 = 0.0, sxt = 0.0;
          for (size_t i = 0; i < near.size(); ++i) {
            double u = (near[i]->tdepth - dx) / cut;
            cplx vi = near[i]->ds[q] / near[i]->dden;
            cplx ti = near[i]->dt[q] / near[i]->dden;
            sv += wts[i] * vi;
            sxv += wts[i] * u * vi;
            st2 += wts[i] * ti;
            sxt += wts[i] * u * ti;
          }
          if (det > 1e-12 * sw * sxx) {
            b0 = (sxx * sv - sx * sxv) / det;
            out.w[q][x] = b0;
            b1 = (sw * sxv - sx * sv) / det;
            cplx c0 = (sxx * st2 - sx * sxt) / det, c1 = (sw * sxt - sx * st2) / det;
            out.wtt[q][x] = c0;
            double r2v = 0.0, r2t = 0.0;
            for (size_t i = 0; i < near.size(); ++i) {
              double u = (near[i]->tdepth - dx) / cut;
              r2v += wts[i] * std::norm(near[i]->ds[q] / near[i]->dden - b0 - u * b1);
              r2t += wts[i] * std::norm(near[i]->dt[q] / near[i]->dden - c0 - u * c1);
            }
            // the weighted fit cancels the alternating texture, so judge the
            // intercept by its standard error, not the raw scatter
            double dv = std::sqrt(r2v / sw / std::max(1.0, n_eff - 2.0));
            double dt2 = std::sqrt(r2t / sw / std::max(1.0, n_eff - 2.0));
            worst = std::max(worst, dv / std::max(std::abs(b0), 0.15 * prof_sup[q]));
            worst = std::max(worst, dt2 / std::max(std::abs(c0), 0.15 * prof_tt_sup[q]));
          } else {
            out.w[q][x] = sv / sw;
            out.wtt[q][x] = st2 / sw;
          }
          // cross-anchor spread within the contributing shells
          double vps = 0.0, vpt = 0.0;
          for (size_t i = 0; i < near.size(); ++i) {
            const ShellAcc* s = near[i];
            if (s->cnt < 1.5) continue;
            double varv = std::max(
                0.0, s->v2s[q] / s->cnt - std::norm(s->vs[q] / s->cnt));
            double vart = std::max(
                0.0, s->v2t[q] / s->cnt - std::norm(s->vt[q] / s->cnt));
            vps = std::max(vps, std::sqrt(varv));
            vpt = std::max(vpt, std::sqrt(vart));
          }
          worst = std::max(worst, vps / std::max(std::abs(out.w[q][x]), 0.15 * prof_sup[q]));
          worst = std::max(
              worst, vpt / std::max(std::abs(out.wtt[q][x]), 0.15 * prof_tt_sup[q]));
        }
      }
    }
    double tol_eff = opt.tol;
    if (const char* e = std::getenv("BC_RECON_TOL")) tol_eff = std::atof(e);
    if (!ok || worst > tol_eff) {
      ++out.n_failed;
      for (int q = 0; q < P; ++q) {
        out.w[q][x] = 0.0;
        out.wtt[q][x] = 0.0;
      }
    } else {
      out.have[x] = 1;
    }
    if (dbg)
      std::fprintf(stderr,
                   "[recover_values] x=%d depth=%.4g worst=%.4g%s w0=%.4g wtt0=%.4g nsh=%zu\n", x,
                   dx, worst, out.have[x] ? "" : " FAIL", std::abs(out.w[0][x]),
                   std::abs(out.wtt[0][x]), near.size());
  }
  if (dbg)
    std::fprintf(stderr, "[recover_values] anchors=%zu shells=%zu solves=%zu n_failed=%d\n",
                 anchors.size(), shells.size(), cache.size(), out.n_failed);
  return out;
}

// Gauge-transports `add` onto `base` where they overlap and blends: the log
// transition integrates (A_base - A_add)/2 over the overlap, is extended
// into the rest of `add` with a few relaxation sweeps (small Dirichlet
// energy), and the two representatives cross-fade across the overlap.
void glue_representative(const DiscreteDomain& dom, OperatorCoefficients& base,
                         const OperatorCoefficients& add, double stitch_tol, double& worst_spread,
                         std::vector<cplx>& factors) {
  int n = dom.n_nodes();
  std::vector<int> ov = intersect_nodes(base.region, add.region);
  if (ov.empty()) throw ConfigError("reconstruct: patches to glue do not overlap");

  VectorXcd gx(n), gy(n);
  for (int i = 0; i < n; ++i) {
    double c2i = dom.metric.euclidean() ? 1.0 : dom.metric.speed(i) * dom.metric.speed(i);
    gx[i] = (base.ax[i] - add.ax[i]) / (2.0 * c2i);
    gy[i] = (base.ay[i] - add.ay[i]) / (2.0 * c2i);
  }
  std::vector<std::uint8_t> ovm(n, 0);
  for (int i : ov) ovm[i] = 1;
  VectorXcd ell = VectorXcd::Zero(n);
  std::vector<std::uint8_t> seen(n, 0);
  std::deque<int> q{ov[0]};
  seen[ov[0]] = 1;
  std::vector<int> nb;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    stencil_neighbors(dom, u, nb);
    for (int v : nb)
      if (ovm[v] && !seen[v]) {
        Vec2 dxy{dom.xy[v].x - dom.xy[u].x, dom.xy[v].y - dom.xy[u].y};
        ell[v] = ell[u] + 0.5 * (gx[u] + gx[v]) * dxy.x + 0.5 * (gy[u] + gy[v]) * dxy.y;
        seen[v] = 1;
        q.push_back(v);
      }
  }
  for (int i : ov)
    if (!seen[i]) ovm[i] = 0;  // disconnected shards of the overlap are ignored

  // Extend onto all of `add` plus a collar: nearest-value init, then relax.
  std::vector<std::uint8_t> want = add.region.mask;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<std::uint8_t> comp(n);
    for (int i = 0; i < n; ++i) comp[i] = want[i] ? 0 : 1;
    for (int i : mask_rim(dom, comp)) want[i] = 1;
  }
  for (int i = 0; i < n; ++i) want[i] = (want[i] || ovm[i]) ? 1 : 0;
  std::vector<std::uint8_t> have = ovm;
  std::vector<VectorXcd*> fs{&ell};
  fill_from_neighbors(dom, fs, have, want);
  for (int sweep = 0; sweep < 60; ++sweep) {
    VectorXcd nxt = ell;
    for (int i = 0; i < n; ++i) {
      if (!want[i] || ovm[i] || !have[i]) continue;
      stencil_neighbors(dom, i, nb);
      cplx acc = 0.0;
      int cnt = 0;
      for (int v : nb)
        if (have[v]) {
          acc += ell[v];
          ++cnt;
        }
      if (cnt > 0) nxt[i] = acc / (double)cnt;
    }
    ell.swap(nxt);
  }
  VectorXcd kappa = VectorXcd::Ones(n);
  for (int i = 0; i < n; ++i)
    if (want[i] && have[i]) kappa[i] = std::exp(ell[i]);

  GaugeField tr{kappa, NodeSet{}};
  tr.anchor.mask.assign(n, 0);
  OperatorCoefficients moved = apply_gauge(dom, add, tr);

  // Mismatch on the overlap after the transport, relative to the local scale.
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i)
    if (ovm[i]) {
      double wv = dom.vol_w[i];
      num += wv * (std::norm(moved.ax[i] - base.ax[i]) + std::norm(moved.ay[i] - base.ay[i]) +
                   std::norm(moved.q[i] - base.q[i]));
      den += wv * (1.0 + std::norm(base.ax[i]) + std::norm(base.ay[i]) + std::norm(base.q[i]));
    }
  double spread = den > 0.0 ? std::sqrt(num / den) : 0.0;
  worst_spread = std::max(worst_spread, spread);
  if (spread > stitch_tol) {
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "reconstruct: glued patches disagree by %.3g on their overlap (tol %.3g)",
                  spread, stitch_tol);
    throw NumericalError(buf);
  }
  cplx fac = 0.0;
  int cnt = 0;
  for (int i = 0; i < n; ++i)
    if (ovm[i]) {
      fac += kappa[i];
      ++cnt;
    }
  factors.push_back(cnt > 0 ? fac / (double)cnt : cplx(1.0));

  // Cross-fade by hop depth measured from the far side of the overlap.
  std::vector<std::uint8_t> um(n, 0);
  for (int i = 0; i < n; ++i) um[i] = (base.region.mask[i] || add.region.mask[i]) ? 1 : 0;
  std::vector<int> base_only, add_only;
  for (int i = 0; i < n; ++i) {
    if (base.region.mask[i] && !add.region.mask[i]) base_only.push_back(i);
    if (add.region.mask[i] && !base.region.mask[i]) add_only.push_back(i);
  }
  std::vector<int> db = bfs_depth(dom, um, base_only), da = bfs_depth(dom, um, add_only);
  for (int i = 0; i < n; ++i) {
    if (!add.region.mask[i]) continue;
    if (!base.region.mask[i]) {
      base.ax[i] = moved.ax[i];
      base.ay[i] = moved.ay[i];
      base.q[i] = moved.q[i];
      base.region.mask[i] = 1;
      continue;
    }
    double wb = db[i] < 0 ? 1.0 : (double)db[i];
    double wa = da[i] < 0 ? 1.0 : (double)da[i];
    double t = (wa + wb) > 0.0 ? wa / (wa + wb) : 0.5;  // 1 deep on the base side
    base.ax[i] = t * base.ax[i] + (1.0 - t) * moved.ax[i];
    base.ay[i] = t * base.ay[i] + (1.0 - t) * moved.ay[i];
    base.q[i] = t * base.q[i] + (1.0 - t) * moved.q[i];
  }
  base.provenance = Provenance::Recovered;
}

struct StageResult {
  OperatorCoefficients coeffs;
  NodeSet flagged;
  double worst_spread = 0.0;
  std::vector<cplx> factors;
};

// Shared recovery stage: localize, take tail values, identify the operator,
// glue the per-foot groups. The carrier is whatever the connecting operator
// measures on (boundary patch or interior set).
StageResult recover_stage(const DiscreteDomain& dom, const ConnectingOperator& K,
                          const std::vector<int>& targets, const ReconstructionOptions& opt) {
  if (targets.empty()) throw ConfigError("reconstruct: empty recovery region");
  int n = dom.n_nodes();
  PairTable tab = pairing_table(dom, K);
  MatrixXd dist = distance_rows(dom, K.v_nodes);
  MatrixXd G = source_gram(dom, K.basis);

  // Feet and groups along the carrier.
  int ne = (int)K.v_nodes.size();
  std::vector<int> centers;
  for (int e = 0; e < ne; ++e) {
    bool ok = true;
    for (int c : centers) {
      Vec2 d{dom.xy[K.v_nodes[e]].x - dom.xy[K.v_nodes[c]].x,
             dom.xy[K.v_nodes[e]].y - dom.xy[K.v_nodes[c]].y};
      if (norm(d) < 0.7 * opt.eps) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(e);
  }
  int ng = (int)centers.size();
  std::vector<std::vector<int>> group_targets(ng), group_gamma(ng);
  for (int g = 0; g < ng; ++g)
    for (int e = 0; e < ne; ++e) {
      Vec2 d{dom.xy[K.v_nodes[e]].x - dom.xy[K.v_nodes[centers[g]]].x,
             dom.xy[K.v_nodes[e]].y - dom.xy[K.v_nodes[centers[g]]].y};
      if (norm(d) <= opt.eps) group_gamma[g].push_back(e);
    }
  for (int x : targets) {
    Eigen::Index footi = 0;
    dist.col(x).minCoeff(&footi);
    int foot = (int)footi;
    double best = 1e300;
    for (int g = 0; g < ng; ++g) {
      Vec2 d{dom.xy[K.v_nodes[foot]].x - dom.xy[K.v_nodes[centers[g]]].x,
             dom.xy[K.v_nodes[foot]].y - dom.xy[K.v_nodes[centers[g]]].y};
      best = std::min(best, norm(d));
    }
    for (int g = 0; g < ng; ++g) {
      Vec2 d{dom.xy[K.v_nodes[foot]].x - dom.xy[K.v_nodes[centers[g]]].x,
             dom.xy[K.v_nodes[foot]].y - dom.xy[K.v_nodes[centers[g]]].y};
      if (norm(d) <= std::max(best + 0.35 * opt.eps, 1e-12)) group_targets[g].push_back(x);
    }
  }

  StageResult out;
  out.flagged.mask.assign(n, 0);
  bool first = true;
  for (int g = 0; g < ng; ++g) {
    if (group_targets[g].empty()) continue;
    std::vector<int> solve_list;
    for (size_t k = 0; k < group_targets[g].size(); ++k)
      if ((int)k % std::max(1, opt.x_stride) == 0) solve_list.push_back(group_targets[g][k]);
    ValueFields vals =
        recover_values(dom, K, tab, dist, solve_list, group_gamma[g], G, opt);
    for (int x : group_targets[g]) vals.attempted[x] = 1;

    // Unsolved and failed targets take interpolated values.
    std::vector<VectorXcd*> fs;
    for (auto& f : vals.w) fs.push_back(&f);
    for (auto& f : vals.wtt) fs.push_back(&f);
    std::vector<std::uint8_t> have = vals.have;
    fill_from_neighbors(dom, fs, have, vals.attempted);
    NodeSet region;
    region.mask = have;  // attempted nodes reached by values
    for (int i = 0; i < n; ++i) region.mask[i] = (region.mask[i] && vals.attempted[i]) ? 1 : 0;
    for (int i = 0; i < n; ++i)
      if (vals.attempted[i] && !vals.have[i]) out.flagged.mask[i] = 1;
    if (region.count() == 0) throw NumericalError("reconstruct: no target converged");

    CoefficientFit fit = recover_coefficients(dom, vals.w, vals.wtt, region, region);
    if (std::getenv("BC_RECON_DEBUG")) {
      std::fprintf(stderr,
                   "[recover_stage] group=%d solved=%zu/%zu region=%d fit_flagged=%d\n", g,
                   group_targets[g].size() - (size_t)vals.n_failed, group_targets[g].size(),
                   (int)region.count(), (int)fit.flagged.count());
      for (int i : region.nodes())
        std::fprintf(stderr, "[fit] x=%d pos=(%.4g,%.4g) ax=%.4g%+.4gi q=%.4g%+.4gi\n", i,
                     dom.xy[i].x, dom.xy[i].y, fit.coeffs.ax[i].real(), fit.coeffs.ax[i].imag(),
                     fit.coeffs.q[i].real(), fit.coeffs.q[i].imag());
    }
    for (int i : fit.flagged.nodes()) out.flagged.mask[i] = 1;
    if (first) {
      out.coeffs = fit.coeffs;
      out.factors.push_back(1.0);
      first = false;
    } else {
      glue_representative(dom, out.coeffs, fit.coeffs, opt.stitch_tol, out.worst_spread,
                          out.factors);
    }
  }
  if (first) throw ConfigError("reconstruct: no recoverable group");
  return out;
}

}  // namespace

ResponseOperator continue_interior_data(const DiscreteDomain& dom, const OperatorCoefficients& rep,
                                        const ResponseOperator& lam,
                                        const std::vector<int>& target_nodes,
                                        const ContinuationOptions& opt) {
  if (target_nodes.empty()) throw ConfigError("continue_interior_data: no target nodes");
  ConnectingOperator K = assemble_connecting(lam);
  const TimeGrid& gT = K.grid;
  double T = gT.T, delta = K.basis.time.delta;
  int n1 = K.basis.time.n, ne = (int)K.v_nodes.size();
  int nnode = (int)K.basis.nodes.size();

  double reach = 0.0;
  MatrixXd dist = distance_rows(dom, K.v_nodes);
  for (int x : target_nodes) reach = std::max(reach, dist.col(x).minCoeff());
  double window = opt.window > 0.0 ? opt.window : reach + 6.0 * delta;
  if (window < reach + 2.0 * delta)
    throw ConfigError("continue_interior_data: window too small for the target set");
  if (window > T - 2.0 * delta)
    throw ConfigError("continue_interior_data: window exceeds the data horizon");

  // Probe family: late tents on the carrier, on the fine time grid. Probes
  // never translate (only the source columns shift), so nothing ties their
  // resolution to the basis stride, and coarser probes lose the states'
  // grid-scale content.
  double dt = gT.dt;
  int plo = std::max(1, (int)std::ceil((T - window) / dt - 1e-9));
  std::vector<std::pair<int, int>> probes;  // (elem position, tent sample)
  {
    int nm = gT.nt - plo;
    if (nm <= 0) throw ConfigError("continue_interior_data: no probe fits the window");
    int estride = 1, pstep = 1;
    while ((ne + estride - 1) / estride * ((nm + pstep - 1) / pstep) > opt.max_probes) {
      if (pstep < K.basis.time.stride)
        ++pstep;
      else
        ++estride;
    }
    for (int e = 0; e < ne; e += estride)
      for (int p = plo; p < gT.nt; p += pstep) probes.emplace_back(e, p);
  }
  int np = (int)probes.size();

  // Moment set: everywhere the probe states can carry mass by the horizon.
  // Solving only on the requested targets would fold the off-target mass
  // into their values, so the inversion runs on the full set and the output
  // keeps the requested rows.
  std::vector<int> moment_nodes;
  {
    VectorXd dV = dist.colwise().minCoeff().transpose();
    for (int i = 0; i < dom.n_nodes(); ++i)
      if (dV[i] <= window + dom.spacing() + 1e-12) moment_nodes.push_back(i);
  }
  int nmom = (int)moment_nodes.size();

  // Probe states of the representative's transposed equation at the horizon.
  CoefficientField repc = to_coefficient_field(dom, rep);
  int ntar = (int)target_nodes.size();
  MatrixXcd M(np, nmom);
  WaveOptions wopt;
  wopt.keep_history = false;
  auto tent = [&](int p) {
    VectorXd hs = VectorXd::Zero(gT.nt + 1);
    hs[p] = 1.0;
    if (p > 0) hs[p - 1] = 0.5;
    if (p < gT.nt) hs[p + 1] = 0.5;
    return hs;
  };
  for (int i = 0; i < np; ++i) {
    SpaceTimeField probe = zero_field(gT, {K.v_nodes[probes[i].first]});
    VectorXd hs = tent(probes[i].second);
    for (int m = 0; m <= gT.nt; ++m) probe.vals(m, 0) = hs[m];
    Wavefield w = K.receiver.interior
                      ? solve_adjoint(dom, repc, nullptr, &probe, nullptr, gT, wopt)
                      : solve_adjoint(dom, repc, &probe, nullptr, nullptr, gT, wopt);
    for (int k = 0; k < nmom; ++k)
      M(i, k) = w.u_T[moment_nodes[k]] * dom.vol_w[moment_nodes[k]];
  }
  std::vector<int> tar_pos(ntar, -1);
  for (int k = 0; k < ntar; ++k) {
    auto it = std::lower_bound(moment_nodes.begin(), moment_nodes.end(), target_nodes[k]);
    if (it == moment_nodes.end() || *it != target_nodes[k])
      throw ConfigError("continue_interior_data: target outside the probe window");
    tar_pos[k] = (int)(it - moment_nodes.begin());
  }

  // Pairings of every probe against every column, one table for all horizons.
  MatrixXcd tabrows(np, K.mat.cols());
  {
    VectorXd tw = trapz_weights(gT);
    for (int i = 0; i < np; ++i) {
      auto [e, p] = probes[i];
      VectorXd hs = tent(p);
      RowVectorXcd row = RowVectorXcd::Zero(K.mat.cols());
      double we = elem_weight(dom, K, e);
      for (int s = 0; s <= gT.nt; ++s)
        if (hs[s] != 0.0) row += (we * tw[s] * hs[s]) * K.mat.row(s * ne + e);
      tabrows.row(i) = row;
    }
  }

  MatrixXcd NE = M.adjoint() * M;
  double ascale = NE.diagonal().real().maxCoeff();
  NE.diagonal().array() += std::max(opt.alpha, 1e-14) * std::max(ascale, 1e-300);
  Eigen::LDLT<MatrixXcd> fac(NE);

  ResponseOperator out;
  out.source_nodes = lam.source_nodes;
  out.receiver = interior_receiver(target_nodes, VectorXcd::Ones(dom.n_nodes()));
  out.grid = gT;
  out.basis = K.basis;
  out.mat = MatrixXcd::Zero((gT.nt + 1) * ntar, K.mat.cols());

  int shift_per_knot = K.basis.time.stride;  // delta / dt
  for (int nd = 0; nd < nnode; ++nd)
    for (int l = 0; l < n1; ++l) {
      int col = nd * n1 + l;
      int H = n1 - 1 - l;  // latest usable shift
      MatrixXcd rho(nmom, H + 1);
      for (int h = 0; h <= H; ++h) {
        VectorXcd b(np);
        for (int i = 0; i < np; ++i) b[i] = tabrows(i, nd * n1 + l + h);
        rho.col(h) = fac.solve(M.adjoint() * b);
      }
      // Knot h sits at time T - h*delta; linear in between, zero below.
      for (int m = 0; m <= gT.nt; ++m) {
        int back = gT.nt - m;  // in dt steps
        int h = back / shift_per_knot;
        int r = back % shift_per_knot;
        VectorXcd v;
        if (h > H)
          continue;  // earlier than the deepest knot: leave zero
        if (r == 0)
          v = rho.col(h);
        else if (h + 1 <= H)
          v = (1.0 - (double)r / shift_per_knot) * rho.col(h) +
              ((double)r / shift_per_knot) * rho.col(h + 1);
        else
          v = (1.0 - (double)r / shift_per_knot) * rho.col(h);
        for (int k = 0; k < ntar; ++k) out.mat(m * ntar + k, col) = v[tar_pos[k]];
      }
    }
  return out;
}

Reconstruction reconstruct_local(const DiscreteDomain& dom, const ResponseOperator& lam,
                                 const BoundaryPatch& S, const BoundaryPatch& R, double T,
                                 const ReconstructionOptions& opt) {
  if (lam.receiver.interior) throw ConfigError("reconstruct_local: boundary data expected");
  if (lam.receiver.nodes != R.nodes)
    throw ConfigError("reconstruct_local: receiver does not match R");
  if (lam.basis.nodes != S.nodes) throw ConfigError("reconstruct_local: sources do not match S");
  if (std::abs(lam.grid.T - 2.0 * T) > 0.51 * lam.grid.dt)
    throw ConfigError("reconstruct_local: data horizon is not twice the control time");

  ConnectingOperator K = assemble_connecting(lam);
  VectorXd d = distance_map(dom, R.nodes);
  std::vector<int> targets;
  for (int i = 0; i < dom.n_nodes(); ++i)
    if (d[i] <= opt.depth + 1e-12) targets.push_back(i);

  StageResult st = recover_stage(dom, K, targets, opt);
  Reconstruction out;
  out.coeffs = std::move(st.coeffs);
  out.flagged = std::move(st.flagged);
  out.stitch.region = out.coeffs.region;
  out.stitch.values = VectorXcd::Ones(dom.n_nodes());
  out.stitch.factors = std::move(st.factors);
  out.stitch.worst_spread = st.worst_spread;
  return out;
}

Reconstruction reconstruct_foliated(const DiscreteDomain& dom, const ResponseOperator& lam,
                                    const BoundaryPatch& S, const BoundaryPatch& R,
                                    const FoliationSpec& fol, double T,
                                    const ReconstructionOptions& opt) {
  std::vector<FoliationSlice> slices = foliation_slices(dom, fol);
  Reconstruction out = reconstruct_local(dom, lam, S, R, T, opt);
  int n = dom.n_nodes();
  double sp = dom.spacing();

  for (const FoliationSlice& sl : slices) {
    // Nodes of this slice's cleared region not yet recovered, plus a strip
    // back into the recovered region for the glue overlap.
    std::vector<std::uint8_t> missing(n, 0);
    int n_missing = 0;
    for (int i = 0; i < n; ++i)
      if ((sl.omega.mask[i] || std::find(sl.sigma.begin(), sl.sigma.end(), i) != sl.sigma.end()) &&
          !out.coeffs.region.contains(i)) {
        missing[i] = 1;
        ++n_missing;
      }
    if (n_missing == 0) continue;

    std::vector<int> missing_nodes;
    for (int i = 0; i < n; ++i)
      if (missing[i]) missing_nodes.push_back(i);
    VectorXd dmiss = distance_map(dom, missing_nodes);

    // Probe carrier: recovered nodes one strip back from the missing band.
    // The strip in between stays a target so the new patch overlaps the old
    // region away from the carrier itself.
    double gap = 2.5 * sp;
    std::vector<int> carrier;
    for (int i = 0; i < n; ++i)
      if (out.coeffs.region.contains(i) && !out.flagged.contains(i) && !missing[i] &&
          dmiss[i] > gap + 1e-12 && dmiss[i] <= gap + std::max(opt.eps, 3.0 * sp) + 1e-12)
        carrier.push_back(i);
    if (carrier.empty())
      throw ConfigError("reconstruct_foliated: no recovered nodes border the next slice");

    ContinuationOptions copt;
    copt.max_probes = 400;
    ResponseOperator moved = continue_interior_data(dom, out.coeffs, lam, carrier, copt);
    ConnectingOperator K2 = assemble_connecting(moved);

    std::vector<int> targets;
    for (int i = 0; i < n; ++i) {
      if (missing[i]) {
        targets.push_back(i);
        continue;
      }
      // strip of already recovered nodes for the overlap
      if (out.coeffs.region.contains(i) && dmiss[i] <= gap + 1e-12) targets.push_back(i);
    }

    ReconstructionOptions sopt = opt;
    StageResult st = recover_stage(dom, K2, targets, sopt);
    glue_representative(dom, out.coeffs, st.coeffs, opt.stitch_tol, out.stitch.worst_spread,
                        out.stitch.factors);
    for (int i : st.flagged.nodes()) out.flagged.mask[i] = 1;
  }
  out.stitch.region = out.coeffs.region;
  return out;
}

}  // namespace bc

#include "bc/control.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>

namespace bc {

namespace {

double trapz_dot(const VectorXd& a, const VectorXd& b, double dt) {
  int n = (int)a.size();
  double s = 0.0;
  for (int m = 0; m < n; ++m) {
    double w = (m == 0 || m == n - 1) ? 0.5 : 1.0;
    s += w * a[m] * b[m];
  }
  return s * dt;
}

// Source-side Gram: per node, the tridiagonal hat Gram scaled by the node's
double weighted_norm(const VectorXd& w, const VectorXcd& v) {
  return std::sqrt((v.array().abs2() * w.array()).sum());
}

// One-cell outward dilation: add the complement nodes adjacent to the mask.
std::vector<std::uint8_t> dilate(const DiscreteDomain& dom, std::vector<std::uint8_t> mask) {
  std::vector<std::uint8_t> comp(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) comp[i] = mask[i] ? 0 : 1;
  for (int i : mask_rim(dom, comp)) mask[i] = 1;
  return mask;
}

}  // namespace

// Per node, the tridiagonal hat Gram scaled by the node's boundary weight.
// Same trapezoid pairing as project_time, so projections and norms are
// mutually consistent.
MatrixXd source_gram(const DiscreteDomain& dom, const SourceBasis& b) {
  int n = b.time.n, nn = (int)b.nodes.size();
  VectorXd h0 = hat_samples(b.time, 0);
  double g0 = trapz_dot(h0, h0, b.time.grid.dt);
  double g1 = 0.0;
  if (n > 1) g1 = trapz_dot(h0, hat_samples(b.time, 1), b.time.grid.dt);
  MatrixXd gram = MatrixXd::Zero(b.cols(), b.cols());
  for (int k = 0; k < nn; ++k) {
    double sw = dom.surf_w[b.nodes[k]];
    for (int l = 0; l < n; ++l) {
      gram(k * n + l, k * n + l) = sw * g0;
      if (l + 1 < n) {
        gram(k * n + l, k * n + l + 1) = sw * g1;
        gram(k * n + l + 1, k * n + l) = sw * g1;
      }
    }
  }
  return gram;
}

namespace {

// Smooth probe fields at scales the grid resolves. Reachability is judged
// against these rather than raw node vectors: the shortest grid modes have
// vanishing group velocity under the scheme and no boundary source can
// excite them in any finite horizon.
MatrixXd smooth_probes(const DiscreteDomain& dom) {
  const double pi = 3.14159265358979323846;
  int n = dom.n_nodes();
  std::vector<VectorXd> cols;
  if (dom.kind == DomainKind::Interval) {
    int kmax = std::max(3, dom.nx / 4);
    for (int k = 1; k <= kmax; ++k) {
      VectorXd v(n);
      for (int i = 0; i < n; ++i) v[i] = std::sin(k * pi * dom.xy[i].x / dom.length);
      cols.push_back(v);
    }
  } else if (dom.kind == DomainKind::Rectangle) {
    double lx = dom.nx * dom.dx, ly = dom.ny * dom.dx;
    int kx = std::max(2, dom.nx / 4), ky = std::max(2, dom.ny / 4);
    for (int k = 1; k <= kx && (int)cols.size() < 100; ++k)
      for (int m = 1; m <= ky && (int)cols.size() < 100; ++m) {
        VectorXd v(n);
        for (int i = 0; i < n; ++i)
          v[i] = std::sin(k * pi * dom.xy[i].x / lx) * std::sin(m * pi * dom.xy[i].y / ly);
        cols.push_back(v);
      }
  } else {
    int mmax = std::min(6, dom.ntheta / 8), jmax = std::max(2, std::min(5, dom.nr / 4));
    for (int j = 1; j <= jmax; ++j)
      for (int m = 0; m <= mmax; ++m) {
        VectorXd vc(n), vs(n);
        for (int i = 0; i < n; ++i) {
          double r = std::hypot(dom.xy[i].x, dom.xy[i].y);
          double th = std::atan2(dom.xy[i].y, dom.xy[i].x);
          double rad = std::sin(j * pi * r);
          vc[i] = rad * std::cos(m * th);
          vs[i] = rad * std::sin(m * th);
        }
        cols.push_back(vc);
        if (m > 0) cols.push_back(vs);
      }
  }
  MatrixXd out(n, (int)cols.size());
  for (size_t k = 0; k < cols.size(); ++k) out.col((int)k) = cols[k];
  return out;
}

}  // namespace

ControlMap assemble_control_map(const DiscreteDomain& dom, const CoefficientField& coeff,
                                const BoundaryPatch& S, const TimeGrid& gridT, int stride,
                                bool with_velocity) {
  ControlMap U;
  U.source_nodes = S.nodes;
  U.basis = make_source_basis(S.nodes, gridT, stride);
  U.grid = gridT;
  int n = dom.n_nodes(), cols = U.basis.cols();
  U.u.resize(n, cols);
  if (with_velocity) U.ut.resize(n, cols);
  for (int j = 0; j < cols; ++j) {
    auto [uT, utT] = final_state(dom, coeff, basis_source(U.basis, j));
    U.u.col(j) = uT;
    if (with_velocity) U.ut.col(j) = utT;
  }
  U.w = Eigen::Map<const VectorXd>(dom.vol_w.data(), n);
  U.gram = source_gram(dom, U.basis);
  U.interior.resize(n);
  for (int i = 0; i < n; ++i) U.interior[i] = dom.is_boundary[i] ? 0 : 1;
  return U;
}

TikhonovResult tikhonov_pseudoinverse(const ControlMap& U, const VectorXcd& target,
                                      double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("regularization weight must be positive");
  if (target.size() != U.u.rows()) throw ConfigError("target size does not match the state space");
  MatrixXcd atw = U.u.adjoint() * U.w.asDiagonal();
  MatrixXcd nrm = atw * U.u + alpha * U.gram.cast<cplx>();
  TikhonovResult out;
  out.f = Eigen::LDLT<MatrixXcd>(nrm).solve((atw * target).eval());
  double den = weighted_norm(U.w, target);
  double num = weighted_norm(U.w, (U.u * out.f - target).eval());
  out.residual = den > 0.0 ? num / den : num;
  return out;
}

ControlMargin controllability_margin(const DiscreteDomain& dom, const ControlMap& U) {
  // Surjectivity margin of the map normalized between the source and state
  // geometries, with the state side compressed onto an orthonormalized
  // family of smooth probes (boundary rows excluded: Dirichlet injection
  // pins them to the data).
  VectorXd ws = U.w.array().sqrt();
  if (U.interior.size() == (size_t)U.w.size())
    for (int i = 0; i < ws.size(); ++i)
      if (!U.interior[i]) ws[i] = 0.0;
  MatrixXd psi = ws.asDiagonal() * smooth_probes(dom);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(psi);
  qr.setThreshold(1e-10);
  int rank = (int)qr.rank();
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(psi.rows(), rank);

  int blocks = U.ut.size() > 0 ? 2 : 1;
  MatrixXcd c(blocks * rank, U.u.cols());
  c.topRows(rank) = q.transpose().cast<cplx>() * (ws.asDiagonal() * U.u);
  if (blocks == 2) c.bottomRows(rank) = q.transpose().cast<cplx>() * (ws.asDiagonal() * U.ut);

  Eigen::LLT<MatrixXd> g(U.gram);
  MatrixXcd lt = MatrixXd(g.matrixL()).transpose().cast<cplx>();
  MatrixXcd cn = lt.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(c);

  Eigen::JacobiSVD<MatrixXcd> svd(cn);
  const auto& sv = svd.singularValues();
  ControlMargin m;
  m.sigma_max = sv.size() > 0 ? sv(0) : 0.0;
  m.sigma_min = (int)cn.cols() < (int)cn.rows() ? 0.0 : (sv.size() > 0 ? sv(sv.size() - 1) : 0.0);
  return m;
}

LocalizedSourcePlan localized_sources(const DiscreteDomain& dom, const ControlMap& U,
                                      const LocalizationPlan& plan, double alpha,
                                      double target_tol) {
  LocalizedSourcePlan out;
  out.plan = plan;
  out.margin = controllability_margin(dom, U);
  out.margin_warning = out.margin.sigma_min < 1e-2 * out.margin.sigma_max;
  if (alpha <= 0.0) alpha = 1e-6 * out.margin.sigma_max * out.margin.sigma_max;
  out.alpha = alpha;

  int nj = (int)plan.js.size();
  int n = dom.n_nodes();
  out.f.resize(nj);
  out.u_T.resize(n, nj);
  out.norm_f.resize(nj);
  out.xj_measure.resize(nj);
  out.c_bound.resize(nj);
  out.support_residual.resize(nj);
  out.pairing.resize(nj);

  MatrixXcd atw = U.u.adjoint() * U.w.asDiagonal();
  Eigen::LDLT<MatrixXcd> fac((atw * U.u + alpha * U.gram.cast<cplx>()).eval());

  for (int idx = 0; idx < nj; ++idx) {
    const NodeSet& xj = plan.Xj[idx];
    if (xj.count() == 0) throw ConfigError("empty localization set");
    double measure = 0.0;
    for (int i = 0; i < n; ++i)
      if (xj.mask[i]) measure += dom.vol_w[i];
    VectorXcd target = VectorXcd::Zero(n);
    for (int i = 0; i < n; ++i)
      if (xj.mask[i]) target[i] = 1.0 / measure;

    VectorXcd f = fac.solve((atw * target).eval());
    VectorXcd uT = U.u * f;
    out.f[idx] = f;
    out.u_T.col(idx) = uT;
    out.xj_measure[idx] = measure;
    out.norm_f[idx] = std::sqrt(std::max(0.0, (f.adjoint() * U.gram.cast<cplx>() * f)(0).real()));
    out.c_bound[idx] = out.norm_f[idx] * std::sqrt(measure);

    auto band = dilate(dom, dilate(dom, xj.mask));
    double inside = 0.0, total = 0.0;
    for (int i = 0; i < n; ++i) {
      double m2 = dom.vol_w[i] * std::norm(uT[i]);
      total += m2;
      if (band[i]) inside += m2;
    }
    out.support_residual[idx] = total > 0.0 ? std::sqrt((total - inside) / total) : 0.0;
    out.pairing[idx] = pair_volume(dom, uT, VectorXcd::Ones(n));
  }
  out.pairing_converged = sequence_converged(out.pairing, 10.0 * target_tol);
  return out;
}

VectorXcd pairing_sequence(const DiscreteDomain& dom, const LocalizedSourcePlan& lsp,
                           const VectorXcd& psi) {
  int nj = (int)lsp.u_T.cols();
  VectorXcd out(nj);
  for (int idx = 0; idx < nj; ++idx) out[idx] = pair_volume(dom, lsp.u_T.col(idx), psi);
  return out;
}

bool sequence_converged(const VectorXcd& seq, double tol) {
  int n = (int)seq.size();
  if (n < 2) return false;
  int lo = std::max(0, n - 5);
  double worst = 0.0;
  for (int i = lo; i < n; ++i)
    for (int k = i + 1; k < n; ++k) worst = std::max(worst, std::abs(seq[i] - seq[k]));
  return worst <= tol;
}

SupportCheck support_test(const DiscreteDomain& dom, const SpaceTimeField& kf,
                          const SpaceTimeCap& cap, double tau) {
  if (cap.elems != kf.elems) throw ConfigError("cap and field supports differ");
  if (std::abs(cap.horizon - kf.time.T) > 1e-9 * std::max(1.0, cap.horizon))
    throw ConfigError("cap horizon does not match the field");
  SupportCheck out;
  double kn = norm_spacetime(dom, kf);
  if (kn == 0.0) {
    out.pass = true;
    return out;
  }
  const TimeGrid& g = kf.time;
  const double pi = 3.14159265358979323846;
  for (size_t pos = 0; pos < cap.elems.size(); ++pos) {
    double depth = cap.horizon - cap.t_open[pos];
    if (depth <= 0.0) continue;
    for (int k = 0; k < 3; ++k) {
      double width = depth / (1 << k);
      if (width < 2.0 * g.dt) break;
      double a = cap.horizon - width;
      auto phi = zero_field(g, kf.elems);
      for (int m = 0; m <= g.nt; ++m) {
        double s = (g.t(m) - a) / width;
        if (s > 0.0 && s < 1.0) {
          double sn = std::sin(pi * s);
          phi.vals(m, (int)pos) = sn * sn;
        }
      }
      double pn = norm_spacetime(dom, phi);
      if (pn == 0.0) continue;
      double r = std::abs(pair_spacetime(dom, phi, kf)) / (pn * kn);
      out.residual = std::max(out.residual, r);
    }
  }
  out.pass = out.residual <= tau;
  return out;
}

bool subset_oracle(const DiscreteDomain& dom, const ConnectingOperator& K,
                   const std::vector<int>& v_nodes, const HeightProfile& h1,
                   const HeightProfile& h2, double T, double tau, double* rho_max) {
  if (K.basis.nodes != v_nodes || K.v_nodes != v_nodes)
    throw ConfigError("operator patches do not match the oracle's node set");
  if (h1.h.size() != v_nodes.size() || h2.h.size() != v_nodes.size())
    throw ConfigError("height profile size does not match the node set");
  if (std::abs(T - K.grid.T) > 1e-9 * std::max(1.0, T))
    throw ConfigError("horizon does not match the operator");

  int cols = (int)K.mat.cols(), nv = (int)v_nodes.size(), n = K.basis.time.n;
  const TimeGrid& g = K.grid;

  // Pairing table M(i, j) = <basis_i, K basis_j> with the trapezoid rule.
  MatrixXcd M = MatrixXcd::Zero(cols, cols);
  for (int i = 0; i < cols; ++i) {
    int e = i / n, l = i % n;
    int node = v_nodes[e];
    double ew = dom.is_boundary[node] ? dom.surf_w[node] : dom.vol_w[node];
    int m_lo = std::max(0, l * K.basis.time.stride);
    int m_hi = std::min(g.nt, (l + 2) * K.basis.time.stride);
    for (int m = m_lo; m <= m_hi; ++m) {
      double hv = hat_value(K.basis.time, l, g.t(m));
      if (hv == 0.0) continue;
      double wm = (m == 0 || m == g.nt) ? 0.5 : 1.0;
      M.row(i) += (hv * wm * g.dt * ew) * K.mat.row(m * nv + e);
    }
  }

  // Hat l is admissible for height h iff its support sits inside (T-h, T].
  auto admissible = [&](const HeightProfile& h) {
    std::vector<int> idx;
    for (int j = 0; j < cols; ++j) {
      int e = j / n, l = j % n;
      double lo = l * K.basis.time.delta;
      if (lo >= T - h.h[e] - 1e-12) idx.push_back(j);
    }
    return idx;
  };
  auto idx1 = admissible(h1), idx2 = admissible(h2);

  double worst = 0.0;
  if (!idx1.empty()) {
    MatrixXcd Mt = M.transpose();
    MatrixXcd A(cols, (int)idx2.size());
    for (size_t k = 0; k < idx2.size(); ++k) A.col((int)k) = Mt.col(idx2[k]);
    Eigen::ColPivHouseholderQR<MatrixXcd> qr;
    if (A.cols() > 0) qr.compute(A);
    double mscale = Mt.norm();
    for (int j : idx1) {
      VectorXcd b = Mt.col(j);
      double bn = b.norm();
      if (bn <= 1e-14 * mscale) continue;
      double rn = A.cols() > 0 ? (b - A * qr.solve(b)).norm() : bn;
      worst = std::max(worst, rn / bn);
    }
  }
  if (rho_max) *rho_max = worst;
  return worst <= tau;
}

}  // namespace bc

#include "bc/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bc {

namespace {

double node_speed(const DiscreteDomain& dom, int i) { return dom.metric.speed(i); }

// One-sided second-order first derivative: (-3 f0 + 4 f1 - f2) / (2h).
cplx one_sided_1(cplx f0, cplx f1, cplx f2, double h) {
  return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
}
// One-sided second-order second derivative: (2 f0 - 5 f1 + 4 f2 - f3) / h^2.
cplx one_sided_2(cplx f0, cplx f1, cplx f2, cplx f3, double h) {
  return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h);
}

}  // namespace

double cfl_limit(const DiscreteDomain& dom) {
  double lim = std::numeric_limits<double>::infinity();
  switch (dom.kind) {
    case DomainKind::Interval:
      for (int i = 0; i <= dom.nx; ++i) lim = std::min(lim, dom.dx / node_speed(dom, i));
      return lim;
    case DomainKind::Rectangle: {
      int n = dom.n_nodes();
      for (int i = 0; i < n; ++i) lim = std::min(lim, dom.dx / (std::sqrt(2.0) * node_speed(dom, i)));
      return lim;
    }
    case DomainKind::Disk: {
      double dr = dom.dx;
      lim = dr / (std::sqrt(2.0) * node_speed(dom, 0));  // center stencil
      for (int i = 1; i <= dom.nr; ++i) {
        double hth = i * dr * dom.dtheta;
        double cell = 1.0 / std::sqrt(1.0 / (dr * dr) + 1.0 / (hth * hth));
        for (int j = 0; j < dom.ntheta; ++j)
          lim = std::min(lim, cell / node_speed(dom, dom.disk_id(i, j)));
      }
      return lim;
    }
  }
  return lim;
}

TimeGrid make_time_grid(const DiscreteDomain& dom, double T, double cfl) {
  if (T <= 0.0) throw ConfigError("make_time_grid: horizon must be positive");
  if (cfl <= 0.0 || cfl > 1.0) throw ConfigError("make_time_grid: cfl factor out of (0,1]");
  double dt0 = cfl * cfl_limit(dom);
  TimeGrid g;
  g.nt = std::max(2, (int)std::ceil(T / dt0 * (1.0 - 1e-12)));
  g.dt = T / g.nt;
  g.T = T;
  return g;
}

std::pair<TimeGrid, TimeGrid> make_time_grid_pair(const DiscreteDomain& dom, double T,
                                                  double cfl) {
  TimeGrid half = make_time_grid(dom, T, cfl);
  TimeGrid full;
  full.nt = 2 * half.nt;
  full.dt = half.dt;
  full.T = 2.0 * T;
  return {half, full};
}

CoefficientField make_coefficients(const DiscreteDomain& dom, VectorXcd ax, VectorXcd ay,
                                   VectorXcd q) {
  int n = dom.n_nodes();
  CoefficientField c;
  c.ax = ax.size() ? std::move(ax) : VectorXcd::Zero(n).eval();
  c.ay = ay.size() ? std::move(ay) : VectorXcd::Zero(n).eval();
  c.q = q.size() ? std::move(q) : VectorXcd::Zero(n).eval();
  if ((int)c.ax.size() != n || (int)c.ay.size() != n || (int)c.q.size() != n)
    throw ConfigError("make_coefficients: field size mismatch");
  c.q_ad = c.q - div_g(dom, c.ax, c.ay);
  return c;
}

CoefficientField zero_coefficients(const DiscreteDomain& dom) {
  return make_coefficients(dom, {}, {}, {});
}

// ---- differential operators ----

void gradient(const DiscreteDomain& dom, const VectorXcd& f, VectorXcd& gx, VectorXcd& gy) {
  int n = dom.n_nodes();
  gx = VectorXcd::Zero(n);
  gy = VectorXcd::Zero(n);
  switch (dom.kind) {
    case DomainKind::Interval: {
      double h = dom.dx;
      for (int i = 1; i < dom.nx; ++i) gx[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
      gx[0] = one_sided_1(f[0], f[1], f[2], h);
      gx[dom.nx] = -one_sided_1(f[dom.nx], f[dom.nx - 1], f[dom.nx - 2], h);
      return;
    }
    case DomainKind::Rectangle: {
      double h = dom.dx;
      for (int j = 0; j <= dom.ny; ++j)
        for (int i = 0; i <= dom.nx; ++i) {
          int id = dom.rect_id(i, j);
          if (i == 0)
            gx[id] = one_sided_1(f[id], f[dom.rect_id(1, j)], f[dom.rect_id(2, j)], h);
          else if (i == dom.nx)
            gx[id] = -one_sided_1(f[id], f[dom.rect_id(i - 1, j)], f[dom.rect_id(i - 2, j)], h);
          else
            gx[id] = (f[dom.rect_id(i + 1, j)] - f[dom.rect_id(i - 1, j)]) / (2.0 * h);
          if (j == 0)
            gy[id] = one_sided_1(f[id], f[dom.rect_id(i, 1)], f[dom.rect_id(i, 2)], h);
          else if (j == dom.ny)
            gy[id] = -one_sided_1(f[id], f[dom.rect_id(i, j - 1)], f[dom.rect_id(i, j - 2)], h);
          else
            gy[id] = (f[dom.rect_id(i, j + 1)] - f[dom.rect_id(i, j - 1)]) / (2.0 * h);
        }
      return;
    }
    case DomainKind::Disk: {
      double dr = dom.dx, dth = dom.dtheta;
      // center: first-order plane fit through ring 1
      cplx fx0 = 0.0, fy0 = 0.0;
      for (int j = 0; j < dom.ntheta; ++j) {
        double th = j * dth;
        fx0 += f[dom.disk_id(1, j)] * std::cos(th);
        fy0 += f[dom.disk_id(1, j)] * std::sin(th);
      }
      gx[0] = 2.0 * fx0 / (double)dom.ntheta / dr;
      gy[0] = 2.0 * fy0 / (double)dom.ntheta / dr;
      for (int i = 1; i <= dom.nr; ++i) {
        double r = i * dr;
        for (int j = 0; j < dom.ntheta; ++j) {
          int id = dom.disk_id(i, j);
          cplx fr;
          if (i == dom.nr)
            fr = -one_sided_1(f[id], f[dom.disk_id(i - 1, j)], f[dom.disk_id(i - 2, j)], dr);
          else {
            cplx inner = i == 1 ? f[0] : f[dom.disk_id(i - 1, j)];
            fr = (f[dom.disk_id(i + 1, j)] - inner) / (2.0 * dr);
          }
          cplx fth = (f[dom.disk_id(i, j + 1)] - f[dom.disk_id(i, j - 1 + dom.ntheta)]) / (2.0 * dth);
          double th = j * dth, ct = std::cos(th), st = std::sin(th);
          gx[id] = ct * fr - st * fth / r;
          gy[id] = st * fr + ct * fth / r;
        }
      }
      return;
    }
  }
}

VectorXcd grad_g_x(const DiscreteDomain& dom, const VectorXcd& f) {
  VectorXcd gx, gy;
  gradient(dom, f, gx, gy);
  if (!dom.metric.euclidean())
    for (int i = 0; i < dom.n_nodes(); ++i) gx[i] *= dom.metric.c[i] * dom.metric.c[i];
  return gx;
}

VectorXcd grad_g_y(const DiscreteDomain& dom, const VectorXcd& f) {
  VectorXcd gx, gy;
  gradient(dom, f, gx, gy);
  if (!dom.metric.euclidean())
    for (int i = 0; i < dom.n_nodes(); ++i) gy[i] *= dom.metric.c[i] * dom.metric.c[i];
  return gy;
}

VectorXcd div_g(const DiscreteDomain& dom, const VectorXcd& ax, const VectorXcd& ay) {
  int n = dom.n_nodes();
  // div_g X = c^d d_j (c^-d X^j) for g = c^-2 dx^2 in dimension d
  VectorXcd hx = ax, hy = ay;
  if (!dom.metric.euclidean()) {
    for (int i = 0; i < n; ++i) {
      double cc = dom.metric.c[i];
      double w = dom.dim() == 1 ? cc : cc * cc;
      hx[i] /= w;
      hy[i] /= w;
    }
  }
  VectorXcd gxx, gxy, gyx, gyy;
  gradient(dom, hx, gxx, gxy);
  VectorXcd out = gxx;
  if (dom.dim() == 2) {
    gradient(dom, hy, gyx, gyy);
    out += gyy;
  }
  if (!dom.metric.euclidean())
    for (int i = 0; i < n; ++i) {
      double cc = dom.metric.c[i];
      out[i] *= dom.dim() == 1 ? cc : cc * cc;
    }
  return out;
}

VectorXcd laplace_g(const DiscreteDomain& dom, const VectorXcd& f) {
  int n = dom.n_nodes();
  VectorXcd out = VectorXcd::Zero(n);
  switch (dom.kind) {
    case DomainKind::Interval: {
      double h2 = dom.dx * dom.dx;
      auto c = [&](int i) { return node_speed(dom, i); };
      for (int i = 1; i < dom.nx; ++i) {
        double ce = 0.5 * (c(i) + c(i + 1)), cw = 0.5 * (c(i) + c(i - 1));
        out[i] = c(i) * (ce * (f[i + 1] - f[i]) - cw * (f[i] - f[i - 1])) / h2;
      }
      // one-sided non-conservative form at the ends: c^2 f'' + c c' f'
      auto ends = [&](int i, int d) {
        cplx f1 = one_sided_1(f[i], f[i + d], f[i + 2 * d], d * dom.dx);
        cplx f2 = one_sided_2(f[i], f[i + d], f[i + 2 * d], f[i + 3 * d], dom.dx);
        double cp = std::real(one_sided_1(c(i), c(i + d), c(i + 2 * d), d * dom.dx));
        out[i] = c(i) * c(i) * f2 + c(i) * cp * f1;
      };
      ends(0, 1);
      ends(dom.nx, -1);
      return out;
    }
    case DomainKind::Rectangle: {
      double h2 = dom.dx * dom.dx;
      for (int j = 0; j <= dom.ny; ++j)
        for (int i = 0; i <= dom.nx; ++i) {
          int id = dom.rect_id(i, j);
          cplx fxx, fyy;
          if (i == 0)
            fxx = one_sided_2(f[id], f[dom.rect_id(1, j)], f[dom.rect_id(2, j)],
                              f[dom.rect_id(3, j)], dom.dx);
          else if (i == dom.nx)
            fxx = one_sided_2(f[id], f[dom.rect_id(i - 1, j)], f[dom.rect_id(i - 2, j)],
                              f[dom.rect_id(i - 3, j)], dom.dx);
          else
            fxx = (f[dom.rect_id(i + 1, j)] - 2.0 * f[id] + f[dom.rect_id(i - 1, j)]) / h2;
          if (j == 0)
            fyy = one_sided_2(f[id], f[dom.rect_id(i, 1)], f[dom.rect_id(i, 2)],
                              f[dom.rect_id(i, 3)], dom.dx);
          else if (j == dom.ny)
            fyy = one_sided_2(f[id], f[dom.rect_id(i, j - 1)], f[dom.rect_id(i, j - 2)],
                              f[dom.rect_id(i, j - 3)], dom.dx);
          else
            fyy = (f[dom.rect_id(i, j + 1)] - 2.0 * f[id] + f[dom.rect_id(i, j - 1)]) / h2;
          double cc = node_speed(dom, id);
          out[id] = cc * cc * (fxx + fyy);  // 2D conformal: Delta_g = c^2 Delta
        }
      return out;
    }
    case DomainKind::Disk: {
      double dr = dom.dx, dth = dom.dtheta;
      cplx mean1 = 0.0;
      for (int j = 0; j < dom.ntheta; ++j) mean1 += f[dom.disk_id(1, j)];
      mean1 /= (double)dom.ntheta;
      double c0 = node_speed(dom, 0);
      out[0] = c0 * c0 * 4.0 * (mean1 - f[0]) / (dr * dr);
      for (int i = 1; i <= dom.nr; ++i) {
        double r = i * dr;
        for (int j = 0; j < dom.ntheta; ++j) {
          int id = dom.disk_id(i, j);
          cplx frr, fr;
          if (i == dom.nr) {
            int m1 = dom.disk_id(i - 1, j), m2 = dom.disk_id(i - 2, j), m3 = dom.disk_id(i - 3, j);
            frr = one_sided_2(f[id], f[m1], f[m2], f[m3], dr);
            fr = -one_sided_1(f[id], f[m1], f[m2], dr);
          } else {
            cplx inner = i == 1 ? f[0] : f[dom.disk_id(i - 1, j)];
            frr = (f[dom.disk_id(i + 1, j)] - 2.0 * f[id] + inner) / (dr * dr);
            fr = (f[dom.disk_id(i + 1, j)] - inner) / (2.0 * dr);
          }
          cplx ftt = (f[dom.disk_id(i, j + 1)] - 2.0 * f[id] + f[dom.disk_id(i, j - 1 + dom.ntheta)]) /
                     (dth * dth);
          double cc = node_speed(dom, id);
          out[id] = cc * cc * (frr + fr / r + ftt / (r * r));
        }
      }
      return out;
    }
  }
  return out;
}

// ---- sample containers and pairings ----

SpaceTimeField zero_field(const TimeGrid& time, std::vector<int> elems) {
  SpaceTimeField f;
  f.time = time;
  f.vals = MatrixXcd::Zero(time.samples(), (int)elems.size());
  f.elems = std::move(elems);
  return f;
}

cplx pair_volume(const DiscreteDomain& dom, const VectorXcd& a, const VectorXcd& b) {
  cplx s = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i) s += dom.vol_w[i] * a[i] * b[i];
  return s;
}

double norm_volume(const DiscreteDomain& dom, const VectorXcd& a) {
  double s = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i) s += dom.vol_w[i] * std::norm(a[i]);
  return std::sqrt(s);
}

namespace {
double elem_weight(const DiscreteDomain& dom, int node) {
  return dom.is_boundary[node] ? dom.surf_w[node] : dom.vol_w[node];
}
}  // namespace

cplx pair_spacetime(const DiscreteDomain& dom, const SpaceTimeField& a, const SpaceTimeField& b) {
  if (a.elems != b.elems || a.time.nt != b.time.nt)
    throw ConfigError("pair_spacetime: mismatched supports");
  cplx s = 0.0;
  for (int e = 0; e < (int)a.elems.size(); ++e) {
    cplx se = 0.0;
    for (int m = 0; m <= a.time.nt; ++m) {
      double wt = (m == 0 || m == a.time.nt) ? 0.5 : 1.0;
      se += wt * a.vals(m, e) * b.vals(m, e);
    }
    s += se * a.time.dt * elem_weight(dom, a.elems[e]);
  }
  return s;
}

double norm_spacetime(const DiscreteDomain& dom, const SpaceTimeField& a) {
  double s = 0.0;
  for (int e = 0; e < (int)a.elems.size(); ++e) {
    double se = 0.0;
    for (int m = 0; m <= a.time.nt; ++m) {
      double wt = (m == 0 || m == a.time.nt) ? 0.5 : 1.0;
      se += wt * std::norm(a.vals(m, e));
    }
    s += se * a.time.dt * elem_weight(dom, a.elems[e]);
  }
  return std::sqrt(s);
}

double field_energy(const DiscreteDomain& dom, const CoefficientField& coeff, const VectorXcd& u,
                    const VectorXcd& ut) {
  VectorXcd gx, gy;
  gradient(dom, u, gx, gy);
  double e = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i) {
    double cc = node_speed(dom, i);
    double grad2 = std::norm(gx[i]) + (dom.dim() == 2 ? std::norm(gy[i]) : 0.0);
    e += dom.vol_w[i] *
         (std::norm(ut[i]) + cc * cc * grad2 + std::real(coeff.q[i]) * std::norm(u[i]));
  }
  return 0.5 * e;
}

}  // namespace bc

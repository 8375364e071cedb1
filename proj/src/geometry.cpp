#include "bc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace bc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double slowness(const DiscreteDomain& dom, int n) { return 1.0 / dom.metric.speed(n); }

// Grid edges used by graph distances. Offsets give a 16-neighborhood in index
// space (knight moves included) to keep the metric anisotropy error small.
const int kOffsets[][2] = {{1, 0},  {0, 1},  {1, 1},  {1, -1}, {2, 1},  {1, 2},  {2, -1}, {1, -2},
                           {-1, 0}, {0, -1}, {-1, -1}, {-1, 1}, {-2, -1}, {-1, -2}, {-2, 1}, {-1, 2}};

template <class F>
void for_each_neighbor(const DiscreteDomain& dom, int n, F&& f) {
  switch (dom.kind) {
    case DomainKind::Interval: {
      if (n > 0) f(n - 1);
      if (n < dom.nx) f(n + 1);
      return;
    }
    case DomainKind::Rectangle: {
      int i = n % (dom.nx + 1), j = n / (dom.nx + 1);
      for (auto& o : kOffsets) {
        int ii = i + o[0], jj = j + o[1];
        if (ii >= 0 && ii <= dom.nx && jj >= 0 && jj <= dom.ny) f(dom.rect_id(ii, jj));
      }
      return;
    }
    case DomainKind::Disk: {
      if (n == 0) {
        for (int j = 0; j < dom.ntheta; ++j) f(dom.disk_id(1, j));
        return;
      }
      int i = (n - 1) / dom.ntheta + 1, j = (n - 1) % dom.ntheta;
      for (auto& o : kOffsets) {
        int ii = i + o[0];
        if (ii < 0 || ii > dom.nr) continue;
        if (ii == 0) {
          f(0);
          continue;
        }
        f(dom.disk_id(ii, j + o[1]));
      }
      return;
    }
  }
}

double edge_len(const DiscreteDomain& dom, int a, int b) {
  double l = norm(dom.xy[a] - dom.xy[b]);
  if (!dom.metric.euclidean()) l *= 0.5 * (slowness(dom, a) + slowness(dom, b));
  return l;
}

// Multi-source Dijkstra over an optional node mask.
VectorXd dijkstra(const DiscreteDomain& dom, const std::vector<int>& seeds,
                  const std::vector<std::uint8_t>* mask) {
  int n = dom.n_nodes();
  VectorXd dist = VectorXd::Constant(n, kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  for (int s : seeds) {
    if (mask && !(*mask)[s]) continue;
    if (dist[s] > 0.0) {
      dist[s] = 0.0;
      pq.push({0.0, s});
    }
  }
  // Seeds outside the mask still seed their masked neighbors.
  if (mask) {
    for (int s : seeds) {
      if ((*mask)[s]) continue;
      for_each_neighbor(dom, s, [&](int m) {
        if (!(*mask)[m]) return;
        double d = edge_len(dom, s, m);
        if (d < dist[m]) {
          dist[m] = d;
          pq.push({d, m});
        }
      });
    }
  }
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for_each_neighbor(dom, u, [&](int v) {
      if (mask && !(*mask)[v]) return;
      double nd = d + edge_len(dom, u, v);
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.push({nd, v});
      }
    });
  }
  return dist;
}

// 1D conformal distance: cumulative integral of the slowness.
VectorXd interval_conformal_prefix(const DiscreteDomain& dom) {
  VectorXd pre(dom.n_nodes());
  pre[0] = 0.0;
  for (int i = 1; i < dom.n_nodes(); ++i)
    pre[i] = pre[i - 1] + dom.dx * 0.5 * (slowness(dom, i - 1) + slowness(dom, i));
  return pre;
}

}  // namespace

// ---- builders ----

double DiscreteDomain::spacing() const {
  switch (kind) {
    case DomainKind::Interval:
    case DomainKind::Rectangle:
      return dx;
    case DomainKind::Disk:
      return std::max(dx, dtheta);  // outermost ring has the widest cells
  }
  return dx;
}

double DiscreteDomain::local_spacing(int node) const {
  if (kind != DomainKind::Disk) return dx;
  if (node == 0) return dx;
  int i = (node - 1) / ntheta + 1;
  return std::max(dx, i * dx * dtheta);
}

double DiscreteDomain::max_speed() const {
  if (metric.euclidean()) return 1.0;
  return *std::max_element(metric.c.begin(), metric.c.end());
}

Vec2 DiscreteDomain::inward_normal(int node) const {
  if (!is_boundary[node]) throw ConfigError("inward_normal: node is not on the boundary");
  switch (kind) {
    case DomainKind::Interval:
      return node == 0 ? Vec2{1.0, 0.0} : Vec2{-1.0, 0.0};
    case DomainKind::Disk: {
      Vec2 p = xy[node];
      double r = norm(p);
      return {-p.x / r, -p.y / r};
    }
    case DomainKind::Rectangle: {
      int i = node % (nx + 1), j = node / (nx + 1);
      double vx = 0.0, vy = 0.0;
      if (i == 0) vx += 1.0;
      if (i == nx) vx -= 1.0;
      if (j == 0) vy += 1.0;
      if (j == ny) vy -= 1.0;
      double n = std::sqrt(vx * vx + vy * vy);
      return {vx / n, vy / n};
    }
  }
  return {0.0, 0.0};
}

DiscreteDomain make_interval(int nx, double length, std::vector<double> c) {
  if (nx < 4) throw ConfigError("make_interval: need at least 4 cells");
  DiscreteDomain d;
  d.kind = DomainKind::Interval;
  d.nx = nx;
  d.length = length;
  d.dx = length / nx;
  d.metric.c = std::move(c);
  if (!d.metric.c.empty() && (int)d.metric.c.size() != nx + 1)
    throw ConfigError("make_interval: conformal factor size mismatch");
  d.xy.resize(nx + 1);
  d.is_boundary.assign(nx + 1, 0);
  d.vol_w.assign(nx + 1, d.dx);
  d.surf_w.assign(nx + 1, 0.0);
  for (int i = 0; i <= nx; ++i) d.xy[i] = {i * d.dx, 0.0};
  d.vol_w[0] = d.vol_w[nx] = 0.5 * d.dx;
  if (!d.metric.euclidean())
    for (int i = 0; i <= nx; ++i) d.vol_w[i] /= d.metric.c[i];
  d.is_boundary[0] = d.is_boundary[nx] = 1;
  d.boundary_nodes = {0, nx};
  d.surf_w[0] = d.surf_w[nx] = 1.0;  // counting measure on endpoint patches
  d.normal_in.resize(d.n_nodes());
  for (int b : d.boundary_nodes) d.normal_in[b] = d.inward_normal(b);
  return d;
}

DiscreteDomain make_rectangle(int nx, int ny, double lx, double ly, std::vector<double> c) {
  if (nx < 4 || ny < 4) throw ConfigError("make_rectangle: need at least 4x4 cells");
  double hx = lx / nx, hy = ly / ny;
  if (std::abs(hx - hy) > 1e-12 * std::max(hx, hy))
    throw ConfigError("make_rectangle: cells must be square");
  DiscreteDomain d;
  d.kind = DomainKind::Rectangle;
  d.nx = nx;
  d.ny = ny;
  d.dx = hx;
  d.length = lx;
  d.metric.c = std::move(c);
  int n = (nx + 1) * (ny + 1);
  if (!d.metric.c.empty() && (int)d.metric.c.size() != n)
    throw ConfigError("make_rectangle: conformal factor size mismatch");
  d.xy.resize(n);
  d.is_boundary.assign(n, 0);
  d.vol_w.assign(n, hx * hx);
  d.surf_w.assign(n, 0.0);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) d.xy[d.rect_id(i, j)] = {i * hx, j * hx};
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      int id = d.rect_id(i, j);
      double w = 1.0;
      if (i == 0 || i == nx) w *= 0.5;
      if (j == 0 || j == ny) w *= 0.5;
      d.vol_w[id] *= w;
      if (i == 0 || i == nx || j == 0 || j == ny) {
        d.is_boundary[id] = 1;
        d.surf_w[id] = hx;  // corners carry a half cell from each adjacent side
      }
    }
  // boundary walk, counter-clockwise from the origin corner
  for (int i = 0; i <= nx; ++i) d.boundary_nodes.push_back(d.rect_id(i, 0));
  for (int j = 1; j <= ny; ++j) d.boundary_nodes.push_back(d.rect_id(nx, j));
  for (int i = nx - 1; i >= 0; --i) d.boundary_nodes.push_back(d.rect_id(i, ny));
  for (int j = ny - 1; j >= 1; --j) d.boundary_nodes.push_back(d.rect_id(0, j));
  if (!d.metric.euclidean())
    for (int id = 0; id < n; ++id) {
      double cc = d.metric.c[id];
      d.vol_w[id] /= cc * cc;
      if (d.surf_w[id] > 0.0) d.surf_w[id] /= cc;
    }
  d.normal_in.resize(n);
  for (int b : d.boundary_nodes) d.normal_in[b] = d.inward_normal(b);
  return d;
}

DiscreteDomain make_disk(int nr, int ntheta, std::vector<double> c) {
  if (nr < 4 || ntheta < 8) throw ConfigError("make_disk: need nr >= 4, ntheta >= 8");
  DiscreteDomain d;
  d.kind = DomainKind::Disk;
  d.nr = nr;
  d.ntheta = ntheta;
  d.dx = 1.0 / nr;
  d.dtheta = 2.0 * M_PI / ntheta;
  d.length = 1.0;
  d.metric.c = std::move(c);
  int n = 1 + nr * ntheta;
  if (!d.metric.c.empty() && (int)d.metric.c.size() != n)
    throw ConfigError("make_disk: conformal factor size mismatch");
  d.xy.resize(n);
  d.is_boundary.assign(n, 0);
  d.vol_w.assign(n, 0.0);
  d.surf_w.assign(n, 0.0);
  d.xy[0] = {0.0, 0.0};
  d.vol_w[0] = M_PI * 0.25 * d.dx * d.dx;
  for (int i = 1; i <= nr; ++i) {
    double r = i * d.dx;
    for (int j = 0; j < ntheta; ++j) {
      int id = d.disk_id(i, j);
      double th = j * d.dtheta;
      d.xy[id] = {r * std::cos(th), r * std::sin(th)};
      d.vol_w[id] = (i == nr ? 0.5 : 1.0) * r * d.dx * d.dtheta;
      if (i == nr) {
        d.is_boundary[id] = 1;
        d.surf_w[id] = d.dtheta;  // radius 1
      }
    }
  }
  for (int j = 0; j < ntheta; ++j) d.boundary_nodes.push_back(d.disk_id(nr, j));
  if (!d.metric.euclidean())
    for (int id = 0; id < n; ++id) {
      double cc = d.metric.c[id];
      d.vol_w[id] /= cc * cc;
      if (d.surf_w[id] > 0.0) d.surf_w[id] /= cc;
    }
  d.normal_in.resize(n);
  for (int b : d.boundary_nodes) d.normal_in[b] = d.inward_normal(b);
  return d;
}

// ---- node sets and patches ----

std::vector<int> NodeSet::nodes() const {
  std::vector<int> out;
  for (int i = 0; i < (int)mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

int NodeSet::count() const {
  int c = 0;
  for (auto m : mask) c += m != 0;
  return c;
}

NodeSet make_node_set(const DiscreteDomain& dom, const std::vector<int>& ids) {
  NodeSet s;
  s.mask.assign(dom.n_nodes(), 0);
  for (int id : ids) {
    if (id < 0 || id >= dom.n_nodes()) throw ConfigError("make_node_set: node id out of range");
    s.mask[id] = 1;
  }
  return s;
}

BoundaryPatch make_patch(const DiscreteDomain& dom, const std::vector<int>& ids, PatchRole role) {
  BoundaryPatch p;
  p.role = role;
  for (int id : ids) {
    if (id < 0 || id >= dom.n_nodes() || !dom.is_boundary[id])
      throw ConfigError("make_patch: node " + std::to_string(id) + " is not a boundary node");
    p.nodes.push_back(id);
  }
  if (p.nodes.empty()) throw ConfigError("make_patch: empty patch");
  return p;
}

bool patches_disjoint(const BoundaryPatch& a, const BoundaryPatch& b) {
  for (int x : a.nodes)
    for (int y : b.nodes)
      if (x == y) return false;
  return true;
}

// ---- distances ----

VectorXd distance_map(const DiscreteDomain& dom, const std::vector<int>& seeds) {
  if (seeds.empty()) throw ConfigError("distance_map: empty seed set");
  int n = dom.n_nodes();
  if (dom.kind == DomainKind::Interval && !dom.metric.euclidean()) {
    VectorXd pre = interval_conformal_prefix(dom);
    VectorXd out = VectorXd::Constant(n, kInf);
    for (int s : seeds)
      for (int i = 0; i < n; ++i) out[i] = std::min(out[i], std::abs(pre[i] - pre[s]));
    return out;
  }
  if (!dom.metric.euclidean()) return dijkstra(dom, seeds, nullptr);
  // Convex Euclidean domains: chord distances are exact.
  VectorXd out(n);
  par_for(n, [&](std::int64_t i) {
    double best = kInf;
    for (int s : seeds) best = std::min(best, norm(dom.xy[i] - dom.xy[s]));
    out[i] = best;
  });
  return out;
}

VectorXd distance_map_restricted(const DiscreteDomain& dom, const std::vector<int>& seeds,
                                 const std::vector<std::uint8_t>& mask) {
  if (seeds.empty()) throw ConfigError("distance_map_restricted: empty seed set");
  return dijkstra(dom, seeds, &mask);
}

MatrixXd distance_rows(const DiscreteDomain& dom, const std::vector<int>& seeds) {
  int n = dom.n_nodes(), m = (int)seeds.size();
  MatrixXd rows(m, n);
  if (dom.metric.euclidean()) {
    par_for(m, [&](std::int64_t e) {
      for (int i = 0; i < n; ++i) rows(e, i) = norm(dom.xy[i] - dom.xy[seeds[e]]);
    });
    return rows;
  }
  if (dom.kind == DomainKind::Interval) {
    VectorXd pre = interval_conformal_prefix(dom);
    for (int e = 0; e < m; ++e)
      for (int i = 0; i < n; ++i) rows(e, i) = std::abs(pre[i] - pre[seeds[e]]);
    return rows;
  }
  par_for(m, [&](std::int64_t e) { rows.row(e) = dijkstra(dom, {seeds[e]}, nullptr).transpose(); });
  return rows;
}

MatrixXd distance_rows_restricted(const DiscreteDomain& dom, const std::vector<int>& seeds,
                                  const std::vector<std::uint8_t>& mask) {
  int n = dom.n_nodes(), m = (int)seeds.size();
  MatrixXd rows(m, n);
  par_for(m, [&](std::int64_t e) {
    rows.row(e) = dijkstra(dom, {seeds[(int)e]}, &mask).transpose();
  });
  return rows;
}

double boundary_distance(const DiscreteDomain& dom, int a, int b) {
  if (!dom.is_boundary[a] || !dom.is_boundary[b])
    throw ConfigError("boundary_distance: not boundary nodes");
  if (a == b) return 0.0;
  if (dom.kind == DomainKind::Interval) return kInf;  // two components
  // Arclength positions along the boundary walk.
  const auto& walk = dom.boundary_nodes;
  int m = (int)walk.size();
  std::vector<double> pos(m + 1, 0.0);
  for (int k = 0; k < m; ++k) {
    int u = walk[k], v = walk[(k + 1) % m];
    pos[k + 1] = pos[k] + edge_len(dom, u, v);
  }
  double total = pos[m];
  double pa = -1, pb = -1;
  for (int k = 0; k < m; ++k) {
    if (walk[k] == a) pa = pos[k];
    if (walk[k] == b) pb = pos[k];
  }
  double d = std::abs(pa - pb);
  return std::min(d, total - d);
}

BoundaryPatch boundary_ball(const DiscreteDomain& dom, int y, double eps, PatchRole role) {
  BoundaryPatch p;
  p.role = role;
  for (int b : dom.boundary_nodes)
    if (boundary_distance(dom, y, b) <= eps * (1.0 + 1e-12)) p.nodes.push_back(b);
  if (p.nodes.empty()) throw ConfigError("boundary_ball: empty ball");
  return p;
}

// ---- domains of influence ----

NodeSet domain_of_influence(const DiscreteDomain& dom, const std::vector<int>& v_nodes,
                            const HeightProfile& h, double tol, const MatrixXd* rows) {
  if (v_nodes.size() != h.h.size()) throw ConfigError("domain_of_influence: profile size mismatch");
  MatrixXd local;
  if (!rows) {
    local = distance_rows(dom, v_nodes);
    rows = &local;
  }
  int n = dom.n_nodes(), m = (int)v_nodes.size();
  NodeSet out;
  out.mask.assign(n, 0);
  par_for(n, [&](std::int64_t i) {
    double best = kInf;
    for (int e = 0; e < m; ++e) best = std::min(best, (*rows)(e, i) - h.h[e]);
    out.mask[i] = best <= tol ? 1 : 0;
  });
  return out;
}

NodeSet domain_of_influence(const DiscreteDomain& dom, const std::vector<int>& v_nodes,
                            double h_const, double tol, const MatrixXd* rows) {
  HeightProfile h;
  h.h.assign(v_nodes.size(), h_const);
  return domain_of_influence(dom, v_nodes, h, tol, rows);
}

SpaceTimeCap space_time_cap(const std::vector<int>& v_nodes, const HeightProfile& h,
                            double horizon) {
  if (v_nodes.size() != h.h.size()) throw ConfigError("space_time_cap: profile size mismatch");
  SpaceTimeCap cap;
  cap.horizon = horizon;
  cap.elems = v_nodes;
  cap.t_open.resize(v_nodes.size());
  for (size_t e = 0; e < v_nodes.size(); ++e)
    cap.t_open[e] = std::clamp(horizon - h.h[e], 0.0, horizon);
  return cap;
}

double set_diameter(const DiscreteDomain& dom, const NodeSet& s, ExecPolicy pol) {
  // Euclidean chord diameter of the node set.
  auto ids = s.nodes();
  int k = (int)ids.size();
  if (k < 2) return 0.0;
  std::vector<double> rowmax(k, 0.0);
  par_for(pol, k, [&](std::int64_t i) {
    double best = 0.0;
    for (int j = 0; j < k; ++j) best = std::max(best, norm(dom.xy[ids[i]] - dom.xy[ids[j]]));
    rowmax[i] = best;
  });
  double d = 0.0;
  for (double v : rowmax) d = std::max(d, v);
  return d;
}

std::vector<int> mask_rim(const DiscreteDomain& dom, const std::vector<std::uint8_t>& mask) {
  std::vector<int> rim;
  for (int nnode = 0; nnode < dom.n_nodes(); ++nnode) {
    if (!mask[nnode]) continue;
    bool edge = false;
    for_each_neighbor(dom, nnode, [&](int v) {
      if (!mask[v]) edge = true;
    });
    if (edge) rim.push_back(nnode);
  }
  return rim;
}

bool masks_agree_within_band(const DiscreteDomain& dom, const NodeSet& a, const NodeSet& b,
                             double band_cells) {
  std::vector<int> rims = mask_rim(dom, a.mask);
  auto rb = mask_rim(dom, b.mask);
  rims.insert(rims.end(), rb.begin(), rb.end());
  for (int i = 0; i < dom.n_nodes(); ++i) {
    if (a.mask[i] == b.mask[i]) continue;
    double lim = band_cells * dom.local_spacing(i);
    double best = kInf;
    for (int r : rims) {
      best = std::min(best, norm(dom.xy[i] - dom.xy[r]));
      if (best <= lim) break;
    }
    if (best > lim) return false;
  }
  return true;
}

// ---- boundary normal geometry ----

namespace {

bool inside_domain(const DiscreteDomain& dom, Vec2 p, double slack) {
  switch (dom.kind) {
    case DomainKind::Interval:
      return p.x >= -slack && p.x <= dom.length + slack;
    case DomainKind::Rectangle:
      return p.x >= -slack && p.x <= dom.nx * dom.dx + slack && p.y >= -slack &&
             p.y <= dom.ny * dom.dx + slack;
    case DomainKind::Disk:
      return norm(p) <= 1.0 + slack;
  }
  return false;
}

// Bilinear interpolation of the conformal factor.
double interp_c(const DiscreteDomain& dom, Vec2 p) {
  if (dom.metric.euclidean()) return 1.0;
  switch (dom.kind) {
    case DomainKind::Interval: {
      double u = std::clamp(p.x / dom.dx, 0.0, (double)dom.nx);
      int i = std::min((int)u, dom.nx - 1);
      double f = u - i;
      return (1 - f) * dom.metric.c[i] + f * dom.metric.c[i + 1];
    }
    case DomainKind::Rectangle: {
      double u = std::clamp(p.x / dom.dx, 0.0, (double)dom.nx);
      double v = std::clamp(p.y / dom.dx, 0.0, (double)dom.ny);
      int i = std::min((int)u, dom.nx - 1), j = std::min((int)v, dom.ny - 1);
      double fu = u - i, fv = v - j;
      auto C = [&](int a, int b) { return dom.metric.c[dom.rect_id(a, b)]; };
      return (1 - fu) * (1 - fv) * C(i, j) + fu * (1 - fv) * C(i + 1, j) +
             (1 - fu) * fv * C(i, j + 1) + fu * fv * C(i + 1, j + 1);
    }
    case DomainKind::Disk: {
      double r = norm(p);
      if (r < 1e-12) return dom.metric.c[0];
      double th = std::atan2(p.y, p.x);
      if (th < 0) th += 2 * M_PI;
      double u = std::min(r / dom.dx, (double)dom.nr);
      double v = th / dom.dtheta;
      int i = std::min((int)u, dom.nr - 1), j = (int)v % dom.ntheta;
      double fu = u - i, fv = v - j;
      auto C = [&](int a, int b) {
        if (a == 0) return dom.metric.c[0];
        return dom.metric.c[dom.disk_id(a, b)];
      };
      return (1 - fu) * (1 - fv) * C(i, j) + fu * (1 - fv) * C(i + 1, j) +
             (1 - fu) * fv * C(i, j + 1) + fu * fv * C(i + 1, j + 1);
    }
  }
  return 1.0;
}

Vec2 grad_c2(const DiscreteDomain& dom, Vec2 p) {
  double h = 0.25 * dom.spacing();
  auto c2 = [&](Vec2 q) {
    double c = interp_c(dom, q);
    return c * c;
  };
  double gx = (c2({p.x + h, p.y}) - c2({p.x - h, p.y})) / (2 * h);
  double gy = dom.dim() == 1 ? 0.0 : (c2({p.x, p.y + h}) - c2({p.x, p.y - h})) / (2 * h);
  return {gx, gy};
}

}  // namespace

NormalRay normal_ray(const DiscreteDomain& dom, int y, double smax, double ds) {
  if (!dom.is_boundary[y]) throw ConfigError("normal_ray: y must be a boundary node");
  if (ds <= 0.0) ds = 0.25 * dom.spacing();
  NormalRay ray;
  Vec2 x = dom.xy[y];
  Vec2 nhat = dom.inward_normal(y);
  double c0 = dom.metric.speed(y);
  // Unit covector wrt g: p = nhat / c.
  Vec2 p{nhat.x / c0, nhat.y / c0};
  ray.points.push_back(x);
  ray.s.push_back(0.0);
  double slack = 1e-9;
  double s = 0.0;
  while (s < smax) {
    if (dom.metric.euclidean()) {
      x = x + ds * nhat;
    } else {
      // Geodesic flow of g = c^{-2} dx^2: dx/dt = c^2 p, dp/dt = -grad(c^2) |p|^2 / 2.
      auto f = [&](Vec2 q, Vec2 w, Vec2& dq, Vec2& dw) {
        double c2 = interp_c(dom, q);
        c2 *= c2;
        dq = {c2 * w.x, c2 * w.y};
        Vec2 g = grad_c2(dom, q);
        double w2 = dot(w, w);
        dw = {-0.5 * g.x * w2, -0.5 * g.y * w2};
      };
      Vec2 k1q, k1p, k2q, k2p, k3q, k3p, k4q, k4p;
      f(x, p, k1q, k1p);
      f(x + 0.5 * ds * k1q, p + 0.5 * ds * k1p, k2q, k2p);
      f(x + 0.5 * ds * k2q, p + 0.5 * ds * k2p, k3q, k3p);
      f(x + ds * k3q, p + ds * k3p, k4q, k4p);
      x = x + (ds / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
      p = p + (ds / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    }
    s += ds;
    if (!inside_domain(dom, x, slack)) {
      ray.exit_s = s;
      return ray;
    }
    ray.points.push_back(x);
    ray.s.push_back(s);
  }
  ray.exit_s = smax;
  return ray;
}

double cut_distance(const DiscreteDomain& dom, const BoundaryPatch& gamma, int y, double ds) {
  if (ds <= 0.0) ds = 0.25 * dom.spacing();
  NormalRay ray = normal_ray(dom, y, 4.0 * dom.length + 4.0, ds);
  double tol = std::max(ds, dom.spacing());
  VectorXd dist_gamma;
  if (!dom.metric.euclidean()) dist_gamma = distance_map(dom, gamma.nodes);
  double best = 0.0;
  for (size_t k = 1; k < ray.points.size(); ++k) {
    double d;
    if (dom.metric.euclidean()) {
      d = kInf;
      for (int z : gamma.nodes) d = std::min(d, norm(ray.points[k] - dom.xy[z]));
    } else {
      // Nearest-node lookup of the precomputed map (first order).
      double bestn = kInf;
      int arg = 0;
      for (int i = 0; i < dom.n_nodes(); ++i) {
        double e = norm(ray.points[k] - dom.xy[i]);
        if (e < bestn) {
          bestn = e;
          arg = i;
        }
      }
      d = dist_gamma[arg];
    }
    if (std::abs(d - ray.s[k]) <= tol) best = ray.s[k];
  }
  return best;
}

int normal_point_node(const DiscreteDomain& dom, int y, double s) {
  NormalRay ray = normal_ray(dom, y, s, 0.25 * dom.spacing());
  Vec2 p = ray.points.back();
  double best = kInf;
  int arg = -1;
  for (int i = 0; i < dom.n_nodes(); ++i) {
    double d = norm(p - dom.xy[i]);
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  return arg;
}

// ---- localization plans ----

LocalizationPlan localization_plan(const DiscreteDomain& dom, const BoundaryPatch& R,
                                   int y_node, double s, double eps, double eps_prime,
                                   int x_node, const std::vector<int>& js) {
  if (!(eps_prime < eps)) throw ConfigError("localization_plan: need eps_prime < eps");
  if (js.empty()) throw ConfigError("localization_plan: empty j list");
  for (size_t k = 1; k < js.size(); ++k)
    if (js[k] <= js[k - 1]) throw ConfigError("localization_plan: js must increase");
  LocalizationPlan plan;
  plan.y_node = y_node;
  plan.x_node = x_node;
  plan.eps = eps;
  plan.eps_prime = eps_prime;
  plan.s = s;
  plan.js = js;
  plan.gamma = boundary_ball(dom, y_node, eps, R.role);
  for (int g : plan.gamma.nodes) {
    bool in = false;
    for (int r : R.nodes) in = in || r == g;
    if (!in) throw ConfigError("localization_plan: boundary ball leaves the receiver patch");
  }
  // Cylinder membership: |s_x - s| <= eps' and boundary foot within eps' of y.
  double tol = 0.75 * dom.spacing();
  VectorXd d_bdry = distance_map(dom, dom.boundary_nodes);
  double s_x = d_bdry[x_node];
  if (std::abs(s_x - s) > eps_prime + tol)
    throw ConfigError("localization_plan: target depth outside the cylinder");
  double best = kInf;
  int foot = -1;
  for (int b : dom.boundary_nodes) {
    double d = dom.kind == DomainKind::Interval && !dom.metric.euclidean()
                   ? distance_map(dom, {b})[x_node]
                   : norm(dom.xy[x_node] - dom.xy[b]);
    if (d < best) {
      best = d;
      foot = b;
    }
  }
  if (boundary_distance(dom, foot, y_node) > eps_prime + tol)
    throw ConfigError("localization_plan: target foot outside the cylinder");

  plan.cap_patch = R;
  MatrixXd rows_gamma = distance_rows(dom, plan.gamma.nodes);
  MatrixXd rows_cap = distance_rows(dom, plan.cap_patch.nodes);
  double half = 0.5 * dom.spacing();
  int n = dom.n_nodes();
  plan.X.mask.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    double dmin = kInf;
    for (int e = 0; e < (int)plan.gamma.nodes.size(); ++e) dmin = std::min(dmin, rows_gamma(e, i));
    plan.X.mask[i] = dmin < s + eps - half ? 1 : 0;  // interior: strict
  }
  plan.d_cap_x.resize(plan.cap_patch.nodes.size());
  for (size_t e = 0; e < plan.cap_patch.nodes.size(); ++e)
    plan.d_cap_x[e] = rows_cap(e, x_node);
  for (int j : js) {
    HeightProfile hj;
    hj.h.resize(plan.d_cap_x.size());
    for (size_t e = 0; e < plan.d_cap_x.size(); ++e) hj.h[e] = plan.d_cap_x[e] - 1.0 / j;
    NodeSet cut = domain_of_influence(dom, plan.cap_patch.nodes, hj, half, &rows_cap);
    NodeSet xj;
    xj.mask.assign(n, 0);
    for (int i = 0; i < n; ++i) xj.mask[i] = plan.X.mask[i] && !cut.mask[i] ? 1 : 0;
    if (!xj.contains(x_node))
      throw NumericalError("localization_plan: target fell out of X_j at j=" + std::to_string(j));
    plan.Xj.push_back(std::move(xj));
  }
  return plan;
}

// ---- foliations ----

double lens_distance(Vec2 a, Vec2 b, Vec2 c, double rho) {
  Vec2 ca = a - c, cb = b - c;
  double ra = norm(ca), rb = norm(cb);
  // Segment-blocked test: closest point of segment ab to c.
  Vec2 ab = b - a;
  double t = norm(ab) < 1e-15 ? 0.0 : std::clamp(-dot(a - c, ab) / dot(ab, ab), 0.0, 1.0);
  Vec2 closest = a + t * (b - a);
  if (norm(closest - c) >= rho * (1.0 - 1e-12)) return norm(a - b);
  // Endpoints within a grid cell of the circle are snapped onto it, so the
  // unobstructed path wraps from the surface.
  ra = std::max(ra, rho);
  rb = std::max(rb, rho);
  double ang = std::acos(std::clamp(dot(ca, cb) / (norm(ca) * norm(cb) + 1e-300), -1.0, 1.0));
  double wrap = ang - std::acos(std::clamp(rho / ra, -1.0, 1.0)) -
                std::acos(std::clamp(rho / rb, -1.0, 1.0));
  wrap = std::max(wrap, 0.0);
  return std::sqrt(std::max(ra * ra - rho * rho, 0.0)) +
         std::sqrt(std::max(rb * rb - rho * rho, 0.0)) + rho * wrap;
}

std::vector<FoliationSlice> foliation_slices(const DiscreteDomain& dom, const FoliationSpec& spec) {
  if (spec.s_values.empty()) throw ConfigError("foliation_slices: no s values");
  for (size_t k = 1; k < spec.s_values.size(); ++k)
    if (spec.s_values[k] <= spec.s_values[k - 1])
      throw ConfigError("foliation_slices: s values must increase");
  std::vector<FoliationSlice> out;
  int n = dom.n_nodes();
  double half = 0.5 * dom.spacing();
  if (spec.kind == FoliationSpec::Kind::Interval) {
    if (dom.kind != DomainKind::Interval) throw ConfigError("foliation_slices: kind mismatch");
    for (double s : spec.s_values) {
      FoliationSlice sl;
      sl.s = s;
      int i_s = (int)std::lround((dom.length - s * dom.length) / dom.dx);
      i_s = std::clamp(i_s, 0, dom.nx);
      sl.omega.mask.assign(n, 0);
      sl.m_ext.mask.assign(n, 0);
      for (int i = 0; i <= dom.nx; ++i) {
        if (i > i_s && i < dom.nx) sl.omega.mask[i] = 1;
        if (i <= i_s) sl.m_ext.mask[i] = 1;
      }
      sl.sigma = {i_s};
      if (i_s < dom.nx) sl.r_s = {dom.nx};
      out.push_back(std::move(sl));
    }
    return out;
  }
  if (dom.kind != DomainKind::Disk) throw ConfigError("foliation_slices: arc leaves need a disk");
  for (double s : spec.s_values) {
    FoliationSlice sl;
    sl.s = s;
    double rho = spec.rho_max + s * (spec.rho_min - spec.rho_max);
    sl.has_arc = true;
    sl.arc_center = spec.center;
    sl.arc_rho = rho;
    sl.omega.mask.assign(n, 0);
    sl.m_ext.mask.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      double q = norm(dom.xy[i] - spec.center) - rho;
      bool bdry = dom.is_boundary[i];
      if (!bdry && std::abs(q) <= half) sl.sigma.push_back(i);
      if (q > half) {
        if (bdry)
          sl.r_s.push_back(i);
        else
          sl.omega.mask[i] = 1;
      } else {
        sl.m_ext.mask[i] = 1;  // includes the leaf band
      }
    }
    if (sl.sigma.empty()) throw ConfigError("foliation_slices: empty leaf at s=" + std::to_string(s));
    out.push_back(std::move(sl));
  }
  return out;
}

HeightProfile foliation_tilde_h(const DiscreteDomain& dom, const FoliationSlice& slice,
                                const HeightProfile& h_on_sigma,
                                std::vector<int>& omega_closure_nodes) {
  if (h_on_sigma.h.size() != slice.sigma.size())
    throw ConfigError("foliation_tilde_h: profile size mismatch");
  // Closure of omega: omega plus sigma plus its boundary trace.
  std::vector<std::uint8_t> closure = slice.omega.mask;
  for (int z : slice.sigma) closure[z] = 1;
  for (int z : slice.r_s) closure[z] = 1;
  omega_closure_nodes.clear();
  for (int i = 0; i < dom.n_nodes(); ++i)
    if (closure[i]) omega_closure_nodes.push_back(i);

  // Boundary of omega as a set: sigma plus r_s (the interface and outer trace).
  std::vector<int> bdry = slice.sigma;
  bdry.insert(bdry.end(), slice.r_s.begin(), slice.r_s.end());

  bool exact = slice.has_arc && dom.metric.euclidean();
  MatrixXd d_sigma, d_bdry;
  if (!exact) {
    d_sigma = distance_rows_restricted(dom, slice.sigma, closure);
    d_bdry.resize(0, 0);
  }
  VectorXd d_to_bdry;
  if (!exact) d_to_bdry = distance_map_restricted(dom, bdry, closure);

  HeightProfile th;
  th.h.resize(omega_closure_nodes.size());
  par_for((std::int64_t)omega_closure_nodes.size(), [&](std::int64_t k) {
    int y = omega_closure_nodes[k];
    double sup = -kInf;
    for (size_t e = 0; e < slice.sigma.size(); ++e) {
      double d = exact ? lens_distance(dom.xy[slice.sigma[e]], dom.xy[y], slice.arc_center,
                                       slice.arc_rho)
                       : d_sigma((int)e, y);
      sup = std::max(sup, h_on_sigma.h[e] - d);
    }
    double db;
    if (exact) {
      db = kInf;
      for (int z : bdry)
        db = std::min(db, lens_distance(dom.xy[y], dom.xy[z], slice.arc_center, slice.arc_rho));
    } else {
      db = d_to_bdry[y];
    }
    th.h[k] = std::max(sup, db);
  });
  return th;
}

}  // namespace bc

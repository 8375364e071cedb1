// Discrete domains (interval, rectangle, polar disk), boundary patches,
// distance maps, domains of influence, space-time caps, boundary normal
// geometry, localization plans and foliations.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bc/exec.hpp"
#include "bc/types.hpp"

namespace bc {

enum class DomainKind { Interval, Rectangle, Disk };
enum class PatchRole { Source, Receiver, Other };

// Conformally Euclidean metric g = c^{-2} dx^2, wave speed c > 0 per node.
// Empty c means c == 1 (Euclidean).
struct Metric {
  std::vector<double> c;
  bool euclidean() const { return c.empty(); }
  double speed(int node) const { return euclidean() ? 1.0 : c[node]; }
};

struct DiscreteDomain {
  DomainKind kind = DomainKind::Interval;
  // Interval: nx cells on [0, length]. Rectangle: nx x ny square cells.
  // Disk: nr radial rings, ntheta sectors, radius 1, node 0 at the center.
  int nx = 0, ny = 0, nr = 0, ntheta = 0;
  double dx = 0.0, dtheta = 0.0, length = 1.0;

  std::vector<Vec2> xy;
  std::vector<std::uint8_t> is_boundary;
  std::vector<int> boundary_nodes;        // ordered walk of the boundary
  std::vector<Vec2> normal_in;            // Euclidean unit inward normal (boundary nodes)
  std::vector<double> vol_w;              // L2(M, dV_g) quadrature weights
  std::vector<double> surf_w;             // boundary quadrature weights (dS_g)
  Metric metric;

  int n_nodes() const { return static_cast<int>(xy.size()); }
  int dim() const { return kind == DomainKind::Interval ? 1 : 2; }
  // Disk node indexing: ring i in [1, nr], sector j in [0, ntheta).
  int disk_id(int i, int j) const { return 1 + (i - 1) * ntheta + ((j % ntheta) + ntheta) % ntheta; }
  int rect_id(int i, int j) const { return j * (nx + 1) + i; }

  // Characteristic spacing used for mask tolerances.
  double spacing() const;
  double local_spacing(int node) const;
  double max_speed() const;

  // Euclidean inward unit normal for a boundary node.
  Vec2 inward_normal(int node) const;
};

DiscreteDomain make_interval(int nx, double length = 1.0, std::vector<double> c = {});
DiscreteDomain make_rectangle(int nx, int ny, double lx, double ly, std::vector<double> c = {});
DiscreteDomain make_disk(int nr, int ntheta, std::vector<double> c = {});

struct NodeSet {
  std::vector<std::uint8_t> mask;
  std::vector<int> nodes() const;
  int count() const;
  bool contains(int n) const { return n >= 0 && n < (int)mask.size() && mask[n]; }
};

NodeSet make_node_set(const DiscreteDomain& dom, const std::vector<int>& ids);

struct BoundaryPatch {
  std::vector<int> nodes;  // ordered along the boundary
  PatchRole role = PatchRole::Other;
};

// Validates node ids are boundary nodes and patches are disjoint where required.
BoundaryPatch make_patch(const DiscreteDomain& dom, const std::vector<int>& ids, PatchRole role);
bool patches_disjoint(const BoundaryPatch& a, const BoundaryPatch& b);

// Heights h attached elementwise to a patch or node-set listing.
struct HeightProfile {
  std::vector<double> h;
};

// Space-time set { (t, y_e) : t_open[e] < t <= horizon } over listed elements.
struct SpaceTimeCap {
  double horizon = 0.0;
  std::vector<int> elems;
  std::vector<double> t_open;  // horizon - h(e), clamped to [0, horizon]
  bool contains(double t, int pos) const { return t > t_open[pos] && t <= horizon; }
};

// ---- distances ----

// Geodesic distance from the seed set to every node. Exact chord/segment
// distances for Euclidean kinds (all three are convex); first-order
// Dijkstra fast marching on the grid graph for conformal metrics.
VectorXd distance_map(const DiscreteDomain& dom, const std::vector<int>& seeds);

// Distance restricted to a node mask (graph metric on the masked subgraph,
// O(dx) accurate). Seeds must intersect the mask's closure.
VectorXd distance_map_restricted(const DiscreteDomain& dom, const std::vector<int>& seeds,
                                 const std::vector<std::uint8_t>& mask);

// Pairwise distances d(seed_e, node) as a |seeds| x n matrix.
MatrixXd distance_rows(const DiscreteDomain& dom, const std::vector<int>& seeds);
MatrixXd distance_rows_restricted(const DiscreteDomain& dom, const std::vector<int>& seeds,
                                  const std::vector<std::uint8_t>& mask);

// Distance along the boundary between two boundary nodes.
double boundary_distance(const DiscreteDomain& dom, int a, int b);
// Boundary-metric ball around node y, as an ordered patch.
BoundaryPatch boundary_ball(const DiscreteDomain& dom, int y, double eps, PatchRole role = PatchRole::Other);

// ---- domains of influence ----

// M(V, h) = { x : min_e (d(x, v_e) - h[e]) <= tol }, tol = spacing/2 by default.
// rows may be precomputed with distance_rows to amortize repeated calls.
NodeSet domain_of_influence(const DiscreteDomain& dom, const std::vector<int>& v_nodes,
                            const HeightProfile& h, double tol,
                            const MatrixXd* rows = nullptr);
NodeSet domain_of_influence(const DiscreteDomain& dom, const std::vector<int>& v_nodes,
                            double h_const, double tol, const MatrixXd* rows = nullptr);

SpaceTimeCap space_time_cap(const std::vector<int>& v_nodes, const HeightProfile& h, double horizon);

double set_diameter(const DiscreteDomain& dom, const NodeSet& s, ExecPolicy pol = default_policy());

// Nodes of the mask adjacent to a node outside it (or to the domain boundary of the mask).
std::vector<int> mask_rim(const DiscreteDomain& dom, const std::vector<std::uint8_t>& mask);
// True if every node of the symmetric difference lies within band_cells * local
// spacing of the rim of either mask.
bool masks_agree_within_band(const DiscreteDomain& dom, const NodeSet& a, const NodeSet& b,
                             double band_cells);

// ---- boundary normal geometry ----

struct NormalRay {
  std::vector<Vec2> points;  // samples from the boundary point inward
  std::vector<double> s;     // g-arclength of each sample
  double exit_s = 0.0;       // arclength where the ray leaves the domain (or cap)
};

// Ray s -> gamma(s; y, nu) from boundary node y along the inward normal,
// integrated as a geodesic for conformal metrics (RK4, step ds).
NormalRay normal_ray(const DiscreteDomain& dom, int y, double smax, double ds);

// Largest s in (0, exit] with d(gamma(s), Gamma) = s, within tolerance dx.
double cut_distance(const DiscreteDomain& dom, const BoundaryPatch& gamma, int y, double ds = 0.0);

// Point at depth s along the inward normal from boundary node y; nearest node id.
int normal_point_node(const DiscreteDomain& dom, int y, double s);

// ---- localization plans ----

struct LocalizationPlan {
  BoundaryPatch gamma;       // B_dM(y, eps), inside the receiver patch
  BoundaryPatch cap_patch;   // patch carrying h_j caps (the receiver patch)
  int y_node = -1;
  int x_node = -1;
  double eps = 0.0, eps_prime = 0.0, s = 0.0;
  std::vector<int> js;
  NodeSet X;                 // M(gamma, s + eps) interior
  std::vector<NodeSet> Xj;   // X minus M(cap_patch, d(.,x) - 1/j)
  std::vector<double> d_cap_x;  // d(z, x) for z in cap_patch
};

// Builds the shrinking-set plan for target x at boundary-normal depth s under y.
// Requires eps_prime < eps, the boundary ball inside patch R, and x inside the
// cylinder of half-width eps_prime around (s, y).
LocalizationPlan localization_plan(const DiscreteDomain& dom, const BoundaryPatch& R,
                                   int y_node, double s, double eps, double eps_prime,
                                   int x_node, const std::vector<int>& js);

// ---- foliations ----

struct FoliationSpec {
  enum class Kind { Interval, DiskArcs } kind = Kind::Interval;
  std::vector<double> s_values;  // increasing in (0, 1]
  // DiskArcs: leaves are arcs |x - center| = rho(s), rho affine from rho_max
  // down to rho_min; R is the boundary part cut out at rho_min.
  Vec2 center{0.0, -2.0};
  double rho_max = 3.0, rho_min = 1.45;
};

struct FoliationSlice {
  double s = 0.0;
  NodeSet omega;             // the cleared region behind the leaf (open side toward R)
  NodeSet m_ext;             // M_s = complement of omega and its boundary trace
  std::vector<int> sigma;    // leaf nodes (interior interface)
  std::vector<int> r_s;      // boundary nodes of the omega side
  // Set for circular-arc leaves: paths inside cl(omega) must wrap this circle.
  bool has_arc = false;
  Vec2 arc_center{0.0, 0.0};
  double arc_rho = 0.0;
};

// Shortest path between a and b avoiding the open disk |x - c| < rho
// (tangent-arc-tangent when the segment is blocked). Exact for Euclidean lens
// regions between the circle and a convex outer boundary.
double lens_distance(Vec2 a, Vec2 b, Vec2 c, double rho);

std::vector<FoliationSlice> foliation_slices(const DiscreteDomain& dom, const FoliationSpec& spec);

// tilde_h(y) = max( max_z (h[z] - d_{cl(omega)}(z, y)), d_{cl(omega)}(y, boundary of omega) )
// for y in cl(omega); returned aligned with `omega_closure_nodes`.
HeightProfile foliation_tilde_h(const DiscreteDomain& dom, const FoliationSlice& slice,
                                const HeightProfile& h_on_sigma,
                                std::vector<int>& omega_closure_nodes);

}  // namespace bc

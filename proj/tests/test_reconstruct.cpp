#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "bc/control.hpp"
#include "bc/reconstruct.hpp"
#include "bc/response.hpp"
#include "bc/wave.hpp"

using namespace bc;

namespace {

const double kPi = 3.14159265358979323846;

OperatorCoefficients constant_op(const DiscreteDomain& dom, cplx ax, cplx q) {
  CoefficientField c = make_coefficients(dom, VectorXcd::Constant(dom.n_nodes(), ax), {},
                                         VectorXcd::Constant(dom.n_nodes(), q));
  return truth_coefficients(dom, c);
}

NodeSet full_region(const DiscreteDomain& dom) {
  NodeSet s;
  s.mask.assign(dom.n_nodes(), 1);
  return s;
}

}  // namespace

TEST_CASE("exponential gauge on the interval produces constant coefficients") {
  auto dom = make_interval(400);
  OperatorCoefficients zero = constant_op(dom, 0.0, 0.0);
  VectorXcd kap(dom.n_nodes());
  for (int i = 0; i < dom.n_nodes(); ++i) kap[i] = std::exp(dom.xy[i].x);
  GaugeField g{kap, make_node_set(dom, {})};
  OperatorCoefficients out = apply_gauge(dom, zero, g);
  CHECK(out.provenance == Provenance::Gauged);
  double ea = 0.0, eq = 0.0;
  for (int i = 2; i <= dom.nx - 2; ++i) {
    ea = std::max(ea, std::abs(out.ax[i] - cplx(2.0)));
    eq = std::max(eq, std::abs(out.q[i] - cplx(-1.0)));
  }
  CHECK(ea < 5e-4);
  CHECK(eq < 5e-4);

  SUBCASE("unit gauge is the identity") {
    OperatorCoefficients id = apply_gauge(dom, zero, unit_gauge(dom, make_node_set(dom, {0})));
    CHECK(id.ax.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(id.q.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
}

TEST_CASE("gauge transforms compose and invert") {
  auto dom = make_interval(240);
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n), k1(n), k2(n);
  for (int i = 0; i < n; ++i) {
    double x = dom.xy[i].x;
    ax[i] = cplx(0.4 * std::sin(2.0 * kPi * x), 0.1 * x);
    q[i] = cplx(std::cos(kPi * x), 0.2 * x);
    k1[i] = std::exp(cplx(0.3 * std::sin(kPi * x), 0.1 * x * x));
    k2[i] = std::exp(cplx(-0.2 * x * (1.0 - x), 0.15 * std::cos(kPi * x)));
  }
  OperatorCoefficients c = truth_coefficients(dom, make_coefficients(dom, ax, {}, q));
  NodeSet anc = make_node_set(dom, {});
  OperatorCoefficients two_steps =
      apply_gauge(dom, apply_gauge(dom, c, GaugeField{k1, anc}), GaugeField{k2, anc});
  OperatorCoefficients one_step =
      apply_gauge(dom, c, GaugeField{k1.cwiseProduct(k2), anc});
  double worst = 0.0;
  for (int i = 3; i <= dom.nx - 3; ++i)
    worst = std::max({worst, std::abs(two_steps.ax[i] - one_step.ax[i]),
                      std::abs(two_steps.q[i] - one_step.q[i])});
  CHECK(worst < 2e-3);

  OperatorCoefficients back =
      apply_gauge(dom, apply_gauge(dom, c, GaugeField{k1, anc}),
                  GaugeField{k1.cwiseInverse(), anc});
  double rt = 0.0;
  for (int i = 3; i <= dom.nx - 3; ++i)
    rt = std::max({rt, std::abs(back.ax[i] - c.ax[i]), std::abs(back.q[i] - c.q[i])});
  CHECK(rt < 2e-3);

  SUBCASE("vanishing gauge is rejected") {
    VectorXcd bad = k1;
    bad[n / 2] = 0.0;
    CHECK_THROWS_AS(apply_gauge(dom, c, GaugeField{bad, anc}), ConfigError);
    CHECK_THROWS_AS(make_gauge(dom, bad, anc), ConfigError);
  }
  SUBCASE("anchor violation is rejected") {
    CHECK_THROWS_AS(make_gauge(dom, k1, make_node_set(dom, {0})), ConfigError);
  }
}

TEST_CASE("plane exponential gauge on a rectangle") {
  auto dom = make_rectangle(24, 18, 1.0, 0.75);
  OperatorCoefficients zero = constant_op(dom, 0.0, 0.0);
  int n = dom.n_nodes();
  VectorXcd kap(n);
  for (int i = 0; i < n; ++i) kap[i] = std::exp(0.4 * dom.xy[i].x + 0.25 * dom.xy[i].y);
  OperatorCoefficients out = apply_gauge(dom, zero, GaugeField{kap, make_node_set(dom, {})});
  double ea = 0.0, eq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = dom.xy[i].x, y = dom.xy[i].y;
    if (x < 0.12 || x > 0.88 || y < 0.1 || y > 0.65) continue;
    ea = std::max({ea, std::abs(out.ax[i] - cplx(0.8)), std::abs(out.ay[i] - cplx(0.5))});
    eq = std::max(eq, std::abs(out.q[i] - cplx(-(0.16 + 0.0625))));
  }
  CHECK(ea < 2e-3);
  CHECK(eq < 2e-3);
}

TEST_CASE("coefficient field round trip respects the region") {
  auto dom = make_interval(50);
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n);
  for (int i = 0; i < n; ++i) {
    ax[i] = cplx(std::sin(3.0 * dom.xy[i].x), 0.3);
    q[i] = cplx(dom.xy[i].x, -0.5);
  }
  OperatorCoefficients c = truth_coefficients(dom, make_coefficients(dom, ax, {}, q));
  std::vector<int> half;
  for (int i = 10; i <= 30; ++i) half.push_back(i);
  c.region = make_node_set(dom, half);
  CoefficientField f = to_coefficient_field(dom, c);
  CHECK(f.ax[20] == ax[20]);
  CHECK(f.q[20] == q[20]);
  CHECK(std::abs(f.ax[5]) == 0.0);
  CHECK(std::abs(f.q[45]) == 0.0);
}

TEST_CASE("orbit comparison separates distinct operators and finds witnesses") {
  auto dom = make_interval(200);
  NodeSet anchor = make_node_set(dom, {dom.nx});

  SUBCASE("distinct potentials are not related") {
    OrbitWitness w =
        orbit_equivalent(dom, constant_op(dom, 0.0, 0.0), constant_op(dom, 0.0, 1.0), anchor);
    CHECK(!w.equivalent);
    CHECK(w.q_residual > 0.5);
  }
  SUBCASE("the exponential orbit is recognized with the right witness") {
    OrbitWitness w =
        orbit_equivalent(dom, constant_op(dom, 0.0, 0.0), constant_op(dom, 2.0, -1.0), anchor);
    CHECK(w.equivalent);
    CHECK(w.a_residual < 0.01);
    CHECK(w.q_residual < 0.01);
    double we = 0.0;
    for (int i = 0; i <= dom.nx; ++i)
      we = std::max(we, std::abs(w.witness.kappa[i] - std::exp(dom.xy[i].x - 1.0)));
    CHECK(we < 1e-3);
  }
  SUBCASE("the relation is symmetric") {
    OrbitWitness w =
        orbit_equivalent(dom, constant_op(dom, 2.0, -1.0), constant_op(dom, 0.0, 0.0), anchor);
    CHECK(w.equivalent);
    double we = 0.0;
    for (int i = 0; i <= dom.nx; ++i)
      we = std::max(we, std::abs(w.witness.kappa[i] - std::exp(1.0 - dom.xy[i].x)));
    CHECK(we < 1e-3);
  }
  SUBCASE("reflexive up to round-off") {
    auto c = constant_op(dom, cplx(0.7, 0.2), cplx(-0.3, 0.4));
    OrbitWitness w = orbit_equivalent(dom, c, c, anchor);
    CHECK(w.equivalent);
    CHECK(w.a_residual < 1e-10);
  }
  SUBCASE("disconnected shared region throws") {
    auto c1 = constant_op(dom, 0.0, 0.0);
    auto c2 = constant_op(dom, 0.0, 0.0);
    std::vector<int> blob;
    for (int i = 0; i <= 40; ++i) blob.push_back(i);
    for (int i = 160; i <= dom.nx; ++i) blob.push_back(i);
    c1.region = make_node_set(dom, blob);
    c2.region = c1.region;
    CHECK_THROWS_AS(orbit_equivalent(dom, c1, c2, anchor), ConfigError);
  }
}

TEST_CASE("rotational first-order difference fails the loop test") {
  auto dom = make_rectangle(30, 30, 1.0, 1.0);
  int n = dom.n_nodes();
  OperatorCoefficients c1 = constant_op(dom, 0.0, 0.0);
  VectorXcd ax(n), ay(n), q = VectorXcd::Zero(n);
  for (int i = 0; i < n; ++i) {
    ax[i] = -0.8 * (dom.xy[i].y - 0.5);
    ay[i] = 0.8 * (dom.xy[i].x - 0.5);
  }
  CoefficientField f = make_coefficients(dom, ax, ay, q);
  OperatorCoefficients c2 = truth_coefficients(dom, f);
  std::vector<int> edge;
  for (int i = 0; i < n; ++i)
    if (dom.is_boundary[i]) edge.push_back(i);
  OrbitWitness w = orbit_equivalent(dom, c1, c2, make_node_set(dom, edge));
  CHECK(!w.equivalent);
  CHECK(w.curl_residual > 0.05);
}

TEST_CASE("operator identification from curvature samples") {
  std::vector<cplx> zs = {cplx(0.7, 0.3), cplx(-0.5, 1.1), cplx(1.3, -0.8), cplx(-1.1, -0.4),
                          cplx(0.4, 1.7)};
  auto run = [&](int N) {
    auto dom = make_interval(N);
    int n = dom.n_nodes();
    std::vector<VectorXcd> w(zs.size()), wtt(zs.size());
    for (size_t k = 0; k < zs.size(); ++k) {
      w[k].resize(n);
      wtt[k].resize(n);
      for (int i = 0; i < n; ++i) {
        cplx v = std::exp(zs[k] * dom.xy[i].x);
        w[k][i] = v;
        wtt[k][i] = (zs[k] * zs[k] + 2.0 * zs[k] + 1.0) * v;
      }
    }
    CoefficientFit fit = recover_coefficients(dom, w, wtt, full_region(dom), full_region(dom));
    double ea = 0.0, eq = 0.0;
    for (int i = 4; i <= dom.nx - 4; ++i) {
      ea = std::max(ea, std::abs(fit.coeffs.ax[i] - cplx(2.0)));
      eq = std::max(eq, std::abs(fit.coeffs.q[i] - cplx(-1.0)));
    }
    return std::make_pair(ea, eq);
  };
  auto [ea1, eq1] = run(100);
  auto [ea2, eq2] = run(200);
  CHECK(ea1 < 2e-2);
  CHECK(eq1 < 4e-2);
  CHECK(ea2 < ea1 / 3.0);
  CHECK(eq2 < eq1 / 3.0);

  SUBCASE("boundary-touching nodes are flagged, filled from the interior") {
    auto dom = make_interval(100);
    int n = dom.n_nodes();
    std::vector<VectorXcd> w(zs.size()), wtt(zs.size());
    for (size_t k = 0; k < zs.size(); ++k) {
      w[k].resize(n);
      wtt[k].resize(n);
      for (int i = 0; i < n; ++i) {
        cplx v = std::exp(zs[k] * dom.xy[i].x);
        w[k][i] = v;
        wtt[k][i] = (zs[k] * zs[k] + 2.0 * zs[k] + 1.0) * v;
      }
    }
    CoefficientFit fit = recover_coefficients(dom, w, wtt, full_region(dom), full_region(dom));
    CHECK(fit.flagged.contains(0));
    CHECK(fit.flagged.contains(dom.nx));
    CHECK(!fit.flagged.contains(n / 2));
    CHECK(std::abs(fit.coeffs.q[0] - cplx(-1.0)) < 0.1);
  }
  SUBCASE("rank deficiency demands enough independent samples") {
    auto dom = make_interval(60);
    int n = dom.n_nodes();
    std::vector<VectorXcd> w(3, VectorXcd::Ones(n)), wtt(3, VectorXcd::Zero(n));
    CoefficientFit fit = recover_coefficients(dom, w, wtt, full_region(dom), full_region(dom));
    CHECK(fit.flagged.count() == dom.n_nodes());
  }
}

TEST_CASE("identification composed with a gauge weight lands on the orbit") {
  auto dom = make_interval(160);
  int n = dom.n_nodes();
  std::vector<cplx> zs = {cplx(0.6, 0.4), cplx(-0.7, 0.9), cplx(1.1, -0.6), cplx(-0.2, -1.3)};
  std::vector<VectorXcd> w(zs.size()), wtt(zs.size());
  for (size_t k = 0; k < zs.size(); ++k) {
    w[k].resize(n);
    wtt[k].resize(n);
    for (int i = 0; i < n; ++i) {
      double x = dom.xy[i].x;
      cplx v = std::exp(zs[k] * x);
      // weighted samples of plain waves: the weight exp(-x) is the gauge
      w[k][i] = std::exp(-x) * v;
      wtt[k][i] = std::exp(-x) * (zs[k] * zs[k]) * v;
    }
  }
  CoefficientFit fit = recover_coefficients(dom, w, wtt, full_region(dom), full_region(dom));
  OrbitWitness ow = orbit_equivalent(dom, constant_op(dom, 0.0, 0.0), fit.coeffs,
                                     make_node_set(dom, {dom.nx}), 0.05);
  CHECK(ow.equivalent);
  double ea = 0.0;
  for (int i = 4; i <= dom.nx - 4; ++i) ea = std::max(ea, std::abs(fit.coeffs.ax[i] - cplx(2.0)));
  CHECK(ea < 0.05);
}

TEST_CASE("gauge patches stitch into one field") {
  auto dom = make_interval(100);
  int n = dom.n_nodes();
  VectorXcd v(n);
  for (int i = 0; i < n; ++i)
    v[i] = std::exp(0.8 * dom.xy[i].x) + cplx(0.0, 0.3) * std::sin(2.0 * dom.xy[i].x);
  auto seg = [&](double a, double b) {
    std::vector<int> ids;
    for (int i = 0; i <= dom.nx; ++i)
      if (dom.xy[i].x >= a - 1e-12 && dom.xy[i].x <= b + 1e-12) ids.push_back(i);
    return make_node_set(dom, ids);
  };
  GaugePatch p0{seg(0.0, 0.5), v};
  GaugePatch p1{seg(0.3, 0.8), (cplx(2.0, -1.0) * v).eval()};
  GaugePatch p2{seg(0.6, 1.0), (cplx(0.0, 0.5) * v).eval()};
  StitchResult st = stitch_gauges(dom, {p0, p1, p2}, 0, 0.05);
  CHECK(st.worst_spread < 1e-8);
  CHECK(std::abs(st.factors[0] - 1.0) < 1e-12);
  CHECK(std::abs(st.factors[1] * cplx(2.0, -1.0) - 1.0) < 1e-8);
  double err = 0.0;
  for (int i = 0; i <= dom.nx; ++i) err = std::max(err, std::abs(st.values[i] - v[i]));
  CHECK(err < 1e-8);
  CHECK(st.region.count() == dom.n_nodes());

  SUBCASE("inconsistent overlap throws") {
    GaugePatch bad = p1;
    for (int i = 0; i < n; ++i)
      bad.values[i] *= 1.0 + 0.4 * std::sin(8.0 * kPi * dom.xy[i].x);
    CHECK_THROWS_AS(stitch_gauges(dom, {p0, bad, p2}, 0, 0.05), NumericalError);
  }
  SUBCASE("patches without a connecting overlap throw") {
    GaugePatch far{seg(0.8, 1.0), v};
    CHECK_THROWS_AS(stitch_gauges(dom, {p0, far}, 0, 0.05), ConfigError);
  }
}

TEST_CASE("localized sources report the adjoint states at the focus point") {
  auto dom = make_interval(150);
  double T = 1.2;
  auto [gridT, grid2T] = make_time_grid_pair(dom, T);
  int stride = 2;
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n);
  for (int i = 0; i < n; ++i) {
    double x = dom.xy[i].x;
    ax[i] = cplx(0.25 * std::sin(2.0 * kPi * x), 0.08 * x);
    q[i] = cplx(0.6 * std::cos(kPi * x), 0.15 * x * (1.0 - x));
  }
  CoefficientField coeff = make_coefficients(dom, ax, {}, q);
  BoundaryPatch S = make_patch(dom, {0}, PatchRole::Source);
  BoundaryPatch R = make_patch(dom, {dom.nx}, PatchRole::Receiver);

  ControlMap U = assemble_control_map(dom, coeff, S, gridT, stride);
  int x_node = 0;
  for (int i = 0; i <= dom.nx; ++i)
    if (std::abs(dom.xy[i].x - 0.5) < std::abs(dom.xy[x_node].x - 0.5)) x_node = i;
  LocalizationPlan plan =
      localization_plan(dom, R, dom.nx, 0.5, 0.1, 0.05, x_node, {2, 4, 8, 16, 32});
  LocalizedSourcePlan lsp = localized_sources(dom, U, plan, 0.0);

  ResponseOperator lam = assemble_response(dom, coeff, S, boundary_receiver(R), grid2T, stride);
  ConnectingOperator K = assemble_connecting(lam);

  std::vector<SpaceTimeField> profiles;
  std::vector<VectorXcd> direct;
  for (int p = 0; p < 3; ++p) {
    SpaceTimeField psi = zero_field(gridT, K.v_nodes);
    double t0 = 0.25 + 0.18 * p, t1 = t0 + 0.55;
    for (int m = 0; m <= gridT.nt; ++m) {
      double t = gridT.t(m);
      double val = (t > t0 && t < t1) ? std::pow(std::sin(kPi * (t - t0) / (t1 - t0)), 2) : 0.0;
      for (int e = 0; e < (int)K.v_nodes.size(); ++e) psi.vals(m, e) = val;
    }
    profiles.push_back(psi);
    Wavefield wf = solve_adjoint(dom, coeff, &psi, nullptr, nullptr, gridT);
    direct.push_back(wf.u_T);
  }

  PointValues pv = recover_point_values(dom, K, lsp, profiles, 0.08);
  CHECK(pv.worst_gap <= 0.08);
  for (int p = 0; p < 3; ++p) {
    double scale = direct[p].cwiseAbs().maxCoeff();
    CHECK(std::abs(pv.values[p] - direct[p][x_node]) < 0.15 * scale);
  }

  SUBCASE("scrambled sources fail the convergence check") {
    LocalizedSourcePlan bad = lsp;
    std::mt19937 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& f : bad.f)
      for (int i = 0; i < (int)f.size(); ++i) f[i] = cplx(g(rng), g(rng));
    CHECK_THROWS_AS(recover_point_values(dom, K, bad, profiles, 0.08), NumericalError);
  }
}

TEST_CASE("boundary data continues to interior receivers") {
  auto dom = make_interval(120);
  double T = 1.0;
  auto [gridT, grid2T] = make_time_grid_pair(dom, T);
  int stride = 2;
  BoundaryPatch S = make_patch(dom, {0}, PatchRole::Source);
  BoundaryPatch R = make_patch(dom, {dom.nx}, PatchRole::Receiver);
  std::vector<int> targets;
  for (int i = 0; i <= dom.nx; ++i)
    if (dom.xy[i].x >= 0.55 && dom.xy[i].x <= 0.75) targets.push_back(i);

  auto check_case = [&](const CoefficientField& coeff, const OperatorCoefficients& rep,
                        double tol) {
    ResponseOperator lam = assemble_response(dom, coeff, S, boundary_receiver(R), grid2T, stride);
    ResponseOperator cont = continue_interior_data(dom, rep, lam, targets);
    ResponseOperator direct = assemble_response(
        dom, coeff, S, interior_receiver(targets, VectorXcd::Ones(dom.n_nodes())), gridT, stride);
    // compare on the continued basis columns (the leading ones)
    int cols = (int)cont.mat.cols();
    double num = 0.0, den = 0.0;
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < (int)cont.mat.rows(); ++r) {
        num += std::norm(cont.mat(r, c) - direct.mat(r, c));
        den += std::norm(direct.mat(r, c));
      }
    CHECK(den > 0.0);
    CHECK(std::sqrt(num / den) < tol);
  };

  SUBCASE("free propagation") {
    CoefficientField zero = zero_coefficients(dom);
    check_case(zero, constant_op(dom, 0.0, 0.0), 0.10);
  }
  SUBCASE("with a potential, continued through the true representative") {
    int n = dom.n_nodes();
    VectorXcd q(n), ax = VectorXcd::Zero(n);
    for (int i = 0; i < n; ++i) q[i] = cplx(std::sin(kPi * dom.xy[i].x), 0.0);
    CoefficientField coeff = make_coefficients(dom, ax, {}, q);
    check_case(coeff, truth_coefficients(dom, coeff), 0.12);
  }
  SUBCASE("window validation") {
    CoefficientField zero = zero_coefficients(dom);
    ResponseOperator lam = assemble_response(dom, zero, S, boundary_receiver(R), grid2T, stride);
    ContinuationOptions opt;
    opt.window = 0.1;  // reach is about 0.45
    CHECK_THROWS_AS(
        continue_interior_data(dom, constant_op(dom, 0.0, 0.0), lam, targets, opt), ConfigError);
  }
}

TEST_CASE("local reconstruction from boundary data alone") {
  auto dom = make_interval(160);
  double T = 1.5;
  auto [gridT, grid2T] = make_time_grid_pair(dom, T);
  int stride = 2;
  BoundaryPatch S = make_patch(dom, {0}, PatchRole::Source);
  BoundaryPatch R = make_patch(dom, {dom.nx}, PatchRole::Receiver);
  NodeSet anchor = make_node_set(dom, {dom.nx});

  SUBCASE("free medium recovers the trivial orbit") {
    CoefficientField zero = zero_coefficients(dom);
    ResponseOperator lam = assemble_response(dom, zero, S, boundary_receiver(R), grid2T, stride);
    ReconstructionOptions opt;
    opt.depth = 0.25;
    Reconstruction rec = reconstruct_local(dom, lam, S, R, T, opt);
    CHECK(rec.coeffs.region.count() > 20);
    OrbitWitness w =
        orbit_equivalent(dom, constant_op(dom, 0.0, 0.0), rec.coeffs, anchor, 0.10);
    CHECK(w.equivalent);
  }
  SUBCASE("a real potential is recovered up to gauge") {
    int n = dom.n_nodes();
    VectorXcd q(n), ax = VectorXcd::Zero(n);
    for (int i = 0; i < n; ++i) q[i] = std::sin(kPi * dom.xy[i].x);
    CoefficientField coeff = make_coefficients(dom, ax, {}, q);
    ResponseOperator lam = assemble_response(dom, coeff, S, boundary_receiver(R), grid2T, stride);
    ReconstructionOptions opt;
    opt.depth = 0.3;
    Reconstruction rec = reconstruct_local(dom, lam, S, R, T, opt);
    OrbitWitness w = orbit_equivalent(dom, truth_coefficients(dom, coeff), rec.coeffs, anchor, 0.10);
    CHECK(w.equivalent);
    CHECK(w.q_residual <= 0.10);
  }
}

TEST_CASE("foliated reconstruction marches inward") {
  auto dom = make_interval(140);
  double T = 1.5;
  auto [gridT, grid2T] = make_time_grid_pair(dom, T);
  int stride = 2;
  BoundaryPatch S = make_patch(dom, {0}, PatchRole::Source);
  BoundaryPatch R = make_patch(dom, {dom.nx}, PatchRole::Receiver);
  NodeSet anchor = make_node_set(dom, {dom.nx});
  int n = dom.n_nodes();
  VectorXcd q(n), ax = VectorXcd::Zero(n);
  for (int i = 0; i < n; ++i) q[i] = 0.8 * std::sin(kPi * dom.xy[i].x);
  CoefficientField coeff = make_coefficients(dom, ax, {}, q);
  ResponseOperator lam = assemble_response(dom, coeff, S, boundary_receiver(R), grid2T, stride);
  ReconstructionOptions opt;
  opt.depth = 0.3;

  SUBCASE("a single shallow slice reduces to the local result") {
    FoliationSpec fol;
    fol.kind = FoliationSpec::Kind::Interval;
    fol.s_values = {0.2};
    Reconstruction loc = reconstruct_local(dom, lam, S, R, T, opt);
    Reconstruction fo = reconstruct_foliated(dom, lam, S, R, fol, T, opt);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i)
      if (loc.coeffs.region.contains(i) && fo.coeffs.region.contains(i)) {
        num += std::norm(fo.coeffs.q[i] - loc.coeffs.q[i]);
        den += 1.0 + std::norm(loc.coeffs.q[i]);
      }
    CHECK(den > 0.0);
    CHECK(std::sqrt(num / den) < 0.05);
  }
  SUBCASE("two slices extend the recovered set and stay on the orbit") {
    FoliationSpec fol;
    fol.kind = FoliationSpec::Kind::Interval;
    fol.s_values = {0.35, 0.5};
    Reconstruction loc = reconstruct_local(dom, lam, S, R, T, opt);
    Reconstruction fo = reconstruct_foliated(dom, lam, S, R, fol, T, opt);
    CHECK(fo.coeffs.region.count() > loc.coeffs.region.count() + 10);
    OrbitWitness w = orbit_equivalent(dom, truth_coefficients(dom, coeff), fo.coeffs, anchor, 0.15);
    CHECK(w.equivalent);
  }
}

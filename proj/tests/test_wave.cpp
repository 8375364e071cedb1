#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "bc/fields.hpp"
#include "bc/wave.hpp"

using namespace bc;

namespace {

double gauss(double t, double t0, double sig) {
  double z = (t - t0) / sig;
  return std::exp(-0.5 * z * z);
}
double dgauss(double t, double t0, double sig) {
  return -(t - t0) / (sig * sig) * gauss(t, t0, sig);
}

// Dirichlet problem on [0,1], c = 1, data f at x = 0 and 0 at x = 1:
// u = sum_k f(t - x - 2k) - f(t - (2 - x) - 2k).
double images(double t, double x, double t0, double sig) {
  double s = 0.0;
  for (int k = 0; 2 * k <= t + 1.0; ++k)
    s += gauss(t - x - 2.0 * k, t0, sig) - gauss(t - (2.0 - x) - 2.0 * k, t0, sig);
  return s;
}
double images_dt(double t, double x, double t0, double sig) {
  double s = 0.0;
  for (int k = 0; 2 * k <= t + 1.0; ++k)
    s += dgauss(t - x - 2.0 * k, t0, sig) - dgauss(t - (2.0 - x) - 2.0 * k, t0, sig);
  return s;
}

SpaceTimeField end_source(const TimeGrid& tg, int node, double t0, double sig) {
  SpaceTimeField f = zero_field(tg, {node});
  for (int m = 0; m <= tg.nt; ++m) f.vals(m, 0) = gauss(tg.t(m), t0, sig);
  return f;
}

double max_err_vs_images(const DiscreteDomain& dom, const Wavefield& w, int m, double t0,
                         double sig) {
  double t = w.time.t(m), err = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i)
    err = std::max(err, std::abs(w.u(i, m) - images(t, dom.xy[i].x, t0, sig)));
  return err;
}

}  // namespace

TEST_CASE("time grids respect the stability bound") {
  auto dom = make_interval(200);
  CHECK(cfl_limit(dom) == doctest::Approx(1.0 / 200).epsilon(1e-12));
  auto tg = make_time_grid(dom, 1.5);
  CHECK(tg.dt <= 0.9 * cfl_limit(dom) * (1 + 1e-12));
  CHECK(tg.nt * tg.dt == doctest::Approx(1.5).epsilon(1e-14));

  auto [half, full] = make_time_grid_pair(dom, 1.5);
  CHECK(half.dt == full.dt);
  CHECK(full.nt == 2 * half.nt);
  CHECK(half.T == doctest::Approx(1.5));
  CHECK(full.T == doctest::Approx(3.0));

  std::vector<double> c2(dom.n_nodes(), 2.0);
  auto fast = make_interval(200, 1.0, c2);
  CHECK(cfl_limit(fast) == doctest::Approx(0.5 / 200).epsilon(1e-12));

  auto rect = make_rectangle(20, 20, 1.0, 1.0);
  CHECK(cfl_limit(rect) == doctest::Approx(0.05 / std::sqrt(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(make_time_grid(dom, -1.0), ConfigError);
}

TEST_CASE("zero data gives the zero solution") {
  auto dom = make_interval(80);
  auto coeff = zero_coefficients(dom);
  auto tg = make_time_grid(dom, 1.0);
  auto f = zero_field(tg, {0});
  auto w = solve_forward(dom, coeff, f);
  CHECK(w.u.cwiseAbs().maxCoeff() == 0.0);
  CHECK(w.ut_T.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("d'Alembert pulse on the unit interval") {
  const double t0 = 1.0, sig = 0.2, T = 2.5;
  auto dom = make_interval(400);
  auto coeff = zero_coefficients(dom);
  auto tg = make_time_grid(dom, T);
  auto f = end_source(tg, 0, t0, sig);
  auto w = solve_forward(dom, coeff, f);

  CHECK(scheme_residual(w, dom, coeff, false) <= 1e-10);
  CHECK(max_err_vs_images(dom, w, tg.nt, t0, sig) <= 1e-3);
  CHECK(max_err_vs_images(dom, w, tg.nt / 2, t0, sig) <= 1e-3);

  double errv = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i)
    errv = std::max(errv, std::abs(w.ut_T[i] - images_dt(T, dom.xy[i].x, t0, sig)));
  CHECK(errv <= 0.05);

  // final-snapshot-only run reproduces the history run
  WaveOptions lean;
  lean.keep_history = false;
  auto w2 = solve_forward(dom, coeff, f, lean);
  CHECK((w2.u_T - w.u_T).cwiseAbs().maxCoeff() == 0.0);
  CHECK((w2.ut_T - w.ut_T).cwiseAbs().maxCoeff() == 0.0);
  CHECK(w2.u.size() == 0);

  auto [uT, utT] = final_state(dom, coeff, f);
  CHECK((uT - w.u_T).cwiseAbs().maxCoeff() == 0.0);
  CHECK((utT - w.ut_T).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("second-order convergence against the image solution") {
  const double t0 = 1.0, sig = 0.2, T = 2.5;
  std::vector<double> err;
  for (int n : {100, 200, 400}) {
    auto dom = make_interval(n);
    auto coeff = zero_coefficients(dom);
    auto tg = make_time_grid(dom, T);
    auto w = solve_forward(dom, coeff, end_source(tg, 0, t0, sig));
    err.push_back(max_err_vs_images(dom, w, tg.nt, t0, sig));
  }
  CHECK(err[0] / err[1] >= 3.0);
  CHECK(err[1] / err[2] >= 3.0);
  CHECK(err[2] <= 1e-3);
}

TEST_CASE("self-convergence with a variable speed") {
  const double t0 = 1.0, sig = 0.2, T = 2.0;
  auto speed = [](double x) { return 1.0 + 0.3 * std::sin(3.14159265358979 * x); };
  auto run = [&](int n) {
    std::vector<double> c(n + 1);
    for (int i = 0; i <= n; ++i) c[i] = speed(i / (double)n);
    auto dom = make_interval(n, 1.0, c);
    auto coeff = zero_coefficients(dom);
    auto tg = make_time_grid(dom, T);
    return solve_forward(dom, coeff, end_source(tg, 0, t0, sig));
  };
  auto ref = run(400);
  double e50 = 0.0, e100 = 0.0;
  auto w50 = run(50), w100 = run(100);
  for (int i = 0; i <= 50; ++i)
    e50 = std::max(e50, std::abs(w50.u(i, w50.time.nt) - ref.u(8 * i, ref.time.nt)));
  for (int i = 0; i <= 100; ++i)
    e100 = std::max(e100, std::abs(w100.u(i, w100.time.nt) - ref.u(4 * i, ref.time.nt)));
  CHECK(e50 / e100 >= 2.8);
  CHECK(e100 <= 0.02);
}

TEST_CASE("transposed zero-order term tracks the divergence") {
  auto dom = make_interval(100);
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n);
  for (int i = 0; i < n; ++i) {
    ax[i] = dom.xy[i].x;
    q[i] = cplx(0.3, 0.1);
  }
  auto coeff = make_coefficients(dom, ax, {}, q);
  for (int i = 0; i < n; ++i)
    CHECK(std::abs(coeff.q_ad[i] - (q[i] - 1.0)) <= 1e-10);

  auto disk = make_disk(10, 24);
  int nd = disk.n_nodes();
  VectorXcd dax(nd), day(nd), dq = VectorXcd::Zero(nd);
  for (int i = 0; i < nd; ++i) {
    dax[i] = disk.xy[i].x;
    day[i] = disk.xy[i].y;
  }
  auto dcoeff = make_coefficients(disk, dax, day, dq);
  for (int i = 0; i < nd; ++i)
    CHECK(std::abs(dcoeff.q_ad[i] - cplx(-2.0)) <= 0.05);
}

TEST_CASE("transposed solve equals the forward solve when A vanishes") {
  auto dom = make_interval(150);
  int n = dom.n_nodes();
  VectorXcd q(n);
  for (int i = 0; i < n; ++i) q[i] = 1.0 + std::sin(3.0 * dom.xy[i].x);
  auto coeff = make_coefficients(dom, {}, {}, q);
  auto tg = make_time_grid(dom, 1.4);
  auto f = end_source(tg, 0, 0.5, 0.1);
  auto wf = solve_forward(dom, coeff, f);
  auto wa = solve_adjoint(dom, coeff, &f, nullptr, nullptr, tg);
  CHECK((wf.u - wa.u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normal trace at the far end matches the image formula") {
  const double t0 = 0.8, sig = 0.15, T = 2.5;
  auto dom = make_interval(400);
  auto coeff = zero_coefficients(dom);
  auto tg = make_time_grid(dom, T);
  auto w = solve_forward(dom, coeff, end_source(tg, 0, t0, sig));
  auto gamma = make_patch(dom, {400}, PatchRole::Receiver);
  auto tr = neumann_trace(w, dom, coeff, gamma, TraceSign::Forward);
  double err = 0.0, scale = 0.0;
  for (int m = 0; m <= tg.nt; ++m) {
    double want = 2.0 * dgauss(tg.t(m) - 1.0, t0, sig);
    err = std::max(err, std::abs(tr.vals(m, 0) - want));
    scale = std::max(scale, std::abs(want));
  }
  CHECK(err <= 0.01 * scale);
}

TEST_CASE("trace signs differ by the tangential-normal pairing of A") {
  auto dom = make_interval(120);
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n);
  for (int i = 0; i < n; ++i) {
    double x = dom.xy[i].x;
    ax[i] = cplx(0.5 * std::sin(2.0 * x), 0.2 * x);
    q[i] = cplx(0.4, -0.1) * x;
  }
  auto coeff = make_coefficients(dom, ax, {}, q);
  auto tg = make_time_grid(dom, 1.2);
  auto w = solve_forward(dom, coeff, end_source(tg, 0, 0.5, 0.1));
  auto gamma = make_patch(dom, {0, 120}, PatchRole::Other);
  auto tf = neumann_trace(w, dom, coeff, gamma, TraceSign::Forward);
  auto ta = neumann_trace(w, dom, coeff, gamma, TraceSign::Adjoint);
  for (size_t k = 0; k < gamma.nodes.size(); ++k) {
    int b = gamma.nodes[k];
    cplx anu = coeff.ax[b] * dom.inward_normal(b).x;
    for (int m = 0; m <= tg.nt; m += 50) {
      cplx gap = tf.vals(m, (int)k) - ta.vals(m, (int)k) + anu * w.u(b, m);
      CHECK(std::abs(gap) <= 1e-12);
    }
  }
}

TEST_CASE("energy is conserved once the source switches off") {
  auto dom = make_interval(200);
  int n = dom.n_nodes();
  VectorXcd q(n);
  for (int i = 0; i < n; ++i) {
    double s = std::sin(3.14159265358979 * dom.xy[i].x);
    q[i] = 2.0 * s * s;
  }
  auto coeff = make_coefficients(dom, {}, {}, q);
  auto tg = make_time_grid(dom, 2.5);
  auto w = solve_forward(dom, coeff, end_source(tg, 0, 0.4, 0.08));
  double e0 = -1.0, lo = 1e300, hi = 0.0;
  for (int m = 1; m < tg.nt; ++m) {
    if (tg.t(m) < 0.9) continue;
    VectorXcd ut = (w.u.col(m + 1) - w.u.col(m - 1)) / (2.0 * tg.dt);
    double e = field_energy(dom, coeff, w.u.col(m), ut);
    if (e0 < 0) e0 = e;
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  CHECK(e0 > 0.1);  // wave actually entered
  CHECK(hi - lo <= 0.01 * e0);
}

TEST_CASE("no energy leaks past the influence front") {
  const double T = 0.9;
  auto dom = make_interval(400);
  auto coeff = zero_coefficients(dom);
  auto tg = make_time_grid(dom, T);
  auto w = solve_forward(dom, coeff, end_source(tg, 0, 0.4, 0.08));
  auto mask = domain_of_influence(dom, {0}, T + 2.0 * dom.dx, 0.0);
  VectorXcd gx, gy;
  gradient(dom, w.u_T, gx, gy);
  double inside = 0.0, outside = 0.0;
  for (int i = 0; i < dom.n_nodes(); ++i) {
    double e = dom.vol_w[i] * (std::norm(w.ut_T[i]) + std::norm(gx[i]));
    (mask.contains(i) ? inside : outside) += e;
  }
  CHECK(inside > 0.0);
  CHECK(outside <= 1e-6 * (inside + outside));
}

TEST_CASE("conjugating the solution shifts the coefficients") {
  // kappa = exp(s) with s supported away from the ends: the solve with
  // shifted coefficients reproduces kappa * u to second order.
  const double pi = 3.14159265358979;
  auto s_of = [&](double x) {
    if (x <= 0.2 || x >= 0.8) return 0.0;
    double w = std::sin(pi * (x - 0.2) / 0.6);
    return 0.2 * w * w * w * w;
  };
  auto sp_of = [&](double x) {
    if (x <= 0.2 || x >= 0.8) return 0.0;
    double a = pi / 0.6, y = pi * (x - 0.2) / 0.6;
    return 0.2 * 4.0 * a * std::pow(std::sin(y), 3) * std::cos(y);
  };
  auto spp_of = [&](double x) {
    if (x <= 0.2 || x >= 0.8) return 0.0;
    double a = pi / 0.6, y = pi * (x - 0.2) / 0.6;
    double s2 = std::sin(y) * std::sin(y), c2 = std::cos(y) * std::cos(y);
    return 0.2 * 4.0 * a * a * (3.0 * s2 * c2 - s2 * s2);
  };
  auto run = [&](int n) {
    auto dom = make_interval(n);
    int nn = dom.n_nodes();
    VectorXcd ax(nn), q(nn), axk(nn), qk(nn), kap(nn);
    for (int i = 0; i < nn; ++i) {
      double x = dom.xy[i].x;
      ax[i] = cplx(0.3 * std::sin(2.0 * x), 0.1 * x * (1 - x));
      q[i] = cplx(1.0 + std::cos(x), 0.2 * x);
      double s = s_of(x), sp = sp_of(x), spp = spp_of(x);
      kap[i] = std::exp(s);
      axk[i] = ax[i] + 2.0 * sp;
      qk[i] = q[i] + spp - sp * sp - ax[i] * sp;
    }
    auto base = make_coefficients(dom, ax, {}, q);
    auto gauged = make_coefficients(dom, axk, {}, qk);
    auto tg = make_time_grid(dom, 1.8);
    auto f = end_source(tg, 0, 0.6, 0.12);
    auto u = solve_forward(dom, base, f);
    auto v = solve_forward(dom, gauged, f);
    double err = 0.0;
    for (int i = 0; i < nn; ++i) err = std::max(err, std::abs(v.u_T[i] - kap[i] * u.u_T[i]));
    return err;
  };
  double e100 = run(100), e200 = run(200);
  CHECK(e100 / e200 >= 2.8);
  CHECK(e200 <= 5e-3);
}

TEST_CASE("transposed solve with interior forcing satisfies its scheme") {
  auto dom = make_interval(120);
  int n = dom.n_nodes();
  VectorXcd ax(n), q(n), kap(n);
  for (int i = 0; i < n; ++i) {
    double x = dom.xy[i].x;
    ax[i] = cplx(0.0, 0.3) * std::sin(3.0 * x);
    q[i] = cplx(0.5, 0.2) * x;
    kap[i] = 1.0 + 0.5 * std::sin(3.14159265358979 * x);
  }
  auto coeff = make_coefficients(dom, ax, {}, q);
  auto tg = make_time_grid(dom, 1.0);
  std::vector<int> ball;
  for (int i = 40; i <= 80; ++i) ball.push_back(i);
  auto H = zero_field(tg, ball);
  for (int m = 0; m <= tg.nt; ++m)
    for (size_t k = 0; k < ball.size(); ++k) {
      double x = dom.xy[ball[k]].x, t = tg.t(m);
      double bump = std::cos(3.14159265358979 * (x - 0.6) / 0.4);
      H.vals(m, (int)k) = bump * bump * t * t;
    }
  auto w = solve_adjoint(dom, coeff, nullptr, &H, &kap, tg);
  CHECK(w.u.cwiseAbs().maxCoeff() > 1e-4);
  CHECK(scheme_residual(w, dom, coeff, true, &H, &kap) <= 1e-10);
  // default kappa is one
  auto w1 = solve_adjoint(dom, coeff, nullptr, &H, nullptr, tg);
  CHECK(scheme_residual(w1, dom, coeff, true, &H, nullptr) <= 1e-10);
  CHECK((w1.u - w.u).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("bad inputs are rejected") {
  auto dom = make_interval(60);
  auto coeff = zero_coefficients(dom);
  TimeGrid bad;
  bad.nt = 10;
  bad.dt = 2.0 * cfl_limit(dom);
  bad.T = bad.nt * bad.dt;
  auto f = zero_field(bad, {0});
  CHECK_THROWS_AS(solve_forward(dom, coeff, f), ConfigError);

  auto tg = make_time_grid(dom, 1.0);
  auto finterior = zero_field(tg, {30});
  CHECK_THROWS_AS(solve_forward(dom, coeff, finterior), ConfigError);

  auto other = make_time_grid(dom, 0.5);
  auto H = zero_field(other, {30});
  CHECK_THROWS_AS(solve_adjoint(dom, coeff, nullptr, &H, nullptr, tg), ConfigError);

  WaveOptions lean;
  lean.keep_history = false;
  auto w = solve_forward(dom, coeff, zero_field(tg, {0}), lean);
  auto gamma = make_patch(dom, {60}, PatchRole::Receiver);
  CHECK_THROWS_AS(neumann_trace(w, dom, coeff, gamma, TraceSign::Forward), ConfigError);
  CHECK_THROWS_AS(restrict_field(w, {5}), ConfigError);
}

TEST_CASE("serial and parallel runs agree bitwise") {
  auto proto = make_disk(10, 20);
  std::vector<double> c(proto.n_nodes());
  for (int i = 0; i < proto.n_nodes(); ++i)
    c[i] = 1.0 + 0.2 * std::cos(2.0 * proto.xy[i].x) * std::sin(proto.xy[i].y);
  auto disk = make_disk(10, 20, c);
  int n = disk.n_nodes();
  VectorXcd ax(n), ay(n), q(n);
  for (int i = 0; i < n; ++i) {
    ax[i] = cplx(0.2 * disk.xy[i].y, 0.1);
    ay[i] = cplx(-0.2 * disk.xy[i].x, 0.05);
    q[i] = cplx(1.0, 0.3) * (1.0 - std::norm(cplx(disk.xy[i].x, disk.xy[i].y)));
  }
  auto coeff = make_coefficients(disk, ax, ay, q);
  auto tg = make_time_grid(disk, 1.0);
  std::vector<int> arc;
  for (int j = 3; j <= 7; ++j) arc.push_back(disk.disk_id(10, j));
  auto f = zero_field(tg, arc);
  for (int m = 0; m <= tg.nt; ++m)
    for (size_t k = 0; k < arc.size(); ++k)
      f.vals(m, (int)k) = gauss(tg.t(m), 0.4, 0.1) * (1.0 + 0.3 * (double)k);
  WaveOptions ser, par;
  ser.policy = ExecPolicy::Serial;
  par.policy = ExecPolicy::Parallel;
  auto ws = solve_forward(disk, coeff, f, ser);
  auto wp = solve_forward(disk, coeff, f, par);
  CHECK((ws.u - wp.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(scheme_residual(ws, disk, coeff, false) <= 1e-10);
}

TEST_CASE("solver operator agrees with the field operators") {
  auto check_dom = [&](const DiscreteDomain& dom) {
    int n = dom.n_nodes();
    VectorXcd ax(n), ay(n), q(n), u(n);
    for (int i = 0; i < n; ++i) {
      double x = dom.xy[i].x, y = dom.xy[i].y;
      ax[i] = cplx(0.4 * std::sin(x + y), 0.2 * x);
      ay[i] = cplx(0.3 * std::cos(x), -0.1 * y);
      q[i] = cplx(1.0 + x * y, 0.5 * x);
      u[i] = cplx(std::sin(2.0 * x) * std::cos(y), x * y);
    }
    if (dom.dim() == 1) ay.setZero();
    auto coeff = make_coefficients(dom, ax, ay, q);
    VectorXcd lap = laplace_g(dom, u), gx, gy;
    gradient(dom, u, gx, gy);
    double scale = lap.cwiseAbs().maxCoeff();
    for (bool adjoint : {false, true}) {
      VectorXcd got = apply_spatial_operator(dom, coeff, u, adjoint);
      double s1 = adjoint ? 1.0 : -1.0;
      const VectorXcd& qv = adjoint ? coeff.q_ad : coeff.q;
      for (int i = 0; i < n; ++i) {
        if (dom.is_boundary[i]) {
          CHECK(got[i] == cplx(0.0));
          continue;
        }
        cplx want = lap[i] + s1 * (ax[i] * gx[i] + ay[i] * gy[i]) - qv[i] * u[i];
        CHECK(std::abs(got[i] - want) <= 1e-11 * scale);
      }
    }
  };
  check_dom(make_interval(40));
  check_dom(make_rectangle(12, 12, 1.0, 1.0));
  check_dom(make_disk(8, 16));
  std::vector<double> c;
  auto dom = make_interval(40);
  for (int i = 0; i < dom.n_nodes(); ++i) c.push_back(1.0 + 0.4 * std::sin(5.0 * dom.xy[i].x));
  check_dom(make_interval(40, 1.0, c));
}

TEST_CASE("rectangle and disk smoke runs stay sane") {
  auto rect = make_rectangle(16, 16, 1.0, 1.0);
  auto rc = zero_coefficients(rect);
  auto rtg = make_time_grid(rect, 1.0);
  std::vector<int> edge;
  for (int i = 4; i <= 12; ++i) edge.push_back(rect.rect_id(i, 0));
  auto rf = zero_field(rtg, edge);
  for (int m = 0; m <= rtg.nt; ++m)
    for (size_t k = 0; k < edge.size(); ++k) rf.vals(m, (int)k) = gauss(rtg.t(m), 0.3, 0.08);
  auto rw = solve_forward(rect, rc, rf);
  CHECK(std::isfinite(rw.u_T.cwiseAbs().maxCoeff()));
  CHECK(rw.u_T.cwiseAbs().maxCoeff() > 1e-8);
  CHECK(scheme_residual(rw, rect, rc, false) <= 1e-10);
  auto rgamma = make_patch(rect, {rect.rect_id(8, 16)}, PatchRole::Receiver);
  auto rtr = neumann_trace(rw, rect, rc, rgamma, TraceSign::Forward);
  CHECK(std::isfinite(std::abs(rtr.vals.cwiseAbs().maxCoeff())));

  auto disk = make_disk(8, 16);
  auto dc = zero_coefficients(disk);
  auto dtg = make_time_grid(disk, 2.2);
  std::vector<int> arc;
  for (int j = 0; j < 5; ++j) arc.push_back(disk.disk_id(8, j));
  auto df = zero_field(dtg, arc);
  for (int m = 0; m <= dtg.nt; ++m)
    for (size_t k = 0; k < arc.size(); ++k) df.vals(m, (int)k) = gauss(dtg.t(m), 0.4, 0.12);
  auto dw = solve_forward(disk, dc, df);
  CHECK(std::isfinite(dw.u_T.cwiseAbs().maxCoeff()));
  CHECK(dw.u_T.cwiseAbs().maxCoeff() > 1e-8);
  CHECK(scheme_residual(dw, disk, dc, false) <= 1e-10);
  auto rest = restrict_field(dw, {0, disk.disk_id(4, 3)});
  CHECK(rest.vals(dtg.nt, 0) == dw.u(0, dtg.nt));
}

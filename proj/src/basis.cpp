#include "bc/basis.hpp"

#include <algorithm>
#include <cmath>

namespace bc {

TimeBasis make_time_basis(const TimeGrid& grid, int stride) {
  if (stride < 1) throw ConfigError("make_time_basis: stride must be positive");
  TimeBasis b;
  b.grid = grid;
  b.stride = stride;
  b.delta = stride * grid.dt;
  b.n = grid.nt / stride - 1;
  if (b.n < 1) throw ConfigError("make_time_basis: grid too short for this stride");
  return b;
}

double hat_value(const TimeBasis& b, int l, double t) {
  double z = 1.0 - std::abs(t - b.center(l)) / b.delta;
  return z > 0.0 ? z : 0.0;
}

VectorXd hat_samples(const TimeBasis& b, int l) {
  VectorXd s = VectorXd::Zero(b.grid.samples());
  int lo = l * b.stride, hi = (l + 2) * b.stride;
  for (int m = lo; m <= hi && m <= b.grid.nt; ++m) s[m] = hat_value(b, l, b.grid.t(m));
  return s;
}

VectorXcd synth_time(const TimeBasis& b, const VectorXcd& c) {
  if ((int)c.size() != b.n) throw ConfigError("synth_time: coefficient count mismatch");
  VectorXcd out = VectorXcd::Zero(b.grid.samples());
  for (int l = 0; l < b.n; ++l) {
    int lo = l * b.stride, hi = std::min((l + 2) * b.stride, b.grid.nt);
    for (int m = lo; m <= hi; ++m) out[m] += c[l] * hat_value(b, l, b.grid.t(m));
  }
  return out;
}

namespace {

// Trapezoid pairing of two fine-grid sample vectors.
template <class A, class B>
auto trapz(const TimeGrid& g, const A& a, const B& b) {
  decltype(a[0] * b[0]) s = a[0] * b[0] * 0.5 + a[g.nt] * b[g.nt] * 0.5;
  for (int m = 1; m < g.nt; ++m) s += a[m] * b[m];
  return s * g.dt;
}

}  // namespace

VectorXcd project_time(const TimeBasis& b, const VectorXcd& samples) {
  if ((int)samples.size() != b.grid.samples())
    throw ConfigError("project_time: sample count mismatch");
  // Gram matrix is tridiagonal and translation invariant.
  VectorXd h0 = hat_samples(b, 0);
  double diag = trapz(b.grid, h0, h0);
  double off = 0.0;
  if (b.n > 1) off = trapz(b.grid, h0, hat_samples(b, 1));
  VectorXcd rhs(b.n);
  for (int l = 0; l < b.n; ++l) {
    cplx s = 0.0;
    int lo = l * b.stride, hi = std::min((l + 2) * b.stride, b.grid.nt);
    for (int m = lo; m <= hi; ++m) {
      double wt = (m == 0 || m == b.grid.nt) ? 0.5 : 1.0;
      s += wt * hat_value(b, l, b.grid.t(m)) * samples[m];
    }
    rhs[l] = s * b.grid.dt;
  }
  // Thomas solve of the SPD tridiagonal system.
  VectorXd cp(b.n);
  VectorXcd dp(b.n);
  cp[0] = off / diag;
  dp[0] = rhs[0] / diag;
  for (int l = 1; l < b.n; ++l) {
    double m = diag - off * cp[l - 1];
    cp[l] = off / m;
    dp[l] = (rhs[l] - off * dp[l - 1]) / m;
  }
  VectorXcd c(b.n);
  c[b.n - 1] = dp[b.n - 1];
  for (int l = b.n - 2; l >= 0; --l) c[l] = dp[l] - cp[l] * c[l + 1];
  return c;
}

SourceBasis make_source_basis(const std::vector<int>& nodes, const TimeGrid& grid, int stride) {
  if (nodes.empty()) throw ConfigError("make_source_basis: empty node list");
  SourceBasis b;
  b.time = make_time_basis(grid, stride);
  b.nodes = nodes;
  return b;
}

SpaceTimeField basis_source(const SourceBasis& b, int j) {
  if (j < 0 || j >= b.cols()) throw ConfigError("basis_source: column out of range");
  SpaceTimeField f = zero_field(b.time.grid, {b.node_of(j)});
  int l = b.hat_of(j);
  for (int m = 0; m <= b.time.grid.nt; ++m) f.vals(m, 0) = hat_value(b.time, l, b.time.grid.t(m));
  return f;
}

SpaceTimeField synth_source(const SourceBasis& b, const VectorXcd& coeffs) {
  if ((int)coeffs.size() != b.cols()) throw ConfigError("synth_source: coefficient count mismatch");
  SpaceTimeField f = zero_field(b.time.grid, b.nodes);
  for (size_t k = 0; k < b.nodes.size(); ++k) {
    VectorXcd block = coeffs.segment((int)k * b.time.n, b.time.n);
    f.vals.col((int)k) = synth_time(b.time, block);
  }
  return f;
}

VectorXcd project_source(const SourceBasis& b, const SpaceTimeField& f) {
  if (f.elems != b.nodes) throw ConfigError("project_source: field is not on the basis nodes");
  if (f.time.nt != b.time.grid.nt) throw ConfigError("project_source: time grid mismatch");
  VectorXcd c(b.cols());
  for (size_t k = 0; k < b.nodes.size(); ++k)
    c.segment((int)k * b.time.n, b.time.n) = project_time(b.time, f.vals.col((int)k));
  return c;
}

double bump(double x) {
  if (std::abs(x) >= 1.0) return 0.0;
  double c = std::cos(1.5707963267948966 * x);
  return c * c * c * c;
}

double bump_d2(double x) {
  if (std::abs(x) >= 1.0) return 0.0;
  const double pi = 3.141592653589793;
  double th = 0.5 * pi * x;
  double c2 = std::cos(th) * std::cos(th);
  return -pi * pi * c2 * (4.0 * c2 - 3.0);
}

}  // namespace bc

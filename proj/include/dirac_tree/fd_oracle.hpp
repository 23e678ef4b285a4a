#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "edge_solver.hpp"
#include "graph.hpp"
#include "signal.hpp"
#include "tree_forward.hpp"

namespace dirac_tree {

/// Raised-cosine pulse of unit integral supported on [0, width].
inline Signal raised_cosine_bump(double dt, std::size_t samples, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("bump width must be positive");
  return Signal::from_function(dt, samples, [width](double t) -> cplx {
    if (t <= 0.0 || t >= width) return 0.0;
    return (1.0 - std::cos(2.0 * std::numbers::pi * t / width)) / width;
  });
}

/// Default regularised delta: width 8 dt.
inline Signal regularized_delta(double dt, std::size_t samples) { return raised_cosine_bump(dt, samples, 8.0 * dt); }

struct FdResult {
  SolutionField field;
  std::vector<double> norm;  // discrete L2 norm after each step
};

/// Finite-difference reference solver.
///
/// Unknowns are the Riemann variables a = (u1 - i u2)/2, b = (u1 + i u2)/2 at
/// cell centres, sampled at half-integer times (n + 1/2) dt.  A step is a
/// Strang split: half a step of the pointwise rotation a' = c b,
/// b' = -conj(c) a by the Cayley (Crank-Nicolson) rule, exact transport by one
/// cell with scattering at the vertices at the integer time in between, and
/// another half rotation.  Each part is unitary once the controls vanish.
inline FdResult fd_solve(const MetricTree& t, const BoundaryInput& input, std::size_t time_steps) {
  const double dt = t.dt;
  for (const auto& [v, s] : input.signals) {
    if (!s.atoms().empty()) throw std::invalid_argument("fd_solve needs regular-only inputs; regularise deltas first");
    if (v == t.root || !t.has_vertex(v) || !t.is_boundary(v))
      throw std::invalid_argument("inputs are only admitted at non-root leaves");
    if (s.size() < time_steps + 1) throw grid_error("input shorter than the horizon");
  }
  const std::size_t m = t.edges.size();
  std::vector<std::vector<cplx>> a(m), b(m), c(m);
  for (std::size_t k = 0; k < m; ++k) {
    const auto& e = t.edges[k];
    a[k].assign(e.cells, cplx{});
    b[k].assign(e.cells, cplx{});
    c[k].resize(e.cells);
    for (std::size_t j = 0; j < e.cells; ++j) {
      const double p = 0.5 * (e.potential.p[j] + e.potential.p[j + 1]);
      const double q = 0.5 * (e.potential.q[j] + e.potential.q[j + 1]);
      c[k][j] = cplx(q, p);
    }
  }

  FdResult res;
  res.field.dt = dt;
  res.field.edges.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    res.field.edges[k].edge = k;
    for (std::size_t xh : centre_positions(t.edges[k].cells))
      res.field.edges[k].traces.push_back({xh, Signal(dt, time_steps + 1), Signal(dt, time_steps + 1)});
  }

  auto rotate = [&](double tau) {
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < a[k].size(); ++j) {
        // (I - tau/2 M)^{-1} (I + tau/2 M) with M = [[0, c], [-conj c, 0]]
        const cplx cc = c[k][j], h = 0.5 * tau;
        const cplx ra = a[k][j] + h * cc * b[k][j];
        const cplx rb = b[k][j] - h * std::conj(cc) * a[k][j];
        const double det = 1.0 + h.real() * h.real() * std::norm(cc);
        a[k][j] = (ra + h * cc * rb) / det;
        b[k][j] = (rb - h * std::conj(cc) * ra) / det;
      }
    }
  };

  auto record = [&](std::size_t n) {
    double norm = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < a[k].size(); ++j) {
        auto& tr = res.field.edges[k].traces[j];
        tr.u1.regular()[n] = a[k][j] + b[k][j];
        tr.u2.regular()[n] = cplx(0, 1) * (a[k][j] - b[k][j]);
        norm += dt * (std::norm(a[k][j]) + std::norm(b[k][j]));
      }
    }
    res.norm.push_back(std::sqrt(norm));
  };

  std::vector<int> vertices = t.vertices;
  std::vector<std::vector<std::size_t>> edges_at(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) edges_at[i] = t.incident(vertices[i]);

  record(0);
  std::vector<cplx> in_head(m), in_tail(m), out_head(m), out_tail(m);
  for (std::size_t n = 0; n < time_steps; ++n) {
    rotate(0.5 * dt);
    // waves reaching the ends at time n + 1
    for (std::size_t k = 0; k < m; ++k) {
      in_head[k] = b[k].front();
      in_tail[k] = a[k].back();
    }
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      const int v = vertices[i];
      const auto& inc = edges_at[i];
      auto in_of = [&](std::size_t k) { return t.edges[k].head == v ? in_head[k] : in_tail[k]; };
      auto set_out = [&](std::size_t k, cplx val) { (t.edges[k].head == v ? out_head[k] : out_tail[k]) = val; };
      if (inc.size() == 1) {
        cplx f{};
        if (v != t.root) {
          auto it = input.signals.find(v);
          if (it != input.signals.end()) f = it->second.regular(n + 1);
        }
        set_out(inc[0], f - in_of(inc[0]));
      } else {
        cplx sum{};
        for (std::size_t k : inc) sum += in_of(k);
        const cplx g = 2.0 * sum / static_cast<double>(inc.size());
        for (std::size_t k : inc) set_out(k, g - in_of(k));
      }
    }
    for (std::size_t k = 0; k < m; ++k) {
      auto& ak = a[k];
      auto& bk = b[k];
      for (std::size_t j = ak.size() - 1; j > 0; --j) ak[j] = ak[j - 1];
      ak[0] = out_head[k];
      for (std::size_t j = 0; j + 1 < bk.size(); ++j) bk[j] = bk[j + 1];
      bk.back() = out_tail[k];
    }
    rotate(0.5 * dt);
    record(n + 1);
  }
  return res;
}

/// Relative discrete L2 distance ||a - b|| / ||b|| over all traces present in
/// both fields at matching positions.  Regular parts only.
inline double l2_compare(const SolutionField& a, const SolutionField& b) {
  if (std::abs(a.dt - b.dt) > 1e-15 || a.edges.size() != b.edges.size())
    throw grid_error("l2_compare: fields live on different grids");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.edges.size(); ++k) {
    for (const auto& ta : a.edges[k].traces) {
      for (const auto& tb : b.edges[k].traces) {
        if (ta.x_half != tb.x_half) continue;
        const std::size_t n = std::min(ta.u1.size(), tb.u1.size());
        for (std::size_t i = 0; i < n; ++i) {
          num += std::norm(ta.u1.regular(i) - tb.u1.regular(i)) + std::norm(ta.u2.regular(i) - tb.u2.regular(i));
          den += std::norm(tb.u1.regular(i)) + std::norm(tb.u2.regular(i));
        }
      }
    }
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

}  // namespace dirac_tree

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edge_solver.hpp"
#include "graph.hpp"
#include "signal.hpp"

namespace dirac_tree {

class inverse_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What the two leading atoms of a diagonal response reveal about the leaf
/// edge: its length and what sits at its far end.
struct EdgeReadout {
  std::size_t cells = 0;
  double length = 0.0;
  bool ends_at_root = false;  // far end is the Dirichlet root
  int degree = 0;             // degree of the far vertex when internal
  double ratio = 0.0;         // second atom amplitude over the first
};

/// For a free junction of degree N the echo from the far end of a leaf edge
/// has amplitude 2 (N - 2) / N relative to the direct atom i delta(t); the
/// root reflects with ratio 2.  Hence N = 4 / (2 - ratio).
inline EdgeReadout recover_length_and_degree(const Signal& diag, double tolerance = 1e-6) {
  const auto& atoms = diag.atoms();
  if (atoms.empty() || atoms.front().index != 0)
    throw inverse_error("diagonal response has no atom at t = 0");
  const cplx first = atoms.front().amplitude;
  if (std::abs(first - cplx(0, 1)) > tolerance) throw inverse_error("leading atom is not i delta(t)");
  if (atoms.size() < 2) throw inverse_error("horizon too short: no echo within the horizon");
  const auto& echo = atoms[1];
  if (echo.index % 2 != 0) throw inverse_error("echo time is not twice a grid length");

  EdgeReadout r;
  r.cells = echo.index / 2;
  r.length = diag.dt() * static_cast<double>(r.cells);
  const cplx ratio = echo.amplitude / first;
  if (std::abs(ratio.imag()) > tolerance) throw inverse_error("echo amplitude ratio is not real");
  r.ratio = ratio.real();
  if (std::abs(r.ratio - 2.0) <= tolerance) {
    r.ends_at_root = true;
    return r;
  }
  const double n = 4.0 / (2.0 - r.ratio);
  const double nr = std::round(n);
  if (!std::isfinite(n) || nr < 3.0 || std::abs(n - nr) > tolerance * std::max(1.0, n * n))
    throw inverse_error("echo amplitude ratio " + std::to_string(r.ratio) + " matches no vertex degree >= 3");
  r.degree = static_cast<int>(nr);
  return r;
}

enum class RecoveryBackend { strip, gauss_newton };

struct PotentialRecovery {
  EdgePotential potential;
  double misfit = 0.0;  // relative L2 misfit of the re-simulated data
  std::size_t iterations = 0;
};

namespace detail {

/// w2(0, t) of the plus kernel for t in [0, 2l), as a regular signal with the
/// half value at t = 0 (the form in which it appears in a response).
inline std::vector<cplx> simulate_leaf_window(const EdgePotential& pot, double dt) {
  const std::size_t cells = pot.cells();
  const std::size_t n = 2 * cells;
  const GoursatKernel K = march_goursat_kernel(pot, Direction::plus, dt, n - 1, {0});
  const Signal tr = K.trace(0, 1);
  return {tr.regular().begin(), tr.regular().begin() + static_cast<std::ptrdiff_t>(n)};
}

inline double relative_misfit(const std::vector<cplx>& model, const std::vector<cplx>& data) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    num += std::norm(model[i] - data[i]);
    den += std::norm(data[i]);
  }
  if (den < 1e-24) return std::sqrt(num);
  return std::sqrt(num / den);
}

/// Undoes the kernel march column by column.  Column 0 follows from the data
/// (alpha = -beta there); each further column needs the coupling at its node,
/// fixed by the diagonal condition beta(x, x) = -conj(c(x)) / 2.
inline std::vector<cplx> strip_layers(const std::vector<cplx>& window, double dt, std::size_t cells,
                                      std::size_t& iterations) {
  const std::size_t nh = 4 * cells;  // levels 0 .. nh - 2 carry data
  const double h = 0.5 * dt;
  const cplx I(0, 1);
  // columns indexed by level; only levels of matching parity are meaningful
  std::vector<cplx> a(nh), b(nh), an(nh), bn(nh);
  for (std::size_t m = 0; 2 * m + 2 <= nh; ++m) {
    const cplx w2 = m == 0 ? 2.0 * window[0] : window[m];
    b[2 * m] = 0.5 * I * w2;
    a[2 * m] = -b[2 * m];
  }
  std::vector<cplx> c(2 * cells + 1);
  c[0] = -2.0 * std::conj(b[0]);
  std::size_t top = nh - 2;  // highest level available in the current column
  for (std::size_t i = 0; i + 1 < 2 * cells; ++i) {
    // node (i+1, i+1): F1 from (i, i), F2 at (i, i+2), diagonal condition
    cplx ci1 = c[i];
    cplx ad{}, bd{};
    for (int it = 0; it < 50; ++it) {
      ++iterations;
      // alpha = a[i] + h/2 (c_i b[i] + c_{i+1} beta);  b[i+2] = beta - h/2 (conj c_{i+1} alpha + conj c_i a[i+2])
      const cplx P = a[i] + 0.5 * h * c[i] * b[i];
      const cplx Qv = b[i + 2] + 0.5 * h * std::conj(c[i]) * a[i + 2];
      // alpha = P + h/2 ci1 beta; beta = Qv + h/2 conj(ci1) alpha
      const cplx k1 = 0.5 * h * ci1, k2 = 0.5 * h * std::conj(ci1);
      bd = (Qv + k2 * P) / (1.0 - k1 * k2);
      ad = P + k1 * bd;
      const cplx next = -2.0 * std::conj(bd);
      const bool done = std::abs(next - ci1) <= 1e-15 * std::max(1.0, std::abs(next));
      ci1 = next;
      if (done) break;
    }
    c[i + 1] = ci1;
    // rebuild the whole next column: nodes (i+1, n-1) for n = i+2, i+4, ... <= top
    an.assign(nh, cplx{});
    bn.assign(nh, cplx{});
    an[i + 1] = ad;
    bn[i + 1] = bd;
    for (std::size_t n = i + 4; n <= top; n += 2) {
      const cplx P = a[n - 2] + 0.5 * h * c[i] * b[n - 2];
      const cplx Qv = b[n] + 0.5 * h * std::conj(c[i]) * a[n];
      const cplx k1 = 0.5 * h * c[i + 1], k2 = 0.5 * h * std::conj(c[i + 1]);
      bn[n - 1] = (Qv + k2 * P) / (1.0 - k1 * k2);
      an[n - 1] = P + k1 * bn[n - 1];
    }
    std::swap(a, an);
    std::swap(b, bn);
    --top;
  }
  // the node at x = l is never reached by data from [0, 2l); extrapolate
  const std::size_t last = 2 * cells;
  c[last] = last >= 2 ? 2.0 * c[last - 1] - c[last - 2] : c[last - 1];
  return c;
}

inline EdgePotential potential_from_half_nodes(const std::vector<cplx>& c, std::size_t cells) {
  EdgePotential pot = EdgePotential::zero(cells);
  for (std::size_t j = 0; j <= cells; ++j) {
    pot.q[j] = c[2 * j].real();
    pot.p[j] = c[2 * j].imag();
  }
  return pot;
}

inline EdgePotential coarse_to_grid(const Eigen::VectorXd& x, std::size_t nodes, std::size_t cells) {
  EdgePotential pot = EdgePotential::zero(cells);
  for (std::size_t j = 0; j <= cells; ++j) {
    const double s = static_cast<double>(j) / static_cast<double>(cells) * static_cast<double>(nodes - 1);
    const auto i = std::min(static_cast<std::size_t>(s), nodes - 2);
    const double w = s - static_cast<double>(i);
    pot.p[j] = (1.0 - w) * x[static_cast<Eigen::Index>(i)] + w * x[static_cast<Eigen::Index>(i + 1)];
    pot.q[j] = (1.0 - w) * x[static_cast<Eigen::Index>(nodes + i)] + w * x[static_cast<Eigen::Index>(nodes + i + 1)];
  }
  return pot;
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit of piecewise-linear p, q on
/// a coarse node set, finite-difference Jacobian.
inline PotentialRecovery fit_gauss_newton(const std::vector<cplx>& window, double dt, std::size_t cells,
                                          std::size_t nodes, std::size_t max_iterations) {
  nodes = std::clamp<std::size_t>(nodes, 2, cells + 1);
  const auto n_par = static_cast<Eigen::Index>(2 * nodes);
  const auto n_res = static_cast<Eigen::Index>(2 * window.size());
  auto residual = [&](const Eigen::VectorXd& x) {
    const auto model = simulate_leaf_window(coarse_to_grid(x, nodes, cells), dt);
    Eigen::VectorXd r(n_res);
    for (std::size_t i = 0; i < window.size(); ++i) {
      r[static_cast<Eigen::Index>(2 * i)] = (model[i] - window[i]).real();
      r[static_cast<Eigen::Index>(2 * i + 1)] = (model[i] - window[i]).imag();
    }
    return r;
  };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n_par);
  Eigen::VectorXd r = residual(x);
  double cost = r.squaredNorm(), lambda = 1e-3;
  PotentialRecovery out;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd J(n_res, n_par);
    const double eps = 1e-6;
    for (Eigen::Index j = 0; j < n_par; ++j) {
      Eigen::VectorXd xp = x;
      xp[j] += eps;
      J.col(j) = (residual(xp) - r) / eps;
    }
    const Eigen::MatrixXd A = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    bool improved = false;
    for (int tries = 0; tries < 10 && !improved; ++tries) {
      Eigen::MatrixXd damped = A;
      damped.diagonal().array() += lambda * (A.diagonal().array() + 1e-12);
      const Eigen::VectorXd step = damped.ldlt().solve(-g);
      const Eigen::VectorXd xn = x + step;
      const Eigen::VectorXd rn = residual(xn);
      if (rn.squaredNorm() < cost) {
        x = xn;
        r = rn;
        const double gain = cost - rn.squaredNorm();
        cost = rn.squaredNorm();
        lambda = std::max(lambda / 3.0, 1e-9);
        improved = true;
        if (gain < 1e-14 * std::max(1.0, cost)) it = max_iterations;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  out.potential = coarse_to_grid(x, nodes, cells);
  return out;
}

}  // namespace detail

struct RecoveryOptions {
  RecoveryBackend backend = RecoveryBackend::strip;
  double misfit_tolerance = 0.02;
  std::size_t gn_nodes = 17;
  std::size_t gn_iterations = 30;
};

/// Potential of a leaf edge of `cells` grid cells from the regular part of its
/// diagonal response on [0, 2l).  Only that window is read.  The result is
/// re-simulated and rejected when the relative misfit exceeds the tolerance.
inline PotentialRecovery recover_potential(const Signal& diag, std::size_t cells, const RecoveryOptions& opt = {}) {
  if (cells == 0) throw std::invalid_argument("edge must span at least one cell");
  if (diag.size() < 2 * cells) throw inverse_error("horizon too short for potential recovery");
  const double dt = diag.dt();
  const std::vector<cplx> window(diag.regular().begin(), diag.regular().begin() + static_cast<std::ptrdiff_t>(2 * cells));

  PotentialRecovery out;
  if (opt.backend == RecoveryBackend::strip) {
    std::size_t its = 0;
    out.potential = detail::potential_from_half_nodes(detail::strip_layers(window, dt, cells, its), cells);
    out.iterations = its;
  } else {
    out = detail::fit_gauss_newton(window, dt, cells, opt.gn_nodes, opt.gn_iterations);
  }
  out.misfit = detail::relative_misfit(detail::simulate_leaf_window(out.potential, dt), window);
  if (!(out.misfit <= opt.misfit_tolerance))
    throw inverse_error("potential recovery misfit " + std::to_string(out.misfit) + " exceeds tolerance " +
                        std::to_string(opt.misfit_tolerance));
  return out;
}

}  // namespace dirac_tree

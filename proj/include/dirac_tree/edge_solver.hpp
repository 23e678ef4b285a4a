#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "graph.hpp"
#include "signal.hpp"

namespace dirac_tree {

/// plus: control at x = 0; minus: control at x = l.
enum class Direction { plus, minus };
enum class Side { left, right };  // left is x = 0, right is x = l

namespace detail {

inline std::size_t steps_of(double t, double dt) {
  const double s = t / dt;
  if (t < 0.0 || std::abs(s - std::round(s)) > 1e-6) throw grid_error("time is not a grid multiple");
  return static_cast<std::size_t>(std::llround(s));
}

}  // namespace detail

/// Coupling c = q + i p of the folded potential on the half-step grid
/// y = i dt/2.  On the images [m l, (m+1) l] with odd m the edge is mirrored,
/// which maps c to -conj(c) (p even, q odd under the fold).
class FoldedCoupling {
 public:
  FoldedCoupling(const EdgePotential& pot, Direction dir)
      : pot_(dir == Direction::plus ? pot : mirrored(pot)), cells_(pot.cells()) {
    if (cells_ == 0) throw std::invalid_argument("edge potential needs at least two samples");
  }

  /// Potential as seen from x = l looking back: p(l - x), -q(l - x).
  static EdgePotential mirrored(const EdgePotential& pot) {
    EdgePotential r = pot.reversed();
    for (auto& v : r.q) v = -v;
    return r;
  }

  std::size_t image_of_segment(std::size_t i_left) const { return i_left / (2 * cells_); }

  /// c at half-step node i as seen from image m (the node must lie in it).
  cplx at(std::size_t i, std::size_t m) const {
    const std::size_t span = 2 * cells_;
    const std::size_t local = i - m * span;
    const std::size_t xh = (m % 2 == 0) ? local : span - local;
    double p, q;
    if (xh % 2 == 0) {
      p = pot_.p[xh / 2];
      q = pot_.q[xh / 2];
    } else {
      p = 0.5 * (pot_.p[xh / 2] + pot_.p[xh / 2 + 1]);
      q = 0.5 * (pot_.q[xh / 2] + pot_.q[xh / 2 + 1]);
    }
    return (m % 2 == 0) ? cplx(q, p) : cplx(-q, p);
  }

  /// Node value for the kernel diagonal: the mean of both sides at fold points.
  cplx diagonal(std::size_t i) const {
    const std::size_t span = 2 * cells_;
    if (i > 0 && i % span == 0) return 0.5 * (at(i, i / span - 1) + at(i, i / span));
    return at(i, i / span);
  }

 private:
  EdgePotential pot_;
  std::size_t cells_;
};

struct ExtendedPotential {
  std::vector<double> p;
  std::vector<double> q;
};

/// Folds the edge potential out to [0, horizon] on the edge grid.  Nodes where
/// the odd extension of q jumps hold the mean of both sides.
inline ExtendedPotential fold_extension(const EdgePotential& pot, Direction dir, double horizon, double dt) {
  const std::size_t n = detail::steps_of(horizon, dt);
  FoldedCoupling c(pot, dir);
  ExtendedPotential out{std::vector<double>(n + 1), std::vector<double>(n + 1)};
  for (std::size_t k = 0; k <= n; ++k) {
    const cplx v = c.diagonal(2 * k);
    out.p[k] = v.imag();
    out.q[k] = v.real();
  }
  return out;
}

/// Goursat kernel W = (w1, w2) of the half-line problem with the folded
/// potential, stored as columns x = const.  Column keys are x in half steps
/// (dt/2); a column with odd key lives on the time grid shifted by dt/2.
/// Entry k of a column is W(x, t_k) with t_k = k dt (+ dt/2 for odd keys);
/// entries with t_k < x are zero.
struct GoursatKernel {
  Direction direction = Direction::plus;
  double dt = 1.0;
  std::size_t time_samples = 0;
  std::map<std::size_t, std::vector<std::array<cplx, 2>>> columns;

  bool has(std::size_t x_half) const { return columns.count(x_half) != 0; }

  const std::vector<std::array<cplx, 2>>& column(std::size_t x_half) const {
    auto it = columns.find(x_half);
    if (it == columns.end()) throw std::out_of_range("kernel column not computed");
    return it->second;
  }

  /// Component (0: w1, 1: w2) as a regular Signal; the first sample of the
  /// column is halved since the kernel switches on there.
  Signal trace(std::size_t x_half, int component) const {
    const auto& col = column(x_half);
    Signal s(dt, time_samples);
    const std::size_t start = x_half / 2;
    for (std::size_t k = start; k < time_samples; ++k) s.regular()[k] = col[k][component];
    if (start < time_samples) s.regular()[start] *= 0.5;
    return s;
  }
};

/// Marches the kernel system
///   alpha_t + alpha_x = c beta,  beta_t - beta_x = -conj(c) alpha,
///   beta(x, x) = -conj(c(x)) / 2,  alpha(0, t) = -beta(0, t),
/// with w1 = alpha + beta, w2 = i (alpha - beta), on the checkerboard grid of
/// step dt/2 using trapezoidal integrals along both characteristic families.
/// Only the requested columns are kept.
inline GoursatKernel march_goursat_kernel(const EdgePotential& pot, Direction dir, double dt,
                                          std::size_t time_steps, const std::set<std::size_t>& x_half_columns) {
  GoursatKernel K;
  K.direction = dir;
  K.dt = dt;
  K.time_samples = time_steps + 1;
  const std::size_t nh = 2 * time_steps;
  for (std::size_t xh : x_half_columns)
    if (xh <= nh + 1) K.columns[xh].assign(K.time_samples, {cplx{}, cplx{}});

  if (pot.is_zero()) return K;

  const FoldedCoupling c(pot, dir);
  const double h = 0.5 * dt;
  // Node values of c seen from the segment on the left (cl) and on the right
  // (cr) of each node; they differ only at fold points.
  std::vector<cplx> cl(nh + 2), cr(nh + 2), cd(nh + 2);
  for (std::size_t i = 0; i <= nh + 1; ++i) {
    cr[i] = c.at(i, c.image_of_segment(i));
    cl[i] = i == 0 ? cr[i] : c.at(i, c.image_of_segment(i - 1));
    cd[i] = c.diagonal(i);
  }
  std::vector<std::pair<std::size_t, std::vector<std::array<cplx, 2>>*>> record_list;
  for (auto& [xh, col] : K.columns) record_list.emplace_back(xh, &col);

  std::vector<cplx> a_prev(nh + 2), b_prev(nh + 2), a_cur(nh + 2), b_cur(nh + 2);
  const cplx I(0, 1);
  // One level past 2 T so that the shifted columns reach their last sample.
  for (std::size_t n = 0; n <= nh + 1; ++n) {
    // diagonal
    b_cur[n] = -std::conj(cd[n]) * 0.5;
    if (n == 0) {
      a_cur[0] = -b_cur[0];
    } else {
      a_cur[n] = a_prev[n - 1] + 0.5 * h * (cr[n - 1] * b_prev[n - 1] + cl[n] * b_cur[n]);
    }
    // interior nodes of this level, i = n-2, n-4, ...
    for (std::size_t i = n; i >= 3;) {
      i -= 2;
      const cplx ca0 = cr[i - 1], ca1 = cl[i];
      const cplx cb0 = cr[i], cb1 = cl[i + 1];
      const cplx P = a_prev[i - 1] + 0.5 * h * ca0 * b_prev[i - 1];
      const cplx Qv = b_prev[i + 1] - 0.5 * h * std::conj(cb1) * a_prev[i + 1];
      const cplx alpha = (P + 0.5 * h * ca1 * Qv) / (1.0 + 0.25 * h * h * ca1 * std::conj(cb0));
      a_cur[i] = alpha;
      b_cur[i] = Qv - 0.5 * h * std::conj(cb0) * alpha;
    }
    // boundary x = 0 on even levels
    if (n >= 2 && n % 2 == 0) {
      const cplx Qv = b_prev[1] - 0.5 * h * std::conj(cl[1]) * a_prev[1];
      b_cur[0] = Qv / (1.0 - 0.5 * h * std::conj(cr[0]));
      a_cur[0] = -b_cur[0];
    }
    const std::size_t k = n / 2;
    if (k < K.time_samples) {
      for (auto& [xh, col] : record_list) {
        if (xh > n) break;
        if ((n - xh) % 2 == 0) (*col)[k] = {a_cur[xh] + b_cur[xh], I * (a_cur[xh] - b_cur[xh])};
      }
    }
    std::swap(a_prev, a_cur);
    std::swap(b_prev, b_cur);
  }
  return K;
}

/// Columns needed for the boundary traces: x = 0, l, 2l, ... up to the horizon.
inline std::set<std::size_t> trace_columns(std::size_t cells, std::size_t time_steps) {
  std::set<std::size_t> cols;
  for (std::size_t y = 0; y <= time_steps; y += cells) cols.insert(2 * y);
  return cols;
}

/// Columns needed to evaluate the field at the half-step positions `x_half`.
inline std::set<std::size_t> field_columns(std::size_t cells, std::size_t time_steps,
                                           const std::vector<std::size_t>& x_half) {
  std::set<std::size_t> cols = trace_columns(cells, time_steps);
  const std::size_t span = 4 * cells, nh = 2 * time_steps + 1;
  for (std::size_t xh : x_half) {
    for (std::size_t base = 0; base <= nh + xh; base += span) {
      if (base + xh <= nh) cols.insert(base + xh);
      if (base >= xh && base > 0 && base - xh <= nh) cols.insert(base - xh);
    }
  }
  return cols;
}

/// Both kernels of an edge out to `time_steps`.
struct EdgeKernels {
  GoursatKernel plus;
  GoursatKernel minus;
};

inline EdgeKernels compute_goursat_kernels(const Edge& e, double dt, std::size_t time_steps,
                                           const std::vector<std::size_t>& field_x_half = {}) {
  const auto cols = field_columns(e.cells, time_steps, field_x_half);
  std::vector<std::size_t> mirrored;
  for (std::size_t xh : field_x_half) mirrored.push_back(2 * e.cells - xh);
  const auto cols_minus = field_columns(e.cells, time_steps, mirrored);
  return {march_goursat_kernel(e.potential, Direction::plus, dt, time_steps, cols),
          march_goursat_kernel(e.potential, Direction::minus, dt, time_steps, cols_minus)};
}

/// Convenience overload taking the horizon as a time.
inline EdgeKernels compute_goursat_kernels(const Edge& e, double dt, double horizon) {
  return compute_goursat_kernels(e, dt, detail::steps_of(horizon, dt));
}

/// Boundary-trace operators of one edge.  Every end trace of a single-end
/// control is a convolution of the control with one of these signals.
struct EdgeOperators {
  std::size_t cells = 0;
  /// Outward u2 at the actuated end: u2(0) for head control, -u2(l) for tail.
  Signal self_head, self_tail;
  /// Outward u2 at the far end: -u2(l) for head control, u2(0) for tail.
  Signal transfer_from_head, transfer_from_tail;
};

namespace detail {

inline Signal self_operator(const GoursatKernel& K, std::size_t cells) {
  const std::size_t n = K.time_samples;
  const cplx I(0, 1);
  Signal s = K.trace(0, 1);
  s.add_atom(0, I);
  for (std::size_t y = 2 * cells; y < n; y += 2 * cells) {
    Signal w = K.trace(2 * y, 1);
    w.add_atom(y, I);
    s = add_scale({{1.0, s}, {2.0, w}});
  }
  return s;
}

inline Signal transfer_operator(const GoursatKernel& K, std::size_t cells) {
  const std::size_t n = K.time_samples;
  const cplx I(0, 1);
  Signal s(K.dt, n);
  for (std::size_t y = cells; y < n; y += 2 * cells) {
    Signal w = K.trace(2 * y, 1);
    w.add_atom(y, I);
    s = add_scale({{1.0, s}, {-2.0, w}});
  }
  return s;
}

}  // namespace detail

inline EdgeOperators edge_operators(const EdgeKernels& k, std::size_t cells) {
  EdgeOperators ops;
  ops.cells = cells;
  ops.self_head = detail::self_operator(k.plus, cells);
  ops.self_tail = detail::self_operator(k.minus, cells);
  ops.transfer_from_head = detail::transfer_operator(k.plus, cells);
  ops.transfer_from_tail = detail::transfer_operator(k.minus, cells);
  return ops;
}

/// u2 trace at `observed` for a control applied at `actuated`, with the
/// observation signs u2(0, t) at x = 0 and -u2(l, t) at x = l.
inline Signal boundary_trace(const EdgeOperators& ops, Side actuated, Side observed, const Signal& input) {
  const Signal* op = nullptr;
  if (actuated == Side::left) op = observed == Side::left ? &ops.self_head : &ops.transfer_from_head;
  else op = observed == Side::right ? &ops.self_tail : &ops.transfer_from_tail;
  return convolve(*op, input);
}

/// Time series of U at one position of an edge.  Position x = x_half dt/2;
/// when x_half is odd the samples sit at times (k + 1/2) dt.
struct FieldTrace {
  std::size_t x_half = 0;
  Signal u1, u2;
  bool offset() const { return x_half % 2 == 1; }
};

struct EdgeField {
  std::size_t edge = 0;
  std::vector<FieldTrace> traces;
};

struct SolutionField {
  double dt = 1.0;
  std::vector<EdgeField> edges;
};

namespace detail {

/// op1/op2 of the plus representation at half-step position xh:
/// U(x) = sum_n V(2nl + x) + sum_{n>=1} diag(-1, 1) V(2nl - x).
inline std::array<Signal, 2> plus_position_operators(const GoursatKernel& K, std::size_t cells, std::size_t xh) {
  const std::size_t n = K.time_samples, span = 4 * cells, nh = 2 * (n - 1) + 1;
  const cplx I(0, 1);
  std::array<Signal, 2> op{Signal(K.dt, n), Signal(K.dt, n)};
  auto add = [&](std::size_t yh, double s1) {
    if (yh > nh) return;
    if (!K.has(yh)) throw std::logic_error("missing kernel column");
    Signal w1 = K.trace(yh, 0), w2 = K.trace(yh, 1);
    w1.add_atom(yh / 2, 1.0);
    w2.add_atom(yh / 2, I);
    op[0] = add_scale({{1.0, op[0]}, {s1, w1}});
    op[1] = add_scale({{1.0, op[1]}, {1.0, w2}});
  };
  for (std::size_t base = 0; base <= nh + xh; base += span) {
    add(base + xh, 1.0);
    if (base > 0 && base >= xh) add(base - xh, -1.0);
  }
  return op;
}

}  // namespace detail

/// Field on one edge produced by a control at one end with the other end held
/// at u1 = 0, sampled at half-step positions `x_half`.
inline EdgeField forward_from_end(const Edge& e, const EdgeKernels& k, Side side, const Signal& input,
                                  const std::vector<std::size_t>& x_half) {
  EdgeField f;
  for (std::size_t xh : x_half) {
    if (xh > 2 * e.cells) throw std::out_of_range("field position outside the edge");
    FieldTrace tr;
    tr.x_half = xh;
    if (side == Side::left) {
      const auto op = detail::plus_position_operators(k.plus, e.cells, xh);
      tr.u1 = convolve(op[0], input);
      tr.u2 = convolve(op[1], input);
    } else {
      // U(x) = diag(1, -1) U~(l - x) with U~ the plus solution of the mirrored edge.
      const auto op = detail::plus_position_operators(k.minus, e.cells, 2 * e.cells - xh);
      tr.u1 = convolve(op[0], input);
      tr.u2 = -1.0 * convolve(op[1], input);
    }
    f.traces.push_back(std::move(tr));
  }
  return f;
}

/// Evenly spaced half-step positions with the given stride (in dt), always
/// including both ends.
inline std::vector<std::size_t> node_positions(std::size_t cells, std::size_t stride = 1) {
  std::vector<std::size_t> xs;
  for (std::size_t j = 0; j < cells; j += std::max<std::size_t>(1, stride)) xs.push_back(2 * j);
  xs.push_back(2 * cells);
  return xs;
}

/// Cell-centre positions (odd half-step indices).
inline std::vector<std::size_t> centre_positions(std::size_t cells, std::size_t stride = 1) {
  std::vector<std::size_t> xs;
  for (std::size_t j = 0; j < cells; j += std::max<std::size_t>(1, stride)) xs.push_back(2 * j + 1);
  return xs;
}

}  // namespace dirac_tree

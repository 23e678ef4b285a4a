#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "edge_solver.hpp"
#include "graph.hpp"
#include "signal.hpp"

namespace dirac_tree {

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  for (unsigned w = 0; w < std::min<std::size_t>(threads, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Controls at the non-root leaves, keyed by vertex id.  Missing leaves are
/// held at zero; the root is always homogeneous.
struct BoundaryInput {
  std::map<int, Signal> signals;
};

/// u1 at every internal vertex.
struct InteriorTraces {
  std::map<int, Signal> g;
};

enum class FieldLayout { none, nodes, centres };

/// Kernels and trace operators of every edge for a fixed grid and horizon.
class ForwardModel {
 public:
  ForwardModel(MetricTree tree, std::size_t time_steps, FieldLayout layout = FieldLayout::none,
               std::size_t stride = 1, unsigned threads = 1)
      : tree_(std::move(tree)), steps_(time_steps), layout_(layout), stride_(stride) {
    const std::size_t m = tree_.edges.size();
    kernels_.resize(m);
    ops_.resize(m);
    positions_.resize(m);
    parallel_for(m, threads, [&](std::size_t k) {
      const Edge& e = tree_.edges[k];
      if (layout_ == FieldLayout::nodes) positions_[k] = node_positions(e.cells, stride_);
      if (layout_ == FieldLayout::centres) positions_[k] = centre_positions(e.cells, stride_);
      kernels_[k] = compute_goursat_kernels(e, tree_.dt, steps_, positions_[k]);
      ops_[k] = edge_operators(kernels_[k], e.cells);
    });
  }

  const MetricTree& tree() const { return tree_; }
  double dt() const { return tree_.dt; }
  std::size_t time_steps() const { return steps_; }
  std::size_t samples() const { return steps_ + 1; }
  FieldLayout layout() const { return layout_; }
  const EdgeKernels& kernels(std::size_t k) const { return kernels_[k]; }
  const EdgeOperators& ops(std::size_t k) const { return ops_[k]; }
  const std::vector<std::size_t>& positions(std::size_t k) const { return positions_[k]; }

  Signal zero() const { return Signal(dt(), samples()); }
  Signal delta() const { return Signal::delta(dt(), samples()); }

  /// Outward u2 operator at vertex v for a control at v on edge k.
  const Signal& self_at(std::size_t k, int v) const {
    return tree_.edges[k].head == v ? ops_[k].self_head : ops_[k].self_tail;
  }
  /// Outward u2 operator at vertex v for a control at the opposite end of edge k.
  const Signal& transfer_to(std::size_t k, int v) const {
    return tree_.edges[k].head == v ? ops_[k].transfer_from_tail : ops_[k].transfer_from_head;
  }

 private:
  MetricTree tree_;
  std::size_t steps_;
  FieldLayout layout_;
  std::size_t stride_;
  std::vector<EdgeKernels> kernels_;
  std::vector<EdgeOperators> ops_;
  std::vector<std::vector<std::size_t>> positions_;
};

/// One interior-vertex equation
///   i deg(v) g_v + K_v * g_v + sum_couplings X * g_w = G_v,
/// where K_v collects everything of the incident self operators except the
/// leading i deg(v) delta, and the couplings reach internal neighbours w.
struct VertexEquation {
  int vertex = 0;
  cplx lead;
  Signal kernel;
  struct Coupling {
    std::size_t edge;
    int neighbour;
    const Signal* transfer;
  };
  std::vector<Coupling> couplings;
  Signal forcing;  // contributions of the leaf controls, already convolved
};

struct InteriorSystem {
  std::vector<VertexEquation> equations;
  std::size_t block = 1;  // marching block in grid steps
};

inline const Signal& input_at(const ForwardModel& m, const BoundaryInput& in, int v, Signal& scratch) {
  auto it = in.signals.find(v);
  if (it == in.signals.end()) {
    scratch = m.zero();
    return scratch;
  }
  if (it->second.size() != m.samples() || std::abs(it->second.dt() - m.dt()) > 1e-15)
    throw grid_error("boundary input does not match the model grid");
  return it->second;
}

inline InteriorSystem assemble_interior_system(const ForwardModel& m, const BoundaryInput& in) {
  const MetricTree& t = m.tree();
  for (const auto& [v, s] : in.signals)
    if (v == t.root || !t.has_vertex(v) || !t.is_boundary(v))
      throw std::invalid_argument("inputs are only admitted at non-root leaves");
  InteriorSystem sys;
  sys.block = t.min_edge_cells();
  for (int v : t.internal_vertices()) {
    VertexEquation eq;
    eq.vertex = v;
    const auto inc = t.incident(v);
    eq.lead = cplx(0.0, static_cast<double>(inc.size()));
    std::vector<std::pair<cplx, Signal>> self_terms, forcing_terms;
    for (std::size_t k : inc) {
      self_terms.emplace_back(1.0, m.self_at(k, v));
      const int w = t.other_end(k, v);
      if (t.is_internal(w)) {
        eq.couplings.push_back({k, w, &m.transfer_to(k, v)});
      } else if (w != t.root) {
        Signal scratch;
        forcing_terms.emplace_back(-1.0, convolve(m.transfer_to(k, v), input_at(m, in, w, scratch)));
      }
    }
    eq.kernel = add_scale(self_terms);
    eq.kernel.add_atom(0, -eq.lead);
    forcing_terms.emplace_back(0.0, m.zero());
    eq.forcing = add_scale(forcing_terms);
    sys.equations.push_back(std::move(eq));
  }
  return sys;
}

namespace detail {

/// (X * g)[n] from the first n (or more) marched samples of g; X must vanish
/// below index 1 so only history is read.
inline std::pair<cplx, cplx> lagged_convolution_at(const Signal& x, const VolterraMarcher& g, std::size_t n,
                                                   std::size_t first) {
  const auto& ga = g.atom_history();
  const auto& gr = g.regular_history();
  const auto& xr = x.regular();
  const double dt = x.dt();
  cplx atom{}, reg{};
  for (const auto& a : x.atoms()) {
    if (a.index > n) break;
    atom += a.amplitude * ga[n - a.index];
    reg += a.amplitude * gr[n - a.index];
  }
  for (std::size_t j = first; j <= n && j < xr.size(); ++j) reg += xr[j] * (ga[n - j] + dt * gr[n - j]);
  return {atom, reg};
}

}  // namespace detail

/// Marches all vertex equations jointly.  Coupling delays are at least one
/// edge length, so within a block of l_min steps every coupling term reads
/// only finished samples and the per-vertex equations decouple.
inline InteriorTraces solve_interior_traces(const ForwardModel& m, const InteriorSystem& sys) {
  const std::size_t n_total = m.samples();
  std::vector<VolterraMarcher> marchers;
  marchers.reserve(sys.equations.size());
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < sys.equations.size(); ++i) {
    marchers.emplace_back(sys.equations[i].lead, sys.equations[i].kernel, n_total);
    slot[sys.equations[i].vertex] = i;
  }
  const std::size_t block = std::max<std::size_t>(1, sys.block);
  std::vector<std::vector<cplx>> ra(marchers.size()), rr(marchers.size());
  for (std::size_t begin = 0; begin < n_total; begin += block) {
    const std::size_t end = std::min(n_total, begin + block);
    for (std::size_t i = 0; i < marchers.size(); ++i) {
      const auto& eq = sys.equations[i];
      ra[i].assign(end - begin, cplx{});
      rr[i].assign(end - begin, cplx{});
      for (std::size_t n = begin; n < end; ++n) {
        cplx a = eq.forcing.atom_at(n), r = eq.forcing.regular(n);
        for (const auto& c : eq.couplings) {
          const auto first = m.tree().edges[c.edge].cells;
          const auto [ca, cr] = detail::lagged_convolution_at(*c.transfer, marchers[slot.at(c.neighbour)], n, first);
          a -= ca;
          r -= cr;
        }
        ra[i][n - begin] = a;
        rr[i][n - begin] = r;
      }
    }
    for (std::size_t i = 0; i < marchers.size(); ++i)
      for (std::size_t n = begin; n < end; ++n) marchers[i].step(ra[i][n - begin], rr[i][n - begin]);
  }
  InteriorTraces out;
  for (std::size_t i = 0; i < marchers.size(); ++i) out.g[sys.equations[i].vertex] = marchers[i].result();
  return out;
}

inline InteriorTraces solve_interior_traces(const ForwardModel& m, const BoundaryInput& in) {
  return solve_interior_traces(m, assemble_interior_system(m, in));
}

/// u1 at vertex v: the control at a leaf, zero at the root, the trace inside.
inline Signal vertex_value(const ForwardModel& m, const BoundaryInput& in, const InteriorTraces& tr, int v) {
  if (v == m.tree().root) return m.zero();
  if (auto it = tr.g.find(v); it != tr.g.end()) return it->second;
  Signal scratch;
  return input_at(m, in, v, scratch);
}

/// Outward u2 at a non-root leaf.
inline Signal leaf_response(const ForwardModel& m, const BoundaryInput& in, const InteriorTraces& tr, int leaf) {
  const std::size_t k = m.tree().leaf_edge(leaf);
  const Edge& e = m.tree().edges[k];
  return convolve(m.ops(k).self_head, vertex_value(m, in, tr, leaf)) +
         convolve(m.ops(k).transfer_from_tail, vertex_value(m, in, tr, e.tail));
}

/// Superposes both end contributions on every edge at the model's positions.
inline SolutionField forward_solve(const ForwardModel& m, const BoundaryInput& in, unsigned threads = 1) {
  if (m.layout() == FieldLayout::none) throw std::logic_error("model built without field positions");
  const InteriorTraces tr = solve_interior_traces(m, in);
  SolutionField f;
  f.dt = m.dt();
  f.edges.resize(m.tree().edges.size());
  parallel_for(m.tree().edges.size(), threads, [&](std::size_t k) {
    const Edge& e = m.tree().edges[k];
    EdgeField ef = forward_from_end(e, m.kernels(k), Side::left, vertex_value(m, in, tr, e.head), m.positions(k));
    if (e.tail != m.tree().root) {
      const EdgeField other =
          forward_from_end(e, m.kernels(k), Side::right, vertex_value(m, in, tr, e.tail), m.positions(k));
      for (std::size_t i = 0; i < ef.traces.size(); ++i) {
        ef.traces[i].u1 = ef.traces[i].u1 + other.traces[i].u1;
        ef.traces[i].u2 = ef.traces[i].u2 + other.traces[i].u2;
      }
    }
    ef.edge = k;
    f.edges[k] = std::move(ef);
  });
  return f;
}

/// R(k, j): u2 at leaf k for a delta control at leaf j.
struct ResponseMatrix {
  double dt = 1.0;
  std::size_t samples = 0;
  std::vector<int> leaves;
  std::map<std::pair<int, int>, Signal> entries;

  double horizon() const { return dt * static_cast<double>(samples - 1); }
  const Signal& at(int k, int j) const {
    auto it = entries.find({k, j});
    if (it == entries.end()) throw std::out_of_range("response entry missing");
    return it->second;
  }
};

inline ResponseMatrix response_matrix(const ForwardModel& m, unsigned threads = 1) {
  ResponseMatrix r;
  r.dt = m.dt();
  r.samples = m.samples();
  r.leaves = m.tree().leaves();
  std::vector<std::vector<Signal>> cols(r.leaves.size());
  parallel_for(r.leaves.size(), threads, [&](std::size_t jj) {
    BoundaryInput in;
    in.signals[r.leaves[jj]] = m.delta();
    const InteriorTraces tr = solve_interior_traces(m, in);
    for (int k : r.leaves) cols[jj].push_back(leaf_response(m, in, tr, k));
  });
  for (std::size_t jj = 0; jj < r.leaves.size(); ++jj)
    for (std::size_t kk = 0; kk < r.leaves.size(); ++kk)
      r.entries[{r.leaves[kk], r.leaves[jj]}] = cols[jj][kk];
  return r;
}

inline ResponseMatrix response_matrix(const MetricTree& t, double horizon, unsigned threads = 1) {
  return response_matrix(ForwardModel(t, detail::steps_of(horizon, t.dt), FieldLayout::none, 1, threads), threads);
}

namespace detail {

inline const FieldTrace& nearest_trace(const EdgeField& ef, std::size_t target) {
  const FieldTrace* best = nullptr;
  std::size_t best_d = 0;
  for (const auto& tr : ef.traces) {
    const std::size_t d = tr.x_half > target ? tr.x_half - target : target - tr.x_half;
    if (!best || d < best_d) {
      best = &tr;
      best_d = d;
    }
  }
  if (!best) throw std::logic_error("edge field has no traces");
  return *best;
}

inline double max_gap(const Signal& s) {
  double m = 0.0;
  for (const auto& a : s.atoms()) m = std::max(m, std::abs(a.amplitude));
  for (const auto& v : s.regular()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace detail

/// Largest continuity gap plus balance defect over internal vertices and
/// times, using at each edge end the sampled position nearest to the vertex.
/// Atom amplitudes and regular samples are checked separately.
inline double kirchhoff_residual(const SolutionField& f, const MetricTree& t) {
  double worst = 0.0;
  for (int v : t.internal_vertices()) {
    std::vector<std::pair<const FieldTrace*, double>> ends;
    for (std::size_t k : t.incident(v)) {
      const Edge& e = t.edges[k];
      const bool head = e.head == v;
      ends.emplace_back(&detail::nearest_trace(f.edges.at(k), head ? 0 : 2 * e.cells), head ? 1.0 : -1.0);
    }
    double cont = 0.0;
    std::vector<std::pair<cplx, Signal>> balance;
    for (const auto& [tr, sign] : ends) {
      cont = std::max(cont, detail::max_gap(tr->u1 - ends.front().first->u1));
      balance.emplace_back(sign, tr->u2);
    }
    worst = std::max(worst, cont + detail::max_gap(add_scale(balance)));
  }
  return worst;
}

/// Discrete L2 norm of the field on each time sample (regular parts only),
/// assuming the traces cover every cell once.
inline std::vector<double> field_norm_history(const SolutionField& f) {
  std::vector<double> out;
  for (const auto& ef : f.edges) {
    for (const auto& tr : ef.traces) {
      if (out.empty()) out.assign(tr.u1.size(), 0.0);
      for (std::size_t n = 0; n < out.size() && n < tr.u1.size(); ++n)
        out[n] += 0.5 * f.dt * (std::norm(tr.u1.regular(n)) + std::norm(tr.u2.regular(n)));
    }
  }
  // u1, u2 -> a, b: |a|^2 + |b|^2 = (|u1|^2 + |u2|^2) / 2
  for (auto& v : out) v = std::sqrt(v);
  return out;
}

}  // namespace dirac_tree

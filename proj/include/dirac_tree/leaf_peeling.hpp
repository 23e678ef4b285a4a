#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edge_solver.hpp"
#include "graph.hpp"
#include "inverse_edge.hpp"
#include "signal.hpp"
#include "tree_forward.hpp"

namespace dirac_tree {

// ---------------------------------------------------------------------------
// Horizon-aware algebra.  A Signal's size is the extent on which it is known.
// When one factor is known to vanish before its arrival index, the product is
// known further out than the shorter horizon, and zero padding is exact.

/// First index carrying a nonzero atom or regular sample; size() if none.
inline std::size_t arrival(const Signal& s) {
  std::size_t first = s.size();
  if (!s.atoms().empty()) first = s.atoms().front().index;
  for (std::size_t n = 0; n < std::min(first, s.size()); ++n)
    if (s.regular(n) != cplx{}) return n;
  return first;
}

inline Signal padded(const Signal& s, std::size_t samples) {
  if (samples <= s.size()) return s.truncated(samples);
  Signal out(s.dt(), samples);
  std::copy(s.regular().begin(), s.regular().end(), out.regular().begin());
  for (const auto& a : s.atoms()) out.add_atom(a.index, a.amplitude);
  return out;
}

inline Signal causal_convolve(const Signal& a, const Signal& b, std::size_t cap) {
  const std::size_t sa = arrival(a), sb = arrival(b);
  std::size_t n = std::min(a.size() + sb, b.size() + sa);
  n = std::min(n, cap);
  return convolve(padded(a, n), padded(b, n));
}

/// a - b on the common known extent.
inline Signal difference(const Signal& a, const Signal& b) { return add_scale({{1.0, a}, {-1.0, b}}); }

// ---------------------------------------------------------------------------
// Triangular atom system and the regular-part equation.

struct AtomSolveProblem {
  std::vector<Atom> a;  // divisor atoms, mu_n ascending, a_1 != 0
  std::vector<Atom> b;  // right-hand side atoms, nu ascending
  std::optional<std::set<std::size_t>> lambda_candidates;  // admissible c times
  std::size_t max_time = 0;  // largest nu considered (horizon index)
};

struct AtomSolution {
  std::vector<Atom> c;
  std::vector<std::vector<cplx>> matrix;  // lower triangular, rows/cols follow c
};

class matching_error : public inverse_error {
 public:
  using inverse_error::inverse_error;
};

/// Finds atoms c with (a * c) = b up to `max_time`.  Candidate times
/// tau = nu or mu_m + lambda are visited in increasing order; each yields
/// lambda = tau - mu_1 with a_1 c_lambda = b_tau - sum_{m >= 2} a_m c_{tau - mu_m}.
/// The coefficient matrix of that sweep is lower triangular with diagonal a_1.
inline AtomSolution solve_atom_coefficients(const AtomSolveProblem& pb, double drop_tolerance = 1e-13) {
  if (pb.a.empty() || std::abs(pb.a.front().amplitude) < 1e-12) throw inverse_error("leading divisor atom a_1 vanishes");
  for (std::size_t i = 1; i < pb.a.size(); ++i)
    if (pb.a[i].index <= pb.a[i - 1].index) throw std::invalid_argument("divisor atoms must be strictly ascending");
  const std::size_t mu1 = pb.a.front().index;
  const cplx a1 = pb.a.front().amplitude;
  std::map<std::size_t, cplx> bmap;
  for (const auto& x : pb.b)
    if (x.index <= pb.max_time) bmap[x.index] += x.amplitude;

  std::set<std::size_t> pending;
  for (const auto& [t, v] : bmap) {
    if (t < mu1) throw matching_error("atom at " + std::to_string(t) + " precedes the divisor's first atom");
    pending.insert(t);
  }
  std::map<std::size_t, cplx> c;  // lambda -> amplitude
  std::vector<std::size_t> order;
  AtomSolution sol;
  while (!pending.empty()) {
    const std::size_t tau = *pending.begin();
    pending.erase(pending.begin());
    const std::size_t lambda = tau - mu1;
    if (pb.lambda_candidates && !pb.lambda_candidates->count(lambda)) {
      if (bmap.count(tau) && std::abs(bmap[tau]) > drop_tolerance)
        throw matching_error("atom at " + std::to_string(tau) + " is not mu_1 plus an admissible lambda");
      continue;
    }
    cplx rhs = bmap.count(tau) ? bmap[tau] : cplx{};
    std::vector<cplx> row(order.size() + 1, cplx{});
    for (std::size_t m = 1; m < pb.a.size(); ++m) {
      const std::size_t mu = pb.a[m].index;
      if (mu > tau) break;
      auto it = c.find(tau - mu);
      if (it == c.end()) continue;
      rhs -= pb.a[m].amplitude * it->second;
      const auto col = static_cast<std::size_t>(std::find(order.begin(), order.end(), tau - mu) - order.begin());
      if (col >= order.size()) throw std::logic_error("triangular system references an unknown above the diagonal");
      row[col] = pb.a[m].amplitude;
    }
    row.back() = a1;
    const cplx value = rhs / a1;
    if (std::abs(value) <= drop_tolerance) continue;
    c[lambda] = value;
    order.push_back(lambda);
    sol.matrix.push_back(std::move(row));
    for (const auto& am : pb.a)
      if (am.index + lambda <= pb.max_time && am.index > mu1) pending.insert(am.index + lambda);
  }
  for (std::size_t lambda : order) sol.c.push_back(Atom{lambda, c[lambda]});
  std::sort(sol.c.begin(), sol.c.end(), [](const Atom& x, const Atom& y) { return x.index < y.index; });
  return sol;
}

/// Regular part phi of the unknown in divisor * unknown = rhs once the
/// unknown's atoms are known:
///   sum_n a_n phi(t - mu_n) + psi * phi = theta - sum_m c_m psi(t - lambda_m).
/// Marched from the a_1 term, all later shifts and the convolution acting on
/// history.  Returned on [0, rhs extent - mu_1].
inline Signal solve_regular_equation(const Signal& divisor, const Signal& rhs, const std::vector<Atom>& c_atoms) {
  detail::check_same_grid(divisor, rhs);
  if (divisor.atoms().empty()) throw inverse_error("divisor has no atoms");
  const Atom lead = divisor.atoms().front();
  if (std::abs(lead.amplitude) < 1e-12) throw inverse_error("leading divisor atom a_1 below 1e-12");
  if (rhs.size() <= lead.index) return Signal(rhs.dt(), 0);
  const std::size_t n = rhs.size() - lead.index;

  // theta - sum c psi(. - lambda)
  std::vector<cplx> theta(rhs.regular().begin(), rhs.regular().end());
  const auto& psi = divisor.regular();
  for (const auto& cm : c_atoms)
    for (std::size_t t = cm.index; t < theta.size() && t - cm.index < psi.size(); ++t)
      theta[t] -= cm.amplitude * psi[t - cm.index];

  Signal rest(divisor.dt(), std::min(n, divisor.size() - lead.index));
  for (std::size_t j = 0; j < rest.size(); ++j) rest.regular()[j] = psi[j + lead.index];
  for (const auto& am : divisor.atoms())
    if (am.index > lead.index) rest.add_atom(am.index - lead.index, am.amplitude);
  for (std::size_t j = 0; j < lead.index && j < psi.size(); ++j)
    if (std::abs(psi[j]) > 1e-12) throw inverse_error("divisor regular part precedes its first atom");

  VolterraMarcher m(lead.amplitude, padded(rest, n), n);
  for (std::size_t k = 0; k < n; ++k) m.step(0.0, theta[k + lead.index]);
  Signal phi(divisor.dt(), n);
  phi.regular() = m.regular_history();
  return phi;
}

/// Solves divisor * x = rhs for x (atoms by the triangular sweep, regular
/// part by marching).  The known extent of x accounts for its own arrival.
inline Signal divide_by_trace(const Signal& rhs, const Signal& divisor,
                              const std::optional<std::set<std::size_t>>& lambdas = std::nullopt) {
  const auto lead = first_atom(divisor);
  if (!lead) throw inverse_error("divisor has no atoms");
  const std::size_t mu1 = lead->index;
  if (rhs.size() <= mu1) return Signal(rhs.dt(), 0);
  // the divisor may be shorter than rhs; extend by zeros, then trim below
  const std::size_t work = rhs.size();
  const Signal d = padded(divisor, work);
  AtomSolveProblem pb;
  pb.a = d.atoms();
  pb.b = rhs.atoms();
  pb.lambda_candidates = lambdas;
  pb.max_time = work - 1;
  const AtomSolution atoms = solve_atom_coefficients(pb);
  Signal x = solve_regular_equation(d, rhs, atoms.c);
  for (const auto& a : atoms.c) x.add_atom(a.index, a.amplitude);
  // x(t) reads the divisor up to index t + mu1 - arrival(x)
  const std::size_t sx = arrival(x);
  const std::size_t limit = divisor.size() + sx - mu1;
  return x.truncated(std::min(x.size(), limit));
}

// ---------------------------------------------------------------------------
// Sheaves and the peeling step.

struct LeafReadout {
  int leaf = 0;
  EdgeReadout edge;
};

struct SheafGroup {
  std::vector<int> leaves;  // ascending
  int degree = 0;
  bool complete = false;
};

/// Groups leaves k, j together when the first atom of R(k, j) arrives at
/// exactly l_k + l_j; a group is a complete sheaf when it holds degree - 1
/// leaves.  Entries too short to decide keep their leaves apart.
inline std::vector<SheafGroup> identify_sheaves(const std::map<std::pair<int, int>, Signal>& r,
                                                const std::vector<LeafReadout>& readouts) {
  std::map<int, int> parent;
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  for (const auto& ro : readouts) parent[ro.leaf] = ro.leaf;
  for (std::size_t i = 0; i < readouts.size(); ++i) {
    for (std::size_t j = i + 1; j < readouts.size(); ++j) {
      auto it = r.find({readouts[i].leaf, readouts[j].leaf});
      if (it == r.end()) continue;
      const std::size_t expect = readouts[i].edge.cells + readouts[j].edge.cells;
      const auto fa = first_atom(it->second);
      if (fa && fa->index == expect) parent[find(readouts[i].leaf)] = find(readouts[j].leaf);
    }
  }
  std::map<int, SheafGroup> groups;
  std::map<int, int> degree;
  for (const auto& ro : readouts) degree[ro.leaf] = ro.edge.degree;
  for (const auto& ro : readouts) groups[find(ro.leaf)].leaves.push_back(ro.leaf);
  std::vector<SheafGroup> out;
  for (auto& [root, g] : groups) {
    std::sort(g.leaves.begin(), g.leaves.end());
    g.degree = degree[g.leaves.front()];
    bool same = true;
    for (int l : g.leaves) same = same && degree[l] == g.degree;
    if (!same) throw inverse_error("leaves grouped at one vertex report different degrees");
    g.complete = g.degree >= 3 && g.leaves.size() + 1 == static_cast<std::size_t>(g.degree);
    out.push_back(g);
  }
  std::sort(out.begin(), out.end(), [](const SheafGroup& x, const SheafGroup& y) { return x.leaves < y.leaves; });
  return out;
}

/// Edge recovered from a leaf's diagonal response.  The head is the leaf.
struct RecoveredEdge {
  int head = 0;
  int tail = 0;
  std::size_t cells = 0;
  EdgePotential potential;
  double misfit = 0.0;
};

/// Trace operators of a recovered edge out to `steps`.
inline EdgeOperators recovered_operators(const RecoveredEdge& e, double dt, std::size_t steps) {
  Edge edge;
  edge.cells = e.cells;
  edge.potential = e.potential;
  return edge_operators(compute_goursat_kernels(edge, dt, steps), e.cells);
}

/// u1 at the far vertex of leaf edge e1 under a delta control at leaf k, from
/// the response R(1, k) observed at the leaf of e1:
///   R(1, k) = delta_{1k} Self + X_tail * g_k.
inline Signal interior_trace_from_response(const Signal& r1k, bool actuated_here, const EdgeOperators& e1) {
  Signal rhs = r1k;
  if (actuated_here) rhs = difference(r1k, e1.self_head);
  return divide_by_trace(rhs, e1.transfer_from_tail);
}

/// u2 flowing into the stem at the sheaf vertex under a delta control at leaf
/// k, by the balance condition over the sheaf's leaf edges.
inline Signal stem_response_hat(int k, const Signal& gk, const std::vector<int>& sheaf,
                                const std::map<int, EdgeOperators>& ops) {
  std::vector<std::pair<cplx, Signal>> terms;
  const std::size_t cap = gk.size();
  for (int j : sheaf) {
    const auto& o = ops.at(j);
    terms.emplace_back(-1.0, causal_convolve(o.self_tail, gk, cap));
    if (j == k) terms.emplace_back(-1.0, o.transfer_from_head.truncated(cap));
  }
  return add_scale(terms);
}

struct PeelStepLog {
  std::vector<int> sheaf;
  int stem_vertex = 0;
  int degree = 0;
  int actuated_leaf = 0;
  std::size_t horizon_before = 0;
  std::size_t horizon_after = 0;
};

struct PeelState {
  double dt = 1.0;
  std::vector<int> leaves;                       // current boundary (root excluded)
  std::map<std::pair<int, int>, Signal> response;  // (observed, actuated) -> entry
  std::vector<RecoveredEdge> edges;
  int next_vertex = 0;
  std::vector<PeelStepLog> log;
  RecoveryOptions recovery;
  bool finished = false;
  int root = -1;

  std::size_t horizon_steps() const {
    std::size_t h = 0;
    for (const auto& [kj, s] : response) h = std::max(h, s.size());
    return h == 0 ? 0 : h - 1;
  }
};

inline PeelState initial_state(const ResponseMatrix& r, RecoveryOptions opt = {}) {
  PeelState s;
  s.dt = r.dt;
  s.leaves = r.leaves;
  s.response = r.entries;
  s.recovery = opt;
  int top = 0;
  for (int l : r.leaves) top = std::max(top, l);
  s.next_vertex = top + 1;
  return s;
}

class horizon_exhausted : public inverse_error {
 public:
  using inverse_error::inverse_error;
};

namespace detail {

inline EdgeReadout readout_or_exhausted(const Signal& diag, int leaf) {
  try {
    return recover_length_and_degree(diag);
  } catch (const inverse_error& e) {
    if (std::string(e.what()).find("horizon too short") != std::string::npos)
      throw horizon_exhausted("horizon exhausted: no echo on the edge at leaf " + std::to_string(leaf));
    throw;
  }
}

}  // namespace detail

/// Removes one complete sheaf (or, with a single leaf left, the last edge).
inline PeelState peel_step(PeelState s) {
  if (s.finished) return s;
  std::vector<LeafReadout> ro;
  for (int k : s.leaves) ro.push_back({k, detail::readout_or_exhausted(s.response.at({k, k}), k)});

  if (s.leaves.size() == 1) {
    if (!ro.front().edge.ends_at_root) throw inverse_error("single remaining leaf does not end at the root");
    const auto pr = recover_potential(s.response.at({s.leaves[0], s.leaves[0]}), ro.front().edge.cells, s.recovery);
    s.root = s.next_vertex++;
    s.edges.push_back({s.leaves[0], s.root, ro.front().edge.cells, pr.potential, pr.misfit});
    s.log.push_back({{s.leaves[0]}, s.root, 1, s.leaves[0], s.horizon_steps(), s.horizon_steps()});
    s.finished = true;
    return s;
  }
  for (const auto& r : ro)
    if (r.edge.ends_at_root) throw inverse_error("a leaf edge reaches the root while other leaves remain");

  const auto groups = identify_sheaves(s.response, ro);
  const SheafGroup* sheaf = nullptr;
  for (const auto& g : groups)
    if (g.complete && (!sheaf || g.leaves.front() < sheaf->leaves.front())) sheaf = &g;
  if (!sheaf) {
    for (const auto& [kj, sig] : s.response) {
      const auto cells = [&](int l) {
        for (const auto& r : ro)
          if (r.leaf == l) return r.edge.cells;
        return std::size_t{0};
      };
      if (kj.first != kj.second && sig.size() <= cells(kj.first) + cells(kj.second))
        throw horizon_exhausted("horizon exhausted: leaf grouping undecidable on the remaining data");
    }
    throw inverse_error("no complete sheaf found; response data is inconsistent");
  }

  const std::vector<int> S = sheaf->leaves;
  const int g1 = S.front();
  const int v = s.next_vertex++;
  const std::size_t steps = s.horizon_steps();
  std::map<int, EdgeOperators> ops;
  for (int k : S) {
    const auto& r = std::find_if(ro.begin(), ro.end(), [&](const LeafReadout& x) { return x.leaf == k; })->edge;
    const auto pr = recover_potential(s.response.at({k, k}), r.cells, s.recovery);
    RecoveredEdge e{k, v, r.cells, pr.potential, pr.misfit};
    ops[k] = recovered_operators(e, s.dt, steps);
    s.edges.push_back(std::move(e));
  }

  // traces at the sheaf vertex for every actuated leaf
  std::map<int, Signal> g;
  for (int k : s.leaves) g[k] = interior_trace_from_response(s.response.at({g1, k}), k == g1, ops.at(g1));

  std::vector<int> rest;
  for (int k : s.leaves)
    if (!std::binary_search(S.begin(), S.end(), k)) rest.push_back(k);

  std::map<std::pair<int, int>, Signal> next;
  const Signal hat10 = stem_response_hat(g1, g.at(g1), S, ops);
  next[{v, v}] = divide_by_trace(hat10, g.at(g1));
  for (int j : rest) {
    // observed at j, actuated at the stem: R(j, 1) = Rt(j, v) * g_1
    next[{j, v}] = divide_by_trace(s.response.at({j, g1}), g.at(g1));
    // observed at the stem, actuated at j: hat(v <- j) = Rt(v, v) * g_j + Rt(v, j)
    const Signal hat = stem_response_hat(j, g.at(j), S, ops);
    const Signal cap_conv = causal_convolve(next.at({v, v}), g.at(j), hat.size());
    next[{v, j}] = difference(hat, cap_conv);
  }
  for (int k : rest)
    for (int j : rest) {
      const Signal& rkj = s.response.at({k, j});
      next[{k, j}] = difference(rkj, causal_convolve(next.at({k, v}), g.at(j), rkj.size()));
    }

  PeelStepLog log{S, v, sheaf->degree, g1, steps, 0};
  s.response = std::move(next);
  rest.push_back(v);
  s.leaves = rest;
  log.horizon_after = s.horizon_steps();
  s.log.push_back(std::move(log));
  return s;
}

struct ReconstructionReport {
  std::vector<PeelStepLog> steps;
  std::vector<RecoveredEdge> edges;
  double max_misfit = 0.0;
};

/// Peels until one edge remains and assembles the recovered tree.  Internal
/// vertices and the root receive fresh ids above the leaf ids.
inline std::pair<MetricTree, ReconstructionReport> reconstruct_tree(const ResponseMatrix& r,
                                                                    RecoveryOptions opt = {}) {
  PeelState s = initial_state(r, opt);
  const std::size_t guard = 4 * r.leaves.size() + 4;
  for (std::size_t i = 0; i < guard && !s.finished; ++i) s = peel_step(std::move(s));
  if (!s.finished) throw inverse_error("peeling did not terminate");

  RawGraph raw;
  raw.dt = r.dt;
  raw.root = s.root;
  std::set<int> vs;
  int id = 1;
  for (const auto& e : s.edges) {
    vs.insert(e.head);
    vs.insert(e.tail);
    RawEdge re;
    re.id = id++;
    re.a = e.head;
    re.b = e.tail;
    re.length = r.dt * static_cast<double>(e.cells);
    re.constant_potential = false;
    re.p_samples = e.potential.p;
    re.q_samples = e.potential.q;
    raw.edges.push_back(std::move(re));
  }
  raw.vertices.assign(vs.begin(), vs.end());
  ReconstructionReport rep;
  rep.steps = s.log;
  rep.edges = s.edges;
  for (const auto& e : s.edges) rep.max_misfit = std::max(rep.max_misfit, e.misfit);
  return {validate_tree(raw), rep};
}

/// Original leaves below each edge (on its head side); identifies an edge
/// independently of internal vertex labels.
inline std::map<std::set<int>, std::size_t> edges_by_leaf_set(const MetricTree& t) {
  std::map<std::set<int>, std::size_t> out;
  const auto leaves = t.leaves();
  for (std::size_t k = 0; k < t.edges.size(); ++k) {
    std::set<int> below;
    const int h = t.edges[k].head;
    for (int l : leaves)
      if (t.distance_cells(l, t.root) == t.distance_cells(l, h) + t.distance_cells(h, t.root)) below.insert(l);
    out[below] = k;
  }
  return out;
}

struct TreeComparison {
  bool same_topology = false;
  bool same_lengths = false;
  double max_potential_error = 0.0;     // max-norm over all samples
  double max_potential_relative = 0.0;  // divided by the largest |p|, |q| of the reference
};

inline TreeComparison compare_trees(const MetricTree& got, const MetricTree& ref) {
  TreeComparison c;
  const auto a = edges_by_leaf_set(got), b = edges_by_leaf_set(ref);
  c.same_topology = a.size() == b.size() && got.leaves() == ref.leaves();
  if (c.same_topology)
    for (const auto& [set, k] : a) c.same_topology = c.same_topology && b.count(set);
  if (!c.same_topology) return c;
  c.same_lengths = true;
  double scale = 0.0;
  for (const auto& [set, k] : a) {
    const Edge& x = got.edges[k];
    const Edge& y = ref.edges[b.at(set)];
    c.same_lengths = c.same_lengths && x.cells == y.cells;
    if (x.cells != y.cells) continue;
    for (std::size_t j = 0; j <= x.cells; ++j) {
      c.max_potential_error = std::max({c.max_potential_error, std::abs(x.potential.p[j] - y.potential.p[j]),
                                        std::abs(x.potential.q[j] - y.potential.q[j])});
      scale = std::max({scale, std::abs(y.potential.p[j]), std::abs(y.potential.q[j])});
    }
  }
  c.max_potential_relative = scale > 0.0 ? c.max_potential_error / scale : c.max_potential_error;
  return c;
}

}  // namespace dirac_tree

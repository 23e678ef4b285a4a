#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dirac_tree {

class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Real potential samples on the edge grid {0, dt, ..., l}; between nodes the
/// potential is the linear interpolant.
struct EdgePotential {
  std::vector<double> p;
  std::vector<double> q;

  static EdgePotential constant(std::size_t cells, double p0, double q0) {
    return {std::vector<double>(cells + 1, p0), std::vector<double>(cells + 1, q0)};
  }
  static EdgePotential zero(std::size_t cells) { return constant(cells, 0.0, 0.0); }

  std::size_t cells() const { return p.empty() ? 0 : p.size() - 1; }

  bool is_zero() const {
    return std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; }) &&
           std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; });
  }

  /// Potential seen from the other end: p(l - x), q(l - x).
  EdgePotential reversed() const {
    return {std::vector<double>(p.rbegin(), p.rend()), std::vector<double>(q.rbegin(), q.rend())};
  }
};

/// Oriented edge: `head` is the end farther from the root (x = 0), `tail` the
/// end closer to it (x = length).
struct Edge {
  int id = 0;
  int head = 0;
  int tail = 0;
  double length = 0.0;
  std::size_t cells = 0;
  EdgePotential potential;
};

/// Validated finite metric rooted tree.  Immutable by convention once built by
/// validate_tree.
struct MetricTree {
  std::vector<int> vertices;
  std::vector<Edge> edges;
  int root = 0;
  std::vector<int> boundary;  // non-root leaves ascending, root last
  double dt = 1.0 / 256.0;
  std::vector<std::string> warnings;

  std::size_t vertex_count() const { return vertices.size(); }

  std::vector<std::size_t> incident(int v) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (edges[k].head == v || edges[k].tail == v) out.push_back(k);
    return out;
  }

  std::size_t degree(int v) const { return incident(v).size(); }
  bool is_boundary(int v) const { return degree(v) == 1; }
  bool is_internal(int v) const { return degree(v) > 1; }

  std::vector<int> internal_vertices() const {
    std::vector<int> out;
    for (int v : vertices)
      if (is_internal(v)) out.push_back(v);
    return out;
  }

  /// Non-root boundary vertices, gamma_1 .. gamma_{L-1}.
  std::vector<int> leaves() const { return {boundary.begin(), boundary.end() - 1}; }

  std::size_t edge_index(int id) const {
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (edges[k].id == id) return k;
    throw std::out_of_range("no edge with id " + std::to_string(id));
  }

  /// Edge whose head is the given leaf.
  std::size_t leaf_edge(int leaf) const {
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (edges[k].head == leaf) return k;
    throw std::out_of_range("vertex " + std::to_string(leaf) + " is not a non-root leaf");
  }

  int other_end(std::size_t k, int v) const { return edges[k].head == v ? edges[k].tail : edges[k].head; }

  bool has_vertex(int v) const { return std::find(vertices.begin(), vertices.end(), v) != vertices.end(); }

  /// Path distance in grid cells.
  std::size_t distance_cells(int from, int to) const {
    std::map<int, std::size_t> dist{{from, 0}};
    std::queue<int> open;
    open.push(from);
    while (!open.empty()) {
      const int v = open.front();
      open.pop();
      for (std::size_t k : incident(v)) {
        const int w = other_end(k, v);
        if (dist.count(w)) continue;
        dist[w] = dist[v] + edges[k].cells;
        open.push(w);
      }
    }
    auto it = dist.find(to);
    if (it == dist.end()) throw std::out_of_range("vertices not connected");
    return it->second;
  }

  double distance(int from, int to) const { return dt * static_cast<double>(distance_cells(from, to)); }

  std::size_t min_edge_cells() const {
    std::size_t m = std::numeric_limits<std::size_t>::max();
    for (const auto& e : edges) m = std::min(m, e.cells);
    return m;
  }
};

/// Unvalidated input as read from a config file.  Edge endpoints are unordered;
/// sampled potentials run from `a` to `b`.
struct RawEdge {
  int id = 0;
  int a = 0;
  int b = 0;
  double length = 0.0;
  bool constant_potential = true;
  double p0 = 0.0;
  double q0 = 0.0;
  std::vector<double> p_samples;
  std::vector<double> q_samples;
};

struct RawGraph {
  std::vector<int> vertices;
  std::vector<RawEdge> edges;
  int root = 0;
  double dt = 1.0 / 256.0;
};

namespace detail {

inline std::vector<double> resample_linear(const std::vector<double>& v, std::size_t cells) {
  std::vector<double> out(cells + 1);
  if (v.size() == 1) {
    std::fill(out.begin(), out.end(), v[0]);
    return out;
  }
  for (std::size_t n = 0; n <= cells; ++n) {
    const double s = static_cast<double>(n) / static_cast<double>(cells) * static_cast<double>(v.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(s), v.size() - 2);
    const double w = s - static_cast<double>(i);
    out[n] = (1.0 - w) * v[i] + w * v[i + 1];
  }
  return out;
}

}  // namespace detail

/// Checks the tree assumptions, snaps lengths to the grid and orients every
/// edge away from the root.
inline MetricTree validate_tree(const RawGraph& raw) {
  if (!(raw.dt > 0.0)) throw validation_error("grid step must be positive");
  std::set<int> vset(raw.vertices.begin(), raw.vertices.end());
  if (vset.size() != raw.vertices.size()) throw validation_error("duplicate vertex id");
  if (vset.size() < 2) throw validation_error("tree needs at least two vertices");
  if (!vset.count(raw.root)) throw validation_error("root vertex not in vertex list");

  MetricTree t;
  t.dt = raw.dt;
  t.vertices.assign(vset.begin(), vset.end());
  t.root = raw.root;

  std::map<int, std::vector<std::size_t>> adj;
  std::set<int> edge_ids;
  for (std::size_t k = 0; k < raw.edges.size(); ++k) {
    const auto& e = raw.edges[k];
    if (!vset.count(e.a) || !vset.count(e.b))
      throw validation_error("edge " + std::to_string(e.id) + " references an unknown vertex");
    if (e.a == e.b) throw validation_error("cycle detected: self-loop on vertex " + std::to_string(e.a));
    if (!(e.length > 0.0)) throw validation_error("edge " + std::to_string(e.id) + " has non-positive length");
    if (!edge_ids.insert(e.id).second) throw validation_error("duplicate edge id " + std::to_string(e.id));
    adj[e.a].push_back(k);
    adj[e.b].push_back(k);
  }
  if (raw.edges.size() >= vset.size()) throw validation_error("cycle detected");

  // Breadth-first from the root: connectivity and orientation.
  std::map<int, int> parent_edge;
  std::map<int, std::size_t> hops{{raw.root, 0}};
  std::queue<int> open;
  open.push(raw.root);
  while (!open.empty()) {
    const int v = open.front();
    open.pop();
    for (std::size_t k : adj[v]) {
      const int w = raw.edges[k].a == v ? raw.edges[k].b : raw.edges[k].a;
      if (parent_edge.count(v) && parent_edge[v] == static_cast<int>(k)) continue;
      if (hops.count(w)) throw validation_error("cycle detected");
      hops[w] = hops[v] + 1;
      parent_edge[w] = static_cast<int>(k);
      open.push(w);
    }
  }
  if (hops.size() != vset.size()) throw validation_error("graph is disconnected");

  if (adj[raw.root].size() != 1) throw validation_error("root vertex must have degree 1");
  for (int v : t.vertices)
    if (adj[v].size() == 2)
      throw validation_error("internal vertex " + std::to_string(v) + " has degree 2");

  for (std::size_t k = 0; k < raw.edges.size(); ++k) {
    const auto& re = raw.edges[k];
    Edge e;
    e.id = re.id;
    const bool a_is_far = hops[re.a] > hops[re.b];
    e.head = a_is_far ? re.a : re.b;
    e.tail = a_is_far ? re.b : re.a;
    const double cells_f = re.length / raw.dt;
    const auto cells = static_cast<std::size_t>(std::max<long long>(1, std::llround(cells_f)));
    if (std::abs(cells_f - std::round(cells_f)) > 1e-9) {
      t.warnings.push_back("edge " + std::to_string(re.id) + " length " + std::to_string(re.length) +
                           " snapped to " + std::to_string(cells * raw.dt));
    }
    e.cells = cells;
    e.length = static_cast<double>(cells) * raw.dt;
    if (re.constant_potential) {
      e.potential = EdgePotential::constant(cells, re.p0, re.q0);
    } else {
      if (re.p_samples.empty() || re.q_samples.empty())
        throw validation_error("edge " + std::to_string(re.id) + " has empty potential samples");
      e.potential.p = re.p_samples.size() == cells + 1 ? re.p_samples : detail::resample_linear(re.p_samples, cells);
      e.potential.q = re.q_samples.size() == cells + 1 ? re.q_samples : detail::resample_linear(re.q_samples, cells);
      if (re.p_samples.size() != cells + 1 || re.q_samples.size() != cells + 1)
        t.warnings.push_back("edge " + std::to_string(re.id) + " potential resampled onto the grid");
      if (!a_is_far) e.potential = e.potential.reversed();
    }
    for (double v : e.potential.p)
      if (!std::isfinite(v)) throw validation_error("non-finite potential sample");
    for (double v : e.potential.q)
      if (!std::isfinite(v)) throw validation_error("non-finite potential sample");
    t.edges.push_back(std::move(e));
  }

  for (int v : t.vertices)
    if (v != raw.root && adj[v].size() == 1) t.boundary.push_back(v);
  t.boundary.push_back(raw.root);
  return t;
}

/// Raw description that validates back to `t`.
inline RawGraph to_raw(const MetricTree& t) {
  RawGraph r;
  r.vertices = t.vertices;
  r.root = t.root;
  r.dt = t.dt;
  for (const auto& e : t.edges) {
    RawEdge re;
    re.id = e.id;
    re.a = e.head;
    re.b = e.tail;
    re.length = e.length;
    re.constant_potential = false;
    re.p_samples = e.potential.p;
    re.q_samples = e.potential.q;
    r.edges.push_back(std::move(re));
  }
  return r;
}

/// Distinct walk lengths (in grid cells) from `from` to `to` not exceeding
/// `horizon_cells`.  A walk may turn back at any vertex.  The empty walk is
/// not counted.
inline std::vector<std::size_t> walk_spectrum_cells(const MetricTree& t, int from, int to,
                                                    std::size_t horizon_cells) {
  if (!t.has_vertex(from) || !t.has_vertex(to)) throw std::out_of_range("walk_spectrum: unknown vertex");
  std::set<std::pair<int, std::size_t>> seen;
  std::set<std::size_t> lengths;
  std::queue<std::pair<int, std::size_t>> open;
  open.push({from, 0});
  seen.insert({from, 0});
  while (!open.empty()) {
    const auto [v, len] = open.front();
    open.pop();
    for (std::size_t k : t.incident(v)) {
      const std::size_t next = len + t.edges[k].cells;
      if (next > horizon_cells) continue;
      const int w = t.other_end(k, v);
      if (w == to) lengths.insert(next);
      if (seen.insert({w, next}).second) open.push({w, next});
    }
  }
  return {lengths.begin(), lengths.end()};
}

inline std::vector<double> walk_spectrum(const MetricTree& t, int from, int to, double horizon) {
  std::vector<double> out;
  const auto cap = static_cast<std::size_t>(std::floor(horizon / t.dt + 1e-9));
  for (std::size_t c : walk_spectrum_cells(t, from, to, cap)) out.push_back(t.dt * static_cast<double>(c));
  return out;
}

}  // namespace dirac_tree

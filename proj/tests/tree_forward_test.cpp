#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace dirac_tree;
using namespace dirac_tree::testing;

namespace {

constexpr double kDt = 1.0 / 64.0;

double energy(const Signal& s, std::size_t n) {
  double e = 0.0;
  for (std::size_t k = 0; k < n; ++k) e += s.dt() * std::norm(s.regular(k));
  return e;
}

}  // namespace

TEST(InteriorTraces, ThreeStarTransmission) {
  const MetricTree t = star({1.0, 1.0}, 1.0, kDt);
  const ForwardModel m(t, 192);
  BoundaryInput in;
  in.signals[2] = m.delta();
  const InteriorTraces tr = solve_interior_traces(m, in);
  const auto first = first_atom(tr.g.at(1));
  ASSERT_TRUE(first.has_value());
  EXPECT_EQ(first->index, 64u);
  EXPECT_NEAR(std::abs(first->amplitude - 2.0 / 3.0), 0.0, 1e-14);
}

TEST(InteriorTraces, ZeroInputGivesZeroTraces) {
  std::mt19937 rng(8);
  const MetricTree t = random_tree(rng, 7, kDt, 16, 48, 0.5, true);
  const ForwardModel m(t, 200);
  const InteriorTraces tr = solve_interior_traces(m, BoundaryInput{});
  for (const auto& [v, g] : tr.g) EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(InteriorTraces, CausalOnRandomTrees) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 4; ++trial) {
    const MetricTree t = random_tree(rng, 7, kDt, 16, 48, 0.5, true);
    const ForwardModel m(t, 256);
    const int leaf = t.leaves().front();
    BoundaryInput in;
    in.signals[leaf] = m.delta();
    const InteriorTraces tr = solve_interior_traces(m, in);
    for (const auto& [v, g] : tr.g) {
      const std::size_t d = t.distance_cells(leaf, v);
      for (std::size_t n = 0; n < std::min(d, g.size()); ++n) {
        EXPECT_EQ(g.regular(n), cplx{}) << "vertex " << v << " n " << n;
        EXPECT_EQ(g.atom_at(n), cplx{});
      }
      if (d < g.size()) EXPECT_NE(g.atom_at(d), cplx{});
    }
  }
}

TEST(InteriorSystem, CaterpillarCouplesThroughConnectingEdge) {
  const MetricTree t = five_edge_tree(kDt, 0.3);
  const ForwardModel m(t, 200);
  BoundaryInput in;
  in.signals[2] = m.delta();
  const InteriorSystem sys = assemble_interior_system(m, in);
  ASSERT_EQ(sys.equations.size(), 2u);
  for (const auto& eq : sys.equations) {
    ASSERT_EQ(eq.couplings.size(), 1u);
    const Edge& e = t.edges[eq.couplings[0].edge];
    EXPECT_EQ(e.id, 3);
    const auto first = first_atom(*eq.couplings[0].transfer);
    ASSERT_TRUE(first.has_value());
    EXPECT_EQ(first->index, e.cells);
    EXPECT_EQ(eq.lead, cplx(0, 3));
  }
  EXPECT_EQ(sys.block, t.min_edge_cells());
}

TEST(ResponseMatrix, FreeStarMatchesRayTracing) {
  const MetricTree t = star({1.0, 1.0}, 1.0, kDt);
  const ResponseMatrix r = response_matrix(t, 4.0);
  const cplx I(0, 1);
  EXPECT_EQ(r.at(2, 2).atom_at(0), I);
  EXPECT_NEAR(std::abs(r.at(2, 2).atom_at(128) - 2.0 / 3.0 * I), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(r.at(3, 2).atom_at(128) + 4.0 / 3.0 * I), 0.0, 1e-14);
  EXPECT_EQ(first_atom(r.at(3, 2))->index, 128u);
}

TEST(ResponseMatrix, FreeRandomTreesMatchRayTracerExactly) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const MetricTree t = random_tree(rng, 9, kDt, 8, 40, 0.0, false);
    const std::size_t steps = 240;
    const ResponseMatrix r = response_matrix(t, kDt * steps);
    for (int j : t.leaves()) {
      const auto traced = ray_trace_response(t, j, steps);
      for (int k : t.leaves()) {
        const Signal& s = r.at(k, j);
        EXPECT_EQ(s.regular_l2(), 0.0);
        std::map<std::size_t, cplx> expected;
        if (auto it = traced.find(k); it != traced.end()) expected = it->second;
        for (const auto& [n, a] : expected) EXPECT_NEAR(std::abs(s.atom_at(n) - a), 0.0, 1e-12) << k << "," << j;
        for (const auto& a : s.atoms()) EXPECT_TRUE(expected.count(a.index)) << "spurious atom at " << a.index;
      }
    }
  }
}

TEST(ResponseMatrix, AtomSupportInsideWalkSpectrum) {
  std::mt19937 rng(14);
  const MetricTree t = random_tree(rng, 7, kDt, 16, 40, 0.6, true);
  const std::size_t steps = 300;
  const ResponseMatrix r = response_matrix(t, kDt * steps);
  for (int j : t.leaves())
    for (int k : t.leaves()) {
      auto spectrum = walk_spectrum_cells(t, j, k, steps);
      if (j == k) spectrum.insert(spectrum.begin(), 0);
      for (const auto& a : r.at(k, j).atoms())
        EXPECT_TRUE(std::binary_search(spectrum.begin(), spectrum.end(), a.index))
            << "R(" << k << "," << j << ") atom at " << a.index;
      // nothing, regular or atomic, before the first walk
      const std::size_t first = j == k ? 0 : spectrum.front();
      for (std::size_t n = 0; n < first; ++n) EXPECT_EQ(r.at(k, j).regular(n), cplx{});
    }
}

TEST(ForwardSolve, SuperpositionOfLeafControls) {
  const MetricTree t = five_edge_tree(kDt, 0.4);
  const ForwardModel m(t, 160);
  const Signal f = raised_cosine_bump(kDt, 161, 0.2);
  const Signal g = shift(raised_cosine_bump(kDt, 161, 0.3), 10);
  BoundaryInput a, b, both;
  a.signals[2] = f;
  b.signals[5] = g;
  both.signals[2] = f;
  both.signals[5] = cplx(0, 2) * g;
  const auto ta = solve_interior_traces(m, a), tb = solve_interior_traces(m, b), tab = solve_interior_traces(m, both);
  for (int v : {1, 3}) {
    const Signal lin = add_scale({{1.0, ta.g.at(v)}, {cplx(0, 2), tb.g.at(v)}});
    EXPECT_LE((lin - tab.g.at(v)).max_abs(), 1e-12);
  }
}

TEST(ForwardSolve, IntervalReducesToSingleEdgeSolution) {
  const MetricTree t = interval(1.0, kDt, 0.3, -0.1);
  const ForwardModel m(t, 150, FieldLayout::nodes, 4);
  BoundaryInput in;
  in.signals[1] = raised_cosine_bump(kDt, 151, 0.25);
  const SolutionField f = forward_solve(m, in);
  const EdgeField direct =
      forward_from_end(t.edges[0], m.kernels(0), Side::left, in.signals[1], m.positions(0));
  for (std::size_t i = 0; i < direct.traces.size(); ++i)
    EXPECT_EQ((f.edges[0].traces[i].u1 - direct.traces[i].u1).max_abs(), 0.0);
}

TEST(Kirchhoff, RepresentationSatisfiesVertexConditions) {
  const MetricTree t = five_edge_tree(kDt, 0.5);
  const ForwardModel m(t, 180, FieldLayout::nodes, 8);
  BoundaryInput in;
  in.signals[2] = m.delta();
  in.signals[4] = raised_cosine_bump(kDt, 181, 0.3);
  const SolutionField f = forward_solve(m, in);
  EXPECT_LE(kirchhoff_residual(f, t), 1e-8);
}

TEST(Kirchhoff, CorruptedFieldIsDetected) {
  const MetricTree t = star({0.5, 0.75}, 0.5, kDt, 0.2, 0.1);
  const ForwardModel m(t, 120, FieldLayout::nodes, 8);
  BoundaryInput in;
  in.signals[2] = raised_cosine_bump(kDt, 121, 0.25);
  SolutionField f = forward_solve(m, in);
  ASSERT_LE(kirchhoff_residual(f, t), 1e-8);
  auto& tr = f.edges[t.leaf_edge(3)].traces.back();  // at the centre vertex
  for (auto& v : tr.u1.regular()) v *= 1.5;
  EXPECT_GT(kirchhoff_residual(f, t), 0.1);
}

TEST(ForwardModel, FieldWithoutPositionsThrows) {
  const ForwardModel m(interval(0.5, kDt), 10);
  EXPECT_THROW(forward_solve(m, BoundaryInput{}), std::logic_error);
}

// Leaf energies int_0^3 |u2|^2 dt for a raised-cosine control of width 0.25 at
// leaf 2 of a star with leaves (1, 0.75), root ray 0.5 and constant (p, q) =
// (0.3, 0.2).  Reference values from the finite-difference solver at dt =
// 1/512 and 1/1024, Richardson-extrapolated.
TEST(ResponseMatrix, MatchesFrozenFiniteDifferenceEnergies) {
  constexpr double kFdEnergyLeaf2 = 9.5117;
  constexpr double kFdEnergyLeaf3 = 15.602;
  const double dt = 1.0 / 128.0;
  const MetricTree t = star({1.0, 0.75}, 0.5, dt, 0.3, 0.2);
  const std::size_t steps = 384;
  const ForwardModel m(t, steps);
  BoundaryInput in;
  in.signals[2] = raised_cosine_bump(dt, steps + 1, 0.25);
  const InteriorTraces tr = solve_interior_traces(m, in);
  EXPECT_NEAR(energy(leaf_response(m, in, tr, 2), steps) / kFdEnergyLeaf2, 1.0, 5e-3);
  EXPECT_NEAR(energy(leaf_response(m, in, tr, 3), steps) / kFdEnergyLeaf3, 1.0, 5e-3);
}

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace dirac_tree;
using namespace dirac_tree::testing;

namespace {

constexpr double kDt = 1.0 / 256.0;

const FieldTrace& trace_at(const SolutionField& f, std::size_t edge, std::size_t x_half) {
  for (const auto& tr : f.edges.at(edge).traces)
    if (tr.x_half == x_half) return tr;
  throw std::out_of_range("no trace at that position");
}

}  // namespace

TEST(RaisedCosineBump, HasUnitMass) {
  const Signal b = raised_cosine_bump(kDt, 200, 0.25);
  cplx mass{};
  for (const auto& v : b.regular()) mass += kDt * v;
  EXPECT_NEAR(std::abs(mass - 1.0), 0.0, 1e-12);
  EXPECT_THROW(raised_cosine_bump(kDt, 10, 0.0), std::invalid_argument);
}

TEST(FdSolve, FreeTransportPreservesShape) {
  const MetricTree t = interval(1.0, kDt);
  const std::size_t steps = 400;
  BoundaryInput in;
  in.signals[1] = raised_cosine_bump(kDt, steps + 1, 0.25);
  const FdResult r = fd_solve(t, in, steps);
  // Cell centre x = 0.5 + dt/2; samples at t = (n + 1/2) dt, before the
  // reflection returns at t = 1.5.
  const FieldTrace& tr = trace_at(r.field, 0, 257);
  double err = 0.0;
  for (std::size_t n = 0; n < 350; ++n) {
    const double time = kDt * (static_cast<double>(n) + 0.5);
    const double s = time - (0.5 + 0.5 * kDt);
    const double expect = (s > 0.0 && s < 0.25) ? (1.0 - std::cos(2.0 * std::numbers::pi * s / 0.25)) / 0.25 : 0.0;
    err = std::max(err, std::abs(tr.u1.regular(n) - expect) / 8.0);
  }
  EXPECT_LE(err, 1e-3);
}

TEST(FdSolve, DegreeThreeVertexTransmitsTwoThirds) {
  const MetricTree t = star({0.5, 1.0}, 1.0, kDt);
  const std::size_t steps = 480;
  BoundaryInput in;
  in.signals[2] = raised_cosine_bump(kDt, steps + 1, 0.125);
  const FdResult r = fd_solve(t, in, steps);
  // Midpoint of leaf 3's edge: the transmitted pulse passes during
  // t in [1, 1.125] and no echo arrives before t = 2.
  const FieldTrace& tr = trace_at(r.field, t.leaf_edge(3), 257);
  cplx mass{};
  for (std::size_t n = 0; n < steps; ++n) mass += kDt * tr.u1.regular(n);
  EXPECT_NEAR(mass.real(), 2.0 / 3.0, 1e-3);
  EXPECT_NEAR(mass.imag(), 0.0, 1e-12);
}

TEST(FdSolve, NormConservedAfterInputCeases) {
  std::mt19937 rng(2);
  const MetricTree t = random_tree(rng, 7, kDt, 32, 96, 0.8, true);
  const std::size_t steps = 768;
  BoundaryInput in;
  in.signals[t.leaves().front()] = raised_cosine_bump(kDt, steps + 1, 0.25);
  const FdResult r = fd_solve(t, in, steps);
  const std::size_t quiet = 70;  // input ends at t = 0.25
  double drift = 0.0;
  for (std::size_t n = quiet; n < r.norm.size(); ++n) drift = std::max(drift, std::abs(r.norm[n] - r.norm[quiet]));
  EXPECT_GT(r.norm[quiet], 0.1);
  EXPECT_LE(drift, 1e-6 * r.norm[quiet]);
}

TEST(FdSolve, RejectsAtomsAndRootInputs) {
  const MetricTree t = star({0.5, 0.5}, 0.5, kDt);
  BoundaryInput atoms;
  atoms.signals[2] = Signal::delta(kDt, 11);
  EXPECT_THROW(fd_solve(t, atoms, 10), std::invalid_argument);
  BoundaryInput root;
  root.signals[0] = Signal(kDt, 11);
  EXPECT_THROW(fd_solve(t, root, 10), std::invalid_argument);
}

TEST(FdSolve, AgreesWithRepresentationOnConstantPotentialInterval) {
  const MetricTree t = interval(1.0, kDt, 0.3, 0.0);
  const std::size_t steps = 768;
  BoundaryInput in;
  in.signals[1] = regularized_delta(kDt, steps + 1);
  const FdResult fd = fd_solve(t, in, steps);
  const ForwardModel m(t, steps, FieldLayout::centres, 8);
  const SolutionField rep = forward_solve(m, in);
  EXPECT_LE(l2_compare(rep, fd.field), 0.05);
}

TEST(L2Compare, IdentityAndScaling) {
  const MetricTree t = star({0.25, 0.25}, 0.25, kDt, 0.1, 0.1);
  BoundaryInput in;
  in.signals[2] = raised_cosine_bump(kDt, 129, 0.1);
  const FdResult r = fd_solve(t, in, 128);
  EXPECT_EQ(l2_compare(r.field, r.field), 0.0);
  SolutionField scaled = r.field;
  for (auto& ef : scaled.edges)
    for (auto& tr : ef.traces) {
      tr.u1 = cplx(1.01) * tr.u1;
      tr.u2 = cplx(1.01) * tr.u2;
    }
  EXPECT_NEAR(l2_compare(scaled, r.field), 0.01, 1e-12);
}

#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

using namespace dirac_tree;
using namespace dirac_tree::testing;

namespace {

Signal atoms_signal(double dt, std::size_t n, std::vector<std::pair<std::size_t, cplx>> atoms) {
  Signal s(dt, n);
  for (const auto& [i, a] : atoms) s.add_atom(i, a);
  return s;
}

double max_error(const std::vector<double>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

/// Diagonal response of leaf 2 in a star whose leaf edge carries `pot`.
Signal leaf_diagonal(const EdgePotential& pot, double dt) {
  RawGraph g = to_raw(star({1.0, 0.75}, 0.5, dt, 0.1, -0.2));
  g.edges[1].length = dt * static_cast<double>(pot.cells());
  g.edges[1].p_samples = pot.p;
  g.edges[1].q_samples = pot.q;
  const MetricTree t = validate_tree(g);
  return response_matrix(t, 2.0 * t.edges[1].length + dt).at(2, 2);
}

}  // namespace

TEST(EdgeReadout, DegreeThreeEcho) {
  const double dt = 1.0 / 64.0;
  const EdgeReadout r = recover_length_and_degree(atoms_signal(dt, 200, {{0, {0, 1}}, {128, {0, 2.0 / 3.0}}}));
  EXPECT_EQ(r.cells, 64u);
  EXPECT_DOUBLE_EQ(r.length, 1.0);
  EXPECT_EQ(r.degree, 3);
  EXPECT_FALSE(r.ends_at_root);
}

TEST(EdgeReadout, DegreeFiveEcho) {
  const double dt = 1.0 / 80.0;
  const EdgeReadout r = recover_length_and_degree(atoms_signal(dt, 200, {{0, {0, 1}}, {128, {0, 1.2}}}));
  EXPECT_DOUBLE_EQ(r.length, 0.8);
  EXPECT_EQ(r.degree, 5);
}

TEST(EdgeReadout, RootEcho) {
  const double dt = 1.0 / 64.0;
  const EdgeReadout r = recover_length_and_degree(atoms_signal(dt, 100, {{0, {0, 1}}, {40, {0, 2}}}));
  EXPECT_TRUE(r.ends_at_root);
  EXPECT_EQ(r.cells, 20u);
}

TEST(EdgeReadout, MatchesForwardSolverOnFreeStars) {
  const double dt = 1.0 / 32.0;
  for (std::size_t n = 3; n <= 6; ++n) {
    std::vector<double> lengths(n - 1, 0.75);
    lengths[0] = 0.5;
    const MetricTree t = star(lengths, 1.0, dt);
    const EdgeReadout r = recover_length_and_degree(response_matrix(t, 1.5).at(2, 2));
    EXPECT_EQ(r.degree, static_cast<int>(n));
    EXPECT_EQ(r.cells, 16u);
  }
}

TEST(EdgeReadout, Errors) {
  const double dt = 1.0 / 64.0;
  auto message = [](const Signal& s) {
    try {
      recover_length_and_degree(s);
    } catch (const inverse_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(atoms_signal(dt, 100, {{0, {0, 1}}})).find("horizon too short"), std::string::npos);
  EXPECT_NE(message(atoms_signal(dt, 100, {{0, {0, 1}}, {40, {0, 1.0 / 3.0}}})).find("matches no vertex degree"),
            std::string::npos);
  EXPECT_NE(message(atoms_signal(dt, 100, {{0, {1, 0}}, {40, {0, 1}}})).find("leading atom"), std::string::npos);
  EXPECT_NE(message(atoms_signal(dt, 100, {{0, {0, 1}}, {41, {0, 1}}})).find("twice"), std::string::npos);
  EXPECT_FALSE(message(atoms_signal(dt, 100, {{3, {0, 1}}})).empty());
}

TEST(RecoverPotential, ZeroWindowGivesZeroPotential) {
  const double dt = 1.0 / 64.0;
  const PotentialRecovery r = recover_potential(atoms_signal(dt, 200, {{0, {0, 1}}}), 64);
  EXPECT_EQ(max_error(r.potential.p, std::vector<double>(65, 0.0)), 0.0);
  EXPECT_EQ(max_error(r.potential.q, std::vector<double>(65, 0.0)), 0.0);
}

TEST(RecoverPotential, ConstantRoundTrip) {
  const double dt = 1.0 / 128.0;
  const EdgePotential truth = EdgePotential::constant(128, 0.3, 0.0);
  const PotentialRecovery r = recover_potential(leaf_diagonal(truth, dt), 128);
  EXPECT_LE(max_error(r.potential.p, truth.p), 0.05 * 0.3);
  EXPECT_LE(max_error(r.potential.q, truth.q), 0.05 * 0.3);
  EXPECT_LE(r.misfit, 1e-8);
}

TEST(RecoverPotential, SmoothRoundTripBothBackends) {
  const double dt = 1.0 / 128.0;
  EdgePotential truth;
  for (std::size_t j = 0; j <= 128; ++j) {
    const double x = dt * static_cast<double>(j);
    truth.p.push_back(0.0);
    truth.q.push_back(0.5 * std::sin(std::numbers::pi * x));
  }
  const Signal diag = leaf_diagonal(truth, dt);
  const PotentialRecovery strip = recover_potential(diag, 128);
  EXPECT_LE(max_error(strip.potential.q, truth.q), 0.05 * 0.5);
  EXPECT_LE(max_error(strip.potential.p, truth.p), 0.05 * 0.5);

  RecoveryOptions gn;
  gn.backend = RecoveryBackend::gauss_newton;
  const PotentialRecovery fit = recover_potential(diag, 128, gn);
  EXPECT_LE(max_error(fit.potential.q, truth.q), 0.05 * 0.5);
  EXPECT_LE(max_error(fit.potential.p, truth.p), 0.05 * 0.5);
  EXPECT_GT(fit.iterations, 0u);
}

TEST(RecoverPotential, StripIsExactOnGridData) {
  const double dt = 1.0 / 64.0;
  const RawEdge smooth = smooth_edge(1, 1, 0, 1.0, dt, 0.8, 0.4);
  const EdgePotential truth{smooth.p_samples, smooth.q_samples};
  const PotentialRecovery r = recover_potential(leaf_diagonal(truth, dt), 64);
  EXPECT_LE(max_error(r.potential.p, truth.p), 1e-9);
  EXPECT_LE(max_error(r.potential.q, truth.q), 1e-9);
}

TEST(RecoverPotential, ShortHorizonThrows) {
  EXPECT_THROW(recover_potential(Signal(1.0 / 64.0, 100), 64), inverse_error);
  EXPECT_THROW(recover_potential(Signal(1.0 / 64.0, 100), 0), std::invalid_argument);
}

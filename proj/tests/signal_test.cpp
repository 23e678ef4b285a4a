#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "dirac_tree/signal.hpp"

using namespace dirac_tree;

namespace {

constexpr double kDt = 1.0 / 128.0;

Signal indicator(double dt, std::size_t samples, double a, double b) {
  return Signal::from_function(dt, samples, [&](double t) {
    // mean of the one-sided limits at the jump
    if (std::abs(t - a) < 1e-12 || std::abs(t - b) < 1e-12) return cplx(0.5);
    return (t > a && t < b) ? cplx(1.0) : cplx(0.0);
  });
}

}  // namespace

TEST(SignalConvolve, DeltaTimesAddAmplitudesMultiply) {
  const std::size_t n = 129;
  const Signal a = Signal::delta(kDt, n, 64, cplx(2, 0));
  const Signal b = Signal::delta(kDt, n, 32, cplx(0, 3));
  const Signal c = convolve(a, b);
  ASSERT_EQ(c.atoms().size(), 1u);
  EXPECT_EQ(c.atoms()[0].index, 96u);
  EXPECT_NEAR(std::abs(c.atoms()[0].amplitude - cplx(0, 6)), 0.0, 1e-15);
  EXPECT_EQ(c.max_abs(), std::abs(cplx(0, 6)));
}

TEST(SignalConvolve, DeltaAtZeroIsIdentity) {
  const std::size_t n = 200;
  Signal f = Signal::from_function(kDt, n, [](double t) { return cplx(std::sin(t), t * t); });
  f.add_atom(17, cplx(0.3, -1));
  const Signal g = convolve(Signal::delta(kDt, n), f);
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(g.regular(k), f.regular(k));
  EXPECT_EQ(g.atom_at(17), cplx(0.3, -1));
  EXPECT_EQ(g.atoms().size(), 1u);
}

TEST(SignalConvolve, IndicatorSquaredIsHat) {
  const std::size_t n = 2 * 128 + 1;
  const Signal box = indicator(kDt, n, 0.0, 1.0);
  const Signal hat = convolve(box, box);
  double err = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = kDt * static_cast<double>(k);
    if (k == 0 || k == 128 || k == 256) continue;
    err = std::max(err, std::abs(hat.regular(k) - cplx(t <= 1.0 ? t : 2.0 - t)));
  }
  EXPECT_LE(err, 1e-12);
  // At t = 0, 1 and 2 both factors jump at the same node.  The product of
  // the two mean values there is off by dt/4, dt/2 and dt/4.
  EXPECT_NEAR(hat.regular(0).real(), 0.25 * kDt, 1e-12);
  EXPECT_NEAR(hat.regular(128).real(), 1.0 - 0.5 * kDt, 1e-12);
  EXPECT_NEAR(hat.regular(256).real(), 0.25 * kDt, 1e-12);
}

TEST(SignalConvolve, TruncatesToShorterHorizon) {
  const Signal a = Signal::delta(kDt, 10, 3);
  const Signal b = Signal::delta(kDt, 20, 9);
  const Signal c = convolve(a, b);
  EXPECT_EQ(c.size(), 10u);
  EXPECT_TRUE(c.atoms().empty());
}

TEST(SignalConvolve, GridMismatchThrows) {
  EXPECT_THROW(convolve(Signal(0.1, 5), Signal(0.2, 5)), grid_error);
}

TEST(SignalConvolve, IsAssociativeOnCellMasses) {
  std::mt19937 rng(5);
  std::normal_distribution<double> nd;
  auto random_signal = [&] {
    Signal s = Signal::from_function(kDt, 64, [&](double) { return cplx(nd(rng), nd(rng)); });
    s.add_atom(3, cplx(nd(rng), nd(rng)));
    return s;
  };
  const Signal a = random_signal(), b = random_signal(), c = random_signal();
  const Signal l = convolve(convolve(a, b), c);
  const Signal r = convolve(a, convolve(b, c));
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(std::abs(l.regular(k) - r.regular(k)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(l.atom_at(9) - r.atom_at(9)), 0.0, 1e-12);
}

TEST(SignalAlgebra, AddScaleCancels) {
  Signal f = Signal::from_function(kDt, 50, [](double t) { return cplx(std::cos(t), 1.0); });
  f.add_atom(4, 2.0);
  const Signal z = add_scale({{1.0, f}, {-1.0, f}});
  EXPECT_TRUE(z.atoms().empty());
  EXPECT_EQ(z.max_abs(), 0.0);
}

TEST(SignalAlgebra, ShiftMovesAtoms) {
  const Signal d = Signal::delta(kDt, 100, 10, cplx(0, 1));
  const Signal s = shift_by_time(d, 0.25);
  ASSERT_EQ(s.atoms().size(), 1u);
  EXPECT_EQ(s.atoms()[0].index, 42u);
  EXPECT_THROW(shift_by_time(d, 0.3 * kDt), grid_error);
  EXPECT_THROW(shift_by_time(d, -kDt), grid_error);
}

TEST(SignalAlgebra, ShiftPastHorizonDropsAtom) {
  const Signal s = shift(Signal::delta(kDt, 10, 5), 7);
  EXPECT_TRUE(s.atoms().empty());
}

TEST(SignalAlgebra, FirstAtom) {
  Signal s = Signal::delta(0.5, 10, 0, 1.0);
  s.add_atom(4, 0.5);
  const auto fa = first_atom(s);
  ASSERT_TRUE(fa.has_value());
  EXPECT_EQ(fa->time, 0.0);
  EXPECT_EQ(fa->amplitude, cplx(1.0));
  EXPECT_FALSE(first_atom(Signal::from_function(0.5, 10, [](double t) { return cplx(t); })).has_value());
}

TEST(Volterra, ZeroKernelDividesByC) {
  const std::size_t n = 257;
  const Signal g = solve_volterra_second_kind(cplx(0, 3), Signal(kDt, n), Signal::delta(kDt, n, 128));
  ASSERT_EQ(g.atoms().size(), 1u);
  EXPECT_EQ(g.atoms()[0].index, 128u);
  EXPECT_NEAR(std::abs(g.atoms()[0].amplitude - cplx(0, -1.0 / 3.0)), 0.0, 1e-15);
  EXPECT_EQ(g.regular_l2(), 0.0);
}

TEST(Volterra, UnitKernelGivesExponentialAtSecondOrder) {
  auto error_at = [](double dt) {
    const auto n = static_cast<std::size_t>(std::llround(2.0 / dt)) + 1;
    // k and G switch on at t = 0, so their first sample is the mean value 1/2
    Signal one = Signal::from_function(dt, n, [](double) { return cplx(1.0); });
    one.regular()[0] = 0.5;
    const Signal g = solve_volterra_second_kind(1.0, one, one);
    double e = 0.0;
    for (std::size_t k = 1; k < n; ++k)
      e = std::max(e, std::abs(g.regular(k) - std::exp(-dt * static_cast<double>(k))));
    return e;
  };
  const double e1 = error_at(1.0 / 64.0), e2 = error_at(1.0 / 128.0);
  EXPECT_LE(e1, 1e-4);
  EXPECT_NEAR(e1 / e2, 4.0, 0.3);
}

TEST(Volterra, MatchesDenseTriangularSolve) {
  const std::size_t n = 120;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a0 = u(rng), a1 = u(rng), a2 = u(rng);
  const Signal k = Signal::from_function(kDt, n, [&](double t) { return cplx(a0 + std::sin(3 * t), a1 * t + a2); });
  Signal rhs = Signal::from_function(kDt, n, [](double t) { return cplx(std::cos(t), 0.2); });
  rhs.add_atom(0, cplx(1, 1));
  rhs.add_atom(30, -0.5);
  rhs.add_atom(77, cplx(0, 2));
  const cplx c(1.5, -0.5);
  const Signal g = solve_volterra_second_kind(c, k, rhs);

  // Dense oracle on cell masses m[n] = atom[n] + dt*regular[n] for the atom
  // chain and the trapezoid system for the regular part.
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
  Eigen::VectorXcd b(n);
  const auto ga = rhs.dense_atoms();
  Eigen::VectorXcd atoms(n);
  for (std::size_t i = 0; i < n; ++i) atoms[i] = ga[i] / c;
  for (std::size_t i = 0; i < n; ++i) {
    b[i] = rhs.regular(i);
    A(i, i) = c + kDt * k.regular(0);
    for (std::size_t j = 1; j <= i; ++j) A(i, i - j) += kDt * k.regular(j);
    for (std::size_t j = 0; j <= i; ++j) b[i] -= k.regular(j) * atoms[i - j];
  }
  const Eigen::VectorXcd x = A.triangularView<Eigen::Lower>().solve(b);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(std::abs(g.regular(i) - x[i]), 0.0, 1e-9);
    EXPECT_NEAR(std::abs(g.atom_at(i) - atoms[i]), 0.0, 1e-12);
  }
}

TEST(Volterra, RejectsZeroLeadAndAtomicKernel) {
  EXPECT_THROW(solve_volterra_second_kind(0.0, Signal(kDt, 4), Signal(kDt, 4)), std::domain_error);
  EXPECT_THROW(solve_volterra_second_kind(1.0, Signal::delta(kDt, 4, 1), Signal(kDt, 4)), std::invalid_argument);
}

TEST(Volterra, DelayedFormMatchesExplicitConvolution) {
  // g + k*g = G + shift(g, d) * h with delay d = 8 cells
  const std::size_t n = 160, d = 8;
  const Signal k = Signal::from_function(kDt, n, [](double t) { return cplx(0.3 * t, 0.1); });
  const Signal h = Signal::from_function(kDt, n, [](double t) { return cplx(std::cos(t), 0.0); });
  const Signal G = Signal::delta(kDt, n, 0, 1.0);
  auto rhs = [&](std::size_t begin, std::size_t end, const VolterraMarcher& m, std::vector<cplx>& ra,
                 std::vector<cplx>& rr) {
    Signal past(kDt, n);
    for (std::size_t i = 0; i < begin; ++i) past.regular()[i] = m.regular_history()[i];
    std::vector<cplx> at(n, cplx{});
    for (std::size_t i = 0; i < begin; ++i) at[i] = m.atom_history()[i];
    past.set_atoms_dense(at);
    const Signal lag = convolve(shift(past, d), h);
    for (std::size_t i = begin; i < end; ++i) {
      ra[i - begin] = G.atom_at(i) + lag.atom_at(i);
      rr[i - begin] = G.regular(i) + lag.regular(i);
    }
  };
  const Signal g = solve_volterra_second_kind(1.0, k, rhs, d * kDt, n);
  const Signal residual = g + convolve(k, g) - G - convolve(shift(g, d), h);
  EXPECT_LE(residual.max_abs(), 1e-12);
}

TEST(Deconvolve, InvertsConvolution) {
  const std::size_t n = 300;
  Signal div = Signal::from_function(kDt, n, [](double t) { return t < 0.2 ? cplx{} : cplx(0.5 * t, -t); });
  div.add_atom(25, cplx(0, 2));
  Signal x = Signal::from_function(kDt, n, [](double t) { return cplx(std::sin(2 * t), 1.0); });
  x.add_atom(10, 1.0);
  const Signal rhs = convolve(div, x);
  const Signal y = deconvolve(rhs, div);
  ASSERT_EQ(y.size(), n - 25);
  for (std::size_t k = 0; k < y.size(); ++k) EXPECT_NEAR(std::abs(y.regular(k) - x.regular(k)), 0.0, 1e-10);
  EXPECT_NEAR(std::abs(y.atom_at(10) - 1.0), 0.0, 1e-12);
}

TEST(ExtractAtoms, RecoversSpreadAtom) {
  const std::size_t n = 3 * 128 + 1;
  std::vector<cplx> raw(n);
  for (std::size_t k = 0; k < n; ++k) raw[k] = std::sin(kDt * static_cast<double>(k));
  raw[128] += 1.0 / kDt;
  const Signal s = extract_atoms(raw, kDt);
  ASSERT_EQ(s.atoms().size(), 1u);
  EXPECT_EQ(s.atoms()[0].index, 128u);
  EXPECT_NEAR(std::abs(s.atoms()[0].amplitude - 1.0), 0.0, 1e-8);
}

TEST(ExtractAtoms, SmoothSignalHasNoAtoms) {
  std::vector<cplx> raw(200);
  for (std::size_t k = 0; k < raw.size(); ++k) raw[k] = std::exp(cplx(0, kDt * static_cast<double>(k)));
  EXPECT_TRUE(extract_atoms(raw, kDt).atoms().empty());
}

TEST(ExtractAtoms, ExactSignalPassesThrough) {
  Signal s = Signal::delta(kDt, 20, 3, cplx(0, 1));
  s.regular()[5] = 2.0;
  const Signal t = extract_atoms(s);
  EXPECT_EQ(t.atom_at(3), cplx(0, 1));
  EXPECT_EQ(t.regular(5), cplx(2.0));
}

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dirac_tree {

using cplx = std::complex<double>;

class grid_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A Dirac atom at an integer grid index.
struct Atom {
  std::size_t index;
  cplx amplitude;
};

inline constexpr double kAtomMergeThreshold = 1e-14;

/// Time signal on the grid {0, dt, ..., (size-1) dt}: a finite delta train plus
/// a sampled regular part.
///
/// Regular samples at a node where the regular part jumps hold the mean of the
/// two one-sided limits.  With that convention the cell masses
/// m[n] = atom[n] + dt * regular[n] multiply as polynomial coefficients under
/// convolution, which is the trapezoidal rule and is exactly associative.
class Signal {
 public:
  Signal() = default;
  Signal(double dt, std::size_t samples) : dt_(dt), regular_(samples, cplx{}) {
    if (!(dt > 0.0)) throw grid_error("signal grid step must be positive");
  }

  static Signal delta(double dt, std::size_t samples, std::size_t index = 0, cplx amplitude = 1.0) {
    Signal s(dt, samples);
    s.add_atom(index, amplitude);
    return s;
  }

  /// Samples f(n dt) into the regular part.
  static Signal from_function(double dt, std::size_t samples, const std::function<cplx(double)>& f) {
    Signal s(dt, samples);
    for (std::size_t n = 0; n < samples; ++n) s.regular_[n] = f(dt * static_cast<double>(n));
    return s;
  }

  double dt() const { return dt_; }
  std::size_t size() const { return regular_.size(); }
  double horizon() const { return size() == 0 ? 0.0 : dt_ * static_cast<double>(size() - 1); }
  bool empty() const { return regular_.empty(); }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<cplx>& regular() const { return regular_; }
  std::vector<cplx>& regular() { return regular_; }
  cplx regular(std::size_t n) const { return regular_[n]; }

  /// Adds to the atom at `index` (merging); atoms past the horizon are dropped.
  void add_atom(std::size_t index, cplx amplitude) {
    if (index >= size()) return;
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), index,
                               [](const Atom& a, std::size_t i) { return a.index < i; });
    if (it != atoms_.end() && it->index == index) {
      it->amplitude += amplitude;
      if (std::abs(it->amplitude) <= kAtomMergeThreshold) atoms_.erase(it);
    } else if (std::abs(amplitude) > kAtomMergeThreshold) {
      atoms_.insert(it, Atom{index, amplitude});
    }
  }

  cplx atom_at(std::size_t index) const {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), index,
                               [](const Atom& a, std::size_t i) { return a.index < i; });
    return (it != atoms_.end() && it->index == index) ? it->amplitude : cplx{};
  }

  /// Atom amplitudes as a dense array of length size().
  std::vector<cplx> dense_atoms() const {
    std::vector<cplx> d(size(), cplx{});
    for (const auto& a : atoms_) d[a.index] = a.amplitude;
    return d;
  }

  void set_atoms_dense(const std::vector<cplx>& dense) {
    atoms_.clear();
    for (std::size_t n = 0; n < std::min(dense.size(), size()); ++n)
      if (std::abs(dense[n]) > kAtomMergeThreshold) atoms_.push_back(Atom{n, dense[n]});
  }

  /// Restricts to the first `samples` grid points.
  Signal truncated(std::size_t samples) const {
    Signal s(dt_, std::min(samples, size()));
    std::copy_n(regular_.begin(), s.size(), s.regular_.begin());
    for (const auto& a : atoms_)
      if (a.index < s.size()) s.atoms_.push_back(a);
    return s;
  }

  Signal& operator*=(cplx k) {
    for (auto& a : atoms_) a.amplitude *= k;
    for (auto& r : regular_) r *= k;
    if (k == cplx{}) atoms_.clear();
    return *this;
  }

  /// Largest magnitude among atom amplitudes and regular samples.
  double max_abs() const {
    double m = 0.0;
    for (const auto& a : atoms_) m = std::max(m, std::abs(a.amplitude));
    for (const auto& r : regular_) m = std::max(m, std::abs(r));
    return m;
  }

  double regular_l2() const {
    double s = 0.0;
    for (const auto& r : regular_) s += std::norm(r);
    return std::sqrt(s * dt_);
  }

 private:
  double dt_ = 1.0;
  std::vector<Atom> atoms_;
  std::vector<cplx> regular_;
};

namespace detail {

inline void check_same_grid(const Signal& a, const Signal& b) {
  if (std::abs(a.dt() - b.dt()) > 1e-15 * std::max(a.dt(), b.dt()))
    throw grid_error("signal grid mismatch: dt " + std::to_string(a.dt()) + " vs " + std::to_string(b.dt()));
}

}  // namespace detail

/// (a*b)(t) = int_0^t a(s) b(t-s) ds truncated to the shorter horizon.
inline Signal convolve(const Signal& a, const Signal& b) {
  detail::check_same_grid(a, b);
  const std::size_t n = std::min(a.size(), b.size());
  const double dt = a.dt();
  Signal out(dt, n);
  for (const auto& x : a.atoms())
    for (const auto& y : b.atoms())
      if (x.index + y.index < n) out.add_atom(x.index + y.index, x.amplitude * y.amplitude);

  auto& r = out.regular();
  const auto& ra = a.regular();
  const auto& rb = b.regular();
  for (const auto& x : a.atoms())
    for (std::size_t k = x.index; k < n; ++k) r[k] += x.amplitude * rb[k - x.index];
  for (const auto& y : b.atoms())
    for (std::size_t k = y.index; k < n; ++k) r[k] += y.amplitude * ra[k - y.index];

  // Only the nonzero windows of the regular parts contribute; kernels often
  // start late and pulses end early.
  auto window = [n](const std::vector<cplx>& v) {
    std::size_t lo = 0, hi = n;
    while (lo < hi && v[lo] == cplx{}) ++lo;
    while (hi > lo && v[hi - 1] == cplx{}) --hi;
    return std::pair{lo, hi};
  };
  const auto [a0, a1] = window(ra);
  const auto [b0, b1] = window(rb);
  for (std::size_t i = a0; i < a1; ++i) {
    const cplx ai = ra[i] * dt;
    if (ai == cplx{}) continue;
    const std::size_t kend = std::min(n, i + b1);
    for (std::size_t k = i + b0; k < kend; ++k) r[k] += ai * rb[k - i];
  }
  return out;
}

/// Linear combination sum_i c_i s_i on a shared grid; horizon is the shortest.
inline Signal add_scale(const std::vector<std::pair<cplx, Signal>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_scale needs at least one term");
  std::size_t n = terms.front().second.size();
  for (const auto& [c, s] : terms) {
    detail::check_same_grid(terms.front().second, s);
    n = std::min(n, s.size());
  }
  Signal out(terms.front().second.dt(), n);
  for (const auto& [c, s] : terms) {
    for (const auto& a : s.atoms())
      if (a.index < n) out.add_atom(a.index, c * a.amplitude);
    for (std::size_t k = 0; k < n; ++k) out.regular()[k] += c * s.regular(k);
  }
  return out;
}

inline Signal operator+(const Signal& a, const Signal& b) { return add_scale({{1.0, a}, {1.0, b}}); }
inline Signal operator-(const Signal& a, const Signal& b) { return add_scale({{1.0, a}, {-1.0, b}}); }
inline Signal operator*(cplx k, Signal s) { return s *= k; }

/// Delays by `steps` grid cells, zero-filling the front; horizon unchanged.
inline Signal shift(const Signal& a, std::size_t steps) {
  Signal out(a.dt(), a.size());
  for (const auto& x : a.atoms()) out.add_atom(x.index + steps, x.amplitude);
  for (std::size_t k = steps; k < a.size(); ++k) out.regular()[k] = a.regular(k - steps);
  return out;
}

/// Delay given as a time; must be a non-negative multiple of dt.
inline Signal shift_by_time(const Signal& a, double tau) {
  const double steps = tau / a.dt();
  if (tau < 0.0 || std::abs(steps - std::round(steps)) > 1e-9)
    throw grid_error("shift must be a non-negative multiple of the grid step");
  return shift(a, static_cast<std::size_t>(std::llround(steps)));
}

/// Advances by `steps` cells (drops the first `steps` samples).  Whatever lay
/// before the cut must be zero; `tolerance` bounds what is discarded.
inline Signal advance(const Signal& a, std::size_t steps, double tolerance = 1e-9) {
  if (steps == 0) return a;
  if (steps >= a.size()) return Signal(a.dt(), 0);
  for (const auto& x : a.atoms())
    if (x.index < steps && std::abs(x.amplitude) > tolerance)
      throw std::domain_error("advance: signal has an atom before the cut");
  Signal out(a.dt(), a.size() - steps);
  for (const auto& x : a.atoms())
    if (x.index >= steps) out.add_atom(x.index - steps, x.amplitude);
  for (std::size_t k = 0; k < out.size(); ++k) out.regular()[k] = a.regular(k + steps);
  return out;
}

struct FirstAtom {
  double time;
  std::size_t index;
  cplx amplitude;
};

inline std::optional<FirstAtom> first_atom(const Signal& s) {
  if (s.atoms().empty()) return std::nullopt;
  const auto& a = s.atoms().front();
  return FirstAtom{s.dt() * static_cast<double>(a.index), a.index, a.amplitude};
}

/// Marches c g[n] + sum_{j>=0} rest[j] g[n-j] = G[n] one index at a time.
/// `rest` may carry atoms at indices >= 1 and a regular part from index 0.
/// The caller feeds G[n] (split into atom and regular parts) after reading
/// whatever history it needs, so a right-hand side that depends on the
/// unknown with a positive delay can be evaluated on the fly.
class VolterraMarcher {
 public:
  VolterraMarcher(cplx c, Signal rest, std::size_t samples)
      : c_(c), rest_(std::move(rest)), g_(rest_.dt(), samples), atoms_(samples, cplx{}) {
    if (c == cplx{}) throw std::domain_error("Volterra leading coefficient is zero");
    for (const auto& a : rest_.atoms())
      if (a.index == 0) throw std::domain_error("Volterra kernel atom at zero delay; fold it into c");
    lead_ = c_ + rest_.dt() * (rest_.size() > 0 ? rest_.regular(0) : cplx{});
    if (std::abs(lead_) < 1e-300) throw std::domain_error("Volterra step is singular");
  }

  std::size_t next_index() const { return next_; }
  std::size_t size() const { return g_.size(); }
  const std::vector<cplx>& atom_history() const { return atoms_; }
  const std::vector<cplx>& regular_history() const { return g_.regular(); }

  void step(cplx rhs_atom, cplx rhs_regular) {
    const std::size_t n = next_++;
    const double dt = rest_.dt();
    const auto& k = rest_.regular();
    auto& r = g_.regular();
    cplx sa = rhs_atom;
    for (const auto& a : rest_.atoms()) {
      if (a.index > n) break;
      sa -= a.amplitude * atoms_[n - a.index];
    }
    atoms_[n] = sa / c_;

    cplx sr = rhs_regular;
    const std::size_t kmax = std::min(n, k.empty() ? 0 : k.size() - 1);
    if (!k.empty()) {
      sr -= k[0] * atoms_[n];
      for (std::size_t j = 1; j <= kmax; ++j) sr -= k[j] * (atoms_[n - j] + dt * r[n - j]);
    }
    for (const auto& a : rest_.atoms()) {
      if (a.index > n) break;
      sr -= a.amplitude * r[n - a.index];
    }
    r[n] = sr / lead_;
  }

  Signal result() const {
    Signal out = g_;
    out.set_atoms_dense(atoms_);
    return out;
  }

 private:
  cplx c_;
  Signal rest_;
  Signal g_;
  std::vector<cplx> atoms_;
  cplx lead_;
  std::size_t next_ = 0;
};

/// Solves c g(t) + int_0^t k(s) g(t-s) ds = G(t) on the grid of G.  Atoms of G
/// become atoms of g scaled by 1/c; their kernel tails move into the regular
/// equation, which is marched with the trapezoidal rule.
inline Signal solve_volterra_second_kind(cplx c, const Signal& kernel, const Signal& rhs) {
  detail::check_same_grid(kernel, rhs);
  if (!kernel.atoms().empty()) throw std::invalid_argument("Volterra kernel must be regular-only");
  VolterraMarcher m(c, kernel, rhs.size());
  const auto ga = rhs.dense_atoms();
  for (std::size_t n = 0; n < rhs.size(); ++n) m.step(ga[n], rhs.regular(n));
  return m.result();
}

/// Right-hand side callback for the delayed form: fills G on [begin, end)
/// given the solution computed on [0, begin).
using VolterraBlockRhs =
    std::function<void(std::size_t begin, std::size_t end, const VolterraMarcher& history,
                       std::vector<cplx>& rhs_atoms, std::vector<cplx>& rhs_regular)>;

/// Delayed variant: the right-hand side at time t may reference g up to
/// t - delay, so it is evaluated block by block with block length `delay`.
inline Signal solve_volterra_second_kind(cplx c, const Signal& kernel, const VolterraBlockRhs& rhs,
                                         double delay, std::size_t samples) {
  const double steps = delay / kernel.dt();
  if (delay <= 0.0 || std::abs(steps - std::round(steps)) > 1e-9)
    throw grid_error("Volterra delay must be a positive multiple of the grid step");
  if (!kernel.atoms().empty()) throw std::invalid_argument("Volterra kernel must be regular-only");
  const auto block = static_cast<std::size_t>(std::llround(steps));
  VolterraMarcher m(c, kernel, samples);
  std::vector<cplx> ra, rr;
  for (std::size_t begin = 0; begin < samples; begin += block) {
    const std::size_t end = std::min(samples, begin + block);
    ra.assign(end - begin, cplx{});
    rr.assign(end - begin, cplx{});
    rhs(begin, end, m, ra, rr);
    for (std::size_t n = begin; n < end; ++n) m.step(ra[n - begin], rr[n - begin]);
  }
  return m.result();
}

/// Solves divisor * g = rhs where the earliest mass of `divisor` is an atom.
/// The result has horizon rhs.horizon() - (leading atom time).
inline Signal deconvolve(const Signal& rhs, const Signal& divisor, double tolerance = 1e-9) {
  detail::check_same_grid(rhs, divisor);
  const auto lead = first_atom(divisor);
  if (!lead) throw std::domain_error("deconvolve: divisor has no atom");
  for (std::size_t k = 0; k < lead->index; ++k)
    if (std::abs(divisor.regular(k)) > tolerance)
      throw std::domain_error("deconvolve: divisor regular part precedes its leading atom");
  Signal rest = advance(divisor, lead->index);
  rest.add_atom(0, -lead->amplitude);
  const Signal h = advance(rhs, lead->index, tolerance * std::max(1.0, rhs.max_abs()));
  VolterraMarcher m(lead->amplitude, rest.truncated(h.size()), h.size());
  const auto ha = h.dense_atoms();
  for (std::size_t n = 0; n < h.size(); ++n) m.step(ha[n], h.regular(n));
  return m.result();
}

/// Separates atoms from raw density samples.  An atom of amplitude A is
/// expected as A/dt concentrated in a single sample; the regular value there
/// is predicted from a cubic through the two neighbours on each side.  Atoms
/// are accepted greedily, largest excess first, and each accepted sample is
/// replaced by its prediction before the neighbours are re-examined.
inline Signal extract_atoms(const std::vector<cplx>& samples, double dt, double threshold = 1e-6) {
  if (!(threshold > 0.0)) throw std::invalid_argument("extract_atoms threshold must be positive");
  const std::size_t n = samples.size();
  std::vector<cplx> clean = samples;
  auto predict = [&](std::size_t k) -> cplx {
    const auto& s = clean;
    if (k >= 2 && k + 2 < n) return (-s[k - 2] + 4.0 * s[k - 1] + 4.0 * s[k + 1] - s[k + 2]) / 6.0;
    if (k >= 1 && k + 1 < n) return 0.5 * (s[k - 1] + s[k + 1]);
    if (k == 0 && n >= 3) return 2.0 * s[1] - s[2];
    if (k + 1 == n && n >= 3) return 2.0 * s[n - 2] - s[n - 3];
    return cplx{};
  };
  std::vector<bool> is_atom(n, false);
  for (;;) {
    std::size_t best = n;
    double excess = threshold / dt;
    for (std::size_t k = 0; k < n; ++k) {
      if (is_atom[k]) continue;
      const double e = std::abs(clean[k] - predict(k));
      if (e > excess) {
        excess = e;
        best = k;
      }
    }
    if (best == n) break;
    is_atom[best] = true;
    clean[best] = predict(best);
  }
  // Predictions at atoms are refreshed once all neighbours are clean.
  for (std::size_t k = 0; k < n; ++k)
    if (is_atom[k]) clean[k] = predict(k);
  Signal out(dt, n);
  out.regular() = clean;
  for (std::size_t k = 0; k < n; ++k)
    if (is_atom[k]) out.add_atom(k, (samples[k] - clean[k]) * dt);
  return out;
}

/// Pass-through for signals whose atoms are already exact.
inline Signal extract_atoms(const Signal& s, double threshold = 1e-6) {
  if (!(threshold > 0.0)) throw std::invalid_argument("extract_atoms threshold must be positive");
  return s;
}

/// Value of the regular part (interpreted as cell densities) plus atoms spread
/// over one cell; used for comparisons with sampled data.
inline std::vector<cplx> dense_density(const Signal& s) {
  std::vector<cplx> d = s.regular();
  for (const auto& a : s.atoms()) d[a.index] += a.amplitude / s.dt();
  return d;
}

}  // namespace dirac_tree

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "geoflow/core.hpp"

namespace geoflow {

// Connection on the tangent bundle of the sphere with simple poles only,
// locally represented by f(z) = sum_j rho_j / (z - p_j). The residue at
// infinity is never stored; it is derived from the residue sum so that the
// tangent-bundle degree constraint holds by construction.
struct FuchsianConnection {
  std::vector<cpx> poles;
  std::vector<cpx> residues;
  // When false the model is treated as living on a subdomain of the plane:
  // infinity is not listed among the singular points and trajectories that
  // run far out are reported as escaped.
  bool include_infinity = true;

  cpx rho_infinity() const {
    cpx s{0.0, 0.0};
    for (const cpx& r : residues) s += r;
    return -2.0 - s;
  }

  bool infinity_is_pole() const {
    return include_infinity && std::abs(rho_infinity()) > 1e-12;
  }

  // Global singular-point indexing: finite poles first, then infinity.
  std::size_t infinity_index() const { return poles.size(); }

  std::size_t singular_count() const {
    return poles.size() + (infinity_is_pole() ? 1 : 0);
  }

  cpx residue(std::size_t j) const {
    return j < poles.size() ? residues[j] : rho_infinity();
  }

  bool has_real_residues(double tol = 1e-12) const {
    for (const cpx& r : residues)
      if (std::abs(r.imag()) > tol) return false;
    return true;
  }
};

struct ValidationReport {
  bool ok = true;
  bool poles_distinct = true;
  bool residues_nonzero = true;
  bool sizes_match = true;
  cpx rho_infinity{0.0, 0.0};
  bool infinity_singular = false;
  std::vector<std::string> issues;
};

inline constexpr double kPoleSeparation = 1e-12;  // chordal

inline ValidationReport validate(const FuchsianConnection& c) {
  ValidationReport rep;
  rep.rho_infinity = c.rho_infinity();
  rep.infinity_singular = c.infinity_is_pole();
  if (c.poles.size() != c.residues.size()) {
    rep.sizes_match = false;
    rep.issues.push_back("poles and residues differ in length");
  }
  const std::size_t n = std::min(c.poles.size(), c.residues.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (c.residues[i] == cpx{0.0, 0.0}) {
      rep.residues_nonzero = false;
      rep.issues.push_back("zero residue at pole " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < c.poles.size(); ++i)
    for (std::size_t j = i + 1; j < c.poles.size(); ++j)
      if (chordal(c.poles[i], c.poles[j]) <= kPoleSeparation) {
        rep.poles_distinct = false;
        rep.issues.push_back("poles " + std::to_string(i) + " and " +
                             std::to_string(j) + " coincide");
      }
  rep.ok = rep.poles_distinct && rep.residues_nonzero && rep.sizes_match;
  return rep;
}

inline void require_valid(const FuchsianConnection& c) {
  ValidationReport rep = validate(c);
  if (rep.ok) return;
  if (!rep.poles_distinct) throw DuplicatePoles(rep.issues.front());
  if (!rep.residues_nonzero) throw ZeroResidue(rep.issues.front());
  throw ConfigError(rep.issues.front());
}

// Local coefficient of the connection form in the requested chart.
// In the z chart this is f(z) = sum_j rho_j / (z - p_j). In the w chart the
// transformation rule gives f_w(w) = -f(1/w)/w^2 - 2/w, which rearranges to
// the cancellation-free form rho_inf / w - sum_j rho_j p_j / (1 - p_j w).
inline cpx coefficient_at(const FuchsianConnection& c, const cpx& x,
                          Chart chart = Chart::z) {
  if (chart == Chart::z) {
    cpx f{0.0, 0.0};
    for (std::size_t j = 0; j < c.poles.size(); ++j) {
      const cpx d = x - c.poles[j];
      if (std::abs(d) < 1e-13) throw EvaluationAtPole("coefficient_at pole");
      f += c.residues[j] / d;
    }
    return f;
  }
  const cpx rho_inf = c.rho_infinity();
  const bool inf_pole = std::abs(rho_inf) > 1e-12;
  cpx f{0.0, 0.0};
  if (inf_pole) {
    if (std::abs(x) < 1e-13) throw EvaluationAtPole("coefficient_at infinity");
    f += rho_inf / x;
  }
  for (std::size_t j = 0; j < c.poles.size(); ++j) {
    const cpx d = 1.0 - c.poles[j] * x;
    if (std::abs(d) < 1e-13) throw EvaluationAtPole("coefficient_at pole");
    f -= c.residues[j] * c.poles[j] / d;
  }
  return f;
}

// Non-throwing variant used by step-size heuristics; beside a pole the
// magnitude is irrelevant there anyway.
inline cpx coefficient_at_or_zero(const FuchsianConnection& c, const cpx& x,
                                  Chart chart = Chart::z) noexcept {
  try {
    return coefficient_at(c, x, chart);
  } catch (...) {
    return cpx{0.0, 0.0};
  }
}

// Rational section of the k-th tensor power of the cotangent bundle,
// c * prod_j (z - q_j)^{m_j} (dz)^k. The order at infinity is derived from
// the bundle degree.
struct KDifferential {
  int k = 1;
  std::vector<cpx> points;
  std::vector<int> exponents;
  cpx scale{1.0, 0.0};

  int m_infinity() const {
    int s = 0;
    for (int m : exponents) s += m;
    return -2 * k - s;
  }
};

inline void require_valid(const KDifferential& q) {
  if (q.k < 1) throw ConfigError("k must be a positive integer");
  if (q.points.size() != q.exponents.size())
    throw ConfigError("points and exponents differ in length");
  if (q.scale == cpx{0.0, 0.0}) throw ConfigError("scale must be nonzero");
  for (int m : q.exponents)
    if (m == 0) throw ConfigError("exponents must be nonzero");
  for (std::size_t i = 0; i < q.points.size(); ++i)
    for (std::size_t j = i + 1; j < q.points.size(); ++j)
      if (chordal(q.points[i], q.points[j]) <= kPoleSeparation)
        throw DuplicatePoles("critical points coincide");
}

// dq/(kq) has a simple pole of residue m_j/k at each critical point; the
// scale constant drops out.
inline FuchsianConnection connection_from_kdiff(const KDifferential& q) {
  require_valid(q);
  FuchsianConnection c;
  c.poles = q.points;
  c.residues.reserve(q.points.size());
  for (int m : q.exponents)
    c.residues.emplace_back(static_cast<double>(m) / q.k, 0.0);
  c.include_infinity = true;
  return c;
}

// Inverse direction: requires every k*rho_j to be an integer. The result has
// scale 1; it is only ever determined up to a nonzero constant anyway.
inline KDifferential kdiff_from_connection(const FuchsianConnection& c,
                                           int k, double tol = 1e-9) {
  require_valid(c);
  if (k < 1) throw KUndefined("k must be a positive integer");
  KDifferential q;
  q.k = k;
  q.points = c.poles;
  q.exponents.reserve(c.poles.size());
  for (const cpx& rho : c.residues) {
    const double kr = k * rho.real();
    const double m = std::round(kr);
    if (std::abs(rho.imag()) > tol || std::abs(kr - m) > tol)
      throw ResiduesNotInOneOverKZ("residue " + std::to_string(rho.real()) +
                                   (rho.imag() >= 0 ? "+" : "") +
                                   std::to_string(rho.imag()) +
                                   "i is not in (1/k)Z for k=" +
                                   std::to_string(k));
    if (m == 0.0)
      throw ResiduesNotInOneOverKZ("residue rounds to a zero exponent");
    q.exponents.push_back(static_cast<int>(m));
  }
  q.scale = cpx{1.0, 0.0};
  return q;
}

// Flat metric with conical/logarithmic singularities on a plane domain,
// density u(z) = prod_j |z - z_j|^{c_j} * exp(Re F(z)) with F a polynomial.
struct SingularFlatMetric {
  std::vector<cpx> points;
  std::vector<double> residues;
  std::vector<cpx> holomorphic_factor;  // polynomial coefficients, constant first

  cpx F(const cpx& z) const {
    cpx acc{0.0, 0.0};
    for (std::size_t i = holomorphic_factor.size(); i-- > 0;)
      acc = acc * z + holomorphic_factor[i];
    return acc;
  }

  double density(const cpx& z) const {
    double log_u = 0.0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      const double d = std::abs(z - points[j]);
      if (d < 1e-300) throw EvaluationAtPole("metric density at singularity");
      log_u += residues[j] * std::log(d);
    }
    if (!holomorphic_factor.empty()) log_u += F(z).real();
    return std::exp(log_u);
  }
};

inline SingularFlatMetric metric_from_connection(const FuchsianConnection& c) {
  if (!c.has_real_residues())
    throw NonRealResidues("adapted metric requires real residues");
  SingularFlatMetric g;
  g.points = c.poles;
  g.residues.reserve(c.residues.size());
  for (const cpx& r : c.residues) g.residues.push_back(r.real());
  return g;
}

// Density of the adapted metric, prod_j |z - p_j|^{rho_j}.
inline double metric_density(const FuchsianConnection& c, const cpx& z) {
  if (!c.has_real_residues())
    throw NonRealResidues("metric density requires real residues");
  double log_u = 0.0;
  for (std::size_t j = 0; j < c.poles.size(); ++j) {
    const double d = std::abs(z - c.poles[j]);
    if (d < 1e-13) throw EvaluationAtPole("metric density at pole");
    log_u += c.residues[j].real() * std::log(d);
  }
  return std::exp(log_u);
}

namespace detail {

template <typename F>
double adaptive_simpson(const F& f, double a, double fa, double b, double fb,
                        double m, double fm, double whole, double tol,
                        int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol,
                          depth - 1) +
         adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol,
                          depth - 1);
}

}  // namespace detail

// Metric length of a polyline, integrating the density along each segment
// with adaptive refinement to relative tolerance rel_tol.
inline double path_length(const FuchsianConnection& c,
                          std::span<const cpx> polyline,
                          double rel_tol = 1e-8) {
  if (polyline.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    const cpx a = polyline[i], b = polyline[i + 1];
    const double len = std::abs(b - a);
    if (len == 0.0) continue;
    auto f = [&](double s) { return metric_density(c, a + s * (b - a)) * len; };
    const double fa = f(0.0), fb = f(1.0), fm = f(0.5);
    const double whole = (fa + 4.0 * fm + fb) / 6.0;
    // a first coarse pass sets the absolute tolerance for this segment
    const double tol = std::max(rel_tol * std::abs(whole), 1e-300);
    total += detail::adaptive_simpson(f, 0.0, fa, 1.0, fb, 0.5, fm, whole,
                                      tol, 40);
  }
  return total;
}

// Trapezoidal contour integral of the coefficient along the circle
// |z - center| = radius. Spectrally accurate for analytic integrands.
inline cpx loop_integral(const FuchsianConnection& c, const cpx& center,
                         double radius, int nodes = 1024) {
  cpx acc{0.0, 0.0};
  for (int i = 0; i < nodes; ++i) {
    const double th = kTwoPi * i / nodes;
    const cpx z = center + radius * std::polar(1.0, th);
    const cpx dz = radius * cpx{0.0, 1.0} * std::polar(1.0, th);
    acc += coefficient_at(c, z) * dz;
  }
  return acc * (kTwoPi / nodes);
}

// Residue at pole j via contour quadrature, (1/2\pi i) of the loop integral.
inline cpx residue_via_contour(const FuchsianConnection& c, std::size_t j,
                               int nodes = 1024) {
  double r = 1.0;
  for (std::size_t i = 0; i < c.poles.size(); ++i)
    if (i != j) r = std::min(r, 0.45 * std::abs(c.poles[i] - c.poles[j]));
  return loop_integral(c, c.poles[j], r, nodes) / cpx{0.0, kTwoPi};
}

}  // namespace geoflow

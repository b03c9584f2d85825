#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "geoflow/connection.hpp"
#include "geoflow/core.hpp"

namespace geoflow {

// Continuously continued branch data for the primitive
//   K(z) = sum_j rho_j log(z - p_j)
// along a path. In the w chart the tracked quantities are log(1 - p_j w)
// plus one slot for log w, and
//   K = sum_j rho_j log(1 - p_j w) + rho_inf log w + i*pi,
// which equals the z-chart primitive shifted by the transition factor
// log(-1/w^2), so exp(K) * velocity is continuous across chart switches.
struct HolonomyState {
  Chart chart = Chart::z;
  cpx position{0.0, 0.0};
  std::vector<cpx> logs;   // one per finite pole
  cpx logw{0.0, 0.0};      // used in the w chart only
};

inline HolonomyState init_holonomy(const FuchsianConnection& c, const cpx& x,
                                   Chart chart = Chart::z) {
  HolonomyState s;
  s.chart = chart;
  s.position = x;
  s.logs.reserve(c.poles.size());
  if (chart == Chart::z) {
    for (const cpx& p : c.poles) {
      const cpx d = x - p;
      if (std::abs(d) < 1e-300) throw StartAtPole("holonomy init at pole");
      s.logs.push_back(std::log(d));
    }
  } else {
    for (const cpx& p : c.poles) {
      const cpx d = 1.0 - p * x;
      if (std::abs(d) < 1e-300) throw StartAtPole("holonomy init at pole");
      s.logs.push_back(std::log(d));
    }
    if (std::abs(x) < 1e-300) throw StartAtPole("holonomy init at infinity");
    s.logw = std::log(x);
  }
  return s;
}

namespace detail {

// Branch points of the tracked logs in chart coordinates. In the w chart the
// finite pole p_j sits at w = 1/p_j; a pole at the origin has no image there.
inline void chart_singularities(const FuchsianConnection& c, Chart chart,
                                std::vector<cpx>& out) {
  out.clear();
  if (chart == Chart::z) {
    out.assign(c.poles.begin(), c.poles.end());
  } else {
    for (const cpx& p : c.poles)
      if (std::abs(p) > 1e-300) out.push_back(1.0 / p);
    if (c.infinity_is_pole()) out.push_back(cpx{0.0, 0.0});
  }
}

inline double segment_distance(const cpx& a, const cpx& b, const cpx& p) {
  const cpx ab = b - a;
  const double len2 = std::norm(ab);
  if (len2 == 0.0) return std::abs(p - a);
  double t = ((p - a) * std::conj(ab)).real() / len2;
  t = std::clamp(t, 0.0, 1.0);
  return std::abs(p - (a + t * ab));
}

}  // namespace detail

// Advance the continuation along the straight segment to `to`. Each tracked
// log changes by a principal-branch increment, which matches the analytic
// continuation along the segment as long as the segment avoids the branch
// point. The step-size contract keeps every imaginary increment below pi.
inline HolonomyState continue_along(const FuchsianConnection& c,
                                    const HolonomyState& s, const cpx& to) {
  thread_local std::vector<cpx> sing;
  detail::chart_singularities(c, s.chart, sing);
  double dmin = std::numeric_limits<double>::infinity();
  for (const cpx& q : sing) {
    if (detail::segment_distance(s.position, to, q) < 1e-13)
      throw SegmentHitsPole("continuation segment passes through a pole");
    dmin = std::min(dmin, std::abs(s.position - q));
  }
  if (std::abs(to - s.position) >= dmin)
    throw StepTooLarge("step not shorter than the distance to the nearest pole");

  HolonomyState out = s;
  out.position = to;
  if (s.chart == Chart::z) {
    for (std::size_t j = 0; j < c.poles.size(); ++j)
      out.logs[j] += std::log((to - c.poles[j]) / (s.position - c.poles[j]));
  } else {
    for (std::size_t j = 0; j < c.poles.size(); ++j)
      out.logs[j] +=
          std::log((1.0 - c.poles[j] * to) / (1.0 - c.poles[j] * s.position));
    if (std::abs(to) < 1e-300 || std::abs(s.position) < 1e-300)
      throw SegmentHitsPole("continuation segment passes through infinity");
    out.logw += std::log(to / s.position);
  }
  return out;
}

// Continued value of K at the state.
inline cpx holonomy_exponent(const HolonomyState& s,
                             const FuchsianConnection& c) {
  cpx K{0.0, 0.0};
  for (std::size_t j = 0; j < c.poles.size(); ++j) K += c.residues[j] * s.logs[j];
  if (s.chart == Chart::w) K += c.rho_infinity() * s.logw + cpx{0.0, kPi};
  return K;
}

// exp(K), the continued value of prod_j (z - p_j)^{rho_j} (times the chart
// transition factor in the w chart). Its modulus equals the metric density
// when the residues are real.
inline cpx holonomy_factor(const HolonomyState& s,
                           const FuchsianConnection& c) {
  return std::exp(holonomy_exponent(s, c));
}

// Re-express the state in the other chart at the same point of the sphere.
// The identities log(z - p_j) = log(1 - p_j w) - log w make the switch exact:
// exp(K) picks up precisely the transition factor -1/w^2.
inline HolonomyState switch_holonomy_chart(const HolonomyState& s) {
  HolonomyState out = s;
  if (std::abs(s.position) < 1e-300)
    throw SegmentHitsPole("chart switch at a chart origin");
  if (s.chart == Chart::z) {
    const cpx w = 1.0 / s.position;
    out.chart = Chart::w;
    out.position = w;
    out.logw = std::log(w);
    for (cpx& l : out.logs) l += out.logw;
  } else {
    out.chart = Chart::z;
    out.position = 1.0 / s.position;
    for (cpx& l : out.logs) l -= s.logw;
    out.logw = cpx{0.0, 0.0};
  }
  return out;
}

// Monodromy generators exp(2 pi i rho_j) for every singular point including
// infinity; loops around the poles generate the first homology of the
// complement, so these generate the whole monodromy image.
inline std::vector<cpx> monodromy_generators(const FuchsianConnection& c) {
  std::vector<cpx> gen;
  gen.reserve(c.residues.size() + 1);
  const cpx two_pi_i{0.0, kTwoPi};
  for (const cpx& r : c.residues) gen.push_back(std::exp(two_pi_i * r));
  if (c.include_infinity) gen.push_back(std::exp(two_pi_i * c.rho_infinity()));
  return gen;
}

// Smallest k <= 64 with k * Re(rho_j) integral at every singular point, i.e.
// the argument part of every generator a k-th root of unity. Imaginary parts
// only scale the moduli and are irrelevant here.
inline std::optional<int> minimal_k(const FuchsianConnection& c,
                                    double tol = 1e-9, int k_max = 64) {
  for (int k = 1; k <= k_max; ++k) {
    bool ok = true;
    for (std::size_t j = 0; j < c.residues.size() && ok; ++j) {
      const double kr = k * c.residues[j].real();
      ok = std::abs(kr - std::round(kr)) <= tol;
    }
    if (ok && c.include_infinity) {
      const double kr = k * c.rho_infinity().real();
      ok = std::abs(kr - std::round(kr)) <= tol;
    }
    if (ok) return k;
  }
  return std::nullopt;
}

// Gluing rule of the k-sheeted cover: crossing the cut of pole j moves the
// sheet index by m_j = round(k Re rho_j), with the sign given by the crossing
// direction (+1 for an upward crossing of the horizontal ray).
inline int sheet_index_update(int sheet, std::size_t pole_index, int direction,
                              const FuchsianConnection& c, int k) {
  if (k < 1) throw KUndefined("sheet bookkeeping requires a defined k");
  const cpx rho = pole_index < c.poles.size() ? c.residues[pole_index]
                                              : c.rho_infinity();
  const int m = static_cast<int>(std::llround(k * rho.real()));
  int s = (sheet + direction * m) % k;
  if (s < 0) s += k;
  return s;
}

// Representative of the direction class of a geodesic: the argument of the
// conserved quantity exp(K) * velocity, reduced mod 2*pi.
struct TrajectoryArgument {
  double theta = 0.0;  // in [0, 2*pi)
  int k = 0;           // group marker; 0 when no finite k exists
};

inline TrajectoryArgument trajectory_argument(const cpx& conserved, int k) {
  return TrajectoryArgument{wrap_angle(std::arg(conserved)), k};
}

// Distance of an angle difference to the grid (2*pi/k) Z.
inline double deviation_from_grid(double delta, int k) {
  if (k < 1) throw KUndefined("angle grid requires a defined k");
  const double cell = kTwoPi / k;
  const double r = std::fmod(std::fmod(delta, cell) + cell, cell);
  return std::min(r, cell - r);
}

inline bool args_equal_mod_group(const TrajectoryArgument& a,
                                 const TrajectoryArgument& b,
                                 double tol = 1e-6) {
  if (a.k != b.k) return false;
  if (a.k < 1) return std::abs(a.theta - b.theta) <= tol ||
                      std::abs(std::abs(a.theta - b.theta) - kTwoPi) <= tol;
  return deviation_from_grid(a.theta - b.theta, a.k) <= tol;
}

}  // namespace geoflow

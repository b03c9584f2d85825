#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace geoflow {

using cpx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// The sphere is covered by exactly two charts: the identity chart z and
// w = 1/z around infinity.
enum class Chart : unsigned char { z, w };

inline const char* chart_name(Chart c) { return c == Chart::z ? "z" : "w"; }

// Chordal distance on the sphere, range [0, 2].
inline double chordal(const cpx& a, const cpx& b) {
  return 2.0 * std::abs(a - b) /
         std::sqrt((1.0 + std::norm(a)) * (1.0 + std::norm(b)));
}

inline double chordal_to_infinity(const cpx& z) {
  return 2.0 / std::sqrt(1.0 + std::norm(z));
}

// Chordal distance between a point given in chart coordinates and a finite
// point p. Written so it stays stable when |w| is tiny.
inline double chordal_from_chart(const cpx& pos, Chart chart, const cpx& p) {
  if (chart == Chart::z) return chordal(pos, p);
  // |1/w - p| / sqrt(1 + |1/w|^2) = |1 - p w| / sqrt(|w|^2 + 1)
  return 2.0 * std::abs(1.0 - p * pos) /
         std::sqrt((std::norm(pos) + 1.0) * (1.0 + std::norm(p)));
}

inline double chordal_from_chart_to_infinity(const cpx& pos, Chart chart) {
  if (chart == Chart::z) return chordal_to_infinity(pos);
  return 2.0 * std::abs(pos) / std::sqrt(1.0 + std::norm(pos));
}

// w = 1/z on the overlap of the two charts.
struct ChartTransition {
  static cpx map(const cpx& x) { return 1.0 / x; }
  // dw/dz = -1/z^2; the same chain rule applies in both directions.
  static cpx velocity(const cpx& x, const cpx& v) { return -v / (x * x); }
};

inline double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a;
}

// Fold an angle difference into [0, pi].
inline double fold_angle(double a) {
  a = wrap_angle(a);
  return a <= kPi ? a : kTwoPi - a;
}

// Signed angle difference in (-pi, pi].
inline double angle_between(const cpx& u, const cpx& v) {
  return std::arg(v * std::conj(u));
}

struct DuplicatePoles : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroResidue : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EvaluationAtPole : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonRealResidues : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResiduesNotInOneOverKZ : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StepTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SegmentHitsPole : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StartAtPole : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct KUndefined : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace geoflow

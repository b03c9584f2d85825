#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "geoflow/connection.hpp"
#include "geoflow/core.hpp"
#include "geoflow/holonomy.hpp"

namespace geoflow {

enum class StopReason : unsigned char {
  PoleReached,
  Escaped,
  BudgetExhausted,
  ClosedDetected,
};

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::PoleReached: return "PoleReached";
    case StopReason::Escaped: return "Escaped";
    case StopReason::BudgetExhausted: return "BudgetExhausted";
    case StopReason::ClosedDetected: return "ClosedDetected";
  }
  return "?";
}

enum class SpeedNormalization : unsigned char { affine, unit_metric_speed };

struct GeodesicSpec {
  cpx start{0.0, 0.0};
  cpx direction{1.0, 0.0};  // unit launch direction
  double speed = 1.0;       // initial speed in the affine parameterization
  SpeedNormalization normalization = SpeedNormalization::affine;
  double max_time = 1e3;
  std::size_t max_samples = 1'000'000;
  double max_arclength = std::numeric_limits<double>::infinity();
  double r_out = 10.0;  // |z| beyond which integration moves to the w chart
  double r_in = 8.0;    // |z| below which it moves back; r_in < r_out
  bool track_sheets = true;
  bool detect_closed = true;
  double h_max = 0.05;   // displacement cap per step
  double rtol = 1e-10;   // embedded error tolerance per step
};

// Crossing of the horizontal branch cut {p_j + t : t > 0}. direction is +1
// when Im(z - p_j) goes from negative to positive.
struct CutCrossing {
  std::uint32_t segment = 0;  // index of the sample starting the segment
  double s = 0.0;             // fraction along the segment
  double t = 0.0;
  std::uint32_t pole = 0;
  int direction = 0;
  int sheet_after = 0;
};

struct Sample {
  double t = 0.0;
  cpx pos{0.0, 0.0};  // chart-local coordinates
  cpx vel{0.0, 0.0};  // chart-local velocity
  Chart chart = Chart::z;
  std::int32_t sheet = 0;
  double arc = 0.0;  // cumulative metric arclength (Euclidean if residues
                     // are not real)
};

struct ClosedMatch {
  std::uint32_t sample_index = 0;  // earlier sample the trajectory returned to
  double period = 0.0;
};

struct Trajectory {
  std::vector<Sample> samples;
  std::vector<cpx> logs_flat;  // per-sample continued logs, logw slot last
  std::size_t log_stride = 1;
  cpx conserved{1.0, 0.0};  // C = exp(K) * velocity, fixed by the launch
  int k = 0;                // sheet modulus; 0 when undefined
  StopReason stop = StopReason::BudgetExhausted;
  int stop_pole = -1;  // global singular index for PoleReached
  double drift_total = 0.0;
  double drift_rate = 0.0;
  std::vector<CutCrossing> cut_crossings;
  std::optional<ClosedMatch> closed;
  std::size_t chart_switches = 0;

  std::span<const cpx> logs_at(std::size_t i) const {
    return {logs_flat.data() + i * log_stride, log_stride};
  }

  static cpx plane_position(const Sample& s) {
    return s.chart == Chart::z ? s.pos : 1.0 / s.pos;
  }

  double duration() const {
    return samples.empty() ? 0.0 : samples.back().t;
  }
};

// Rebuild the holonomy state stored at sample i.
inline HolonomyState state_at(const Trajectory& traj, std::size_t i) {
  HolonomyState s;
  const Sample& smp = traj.samples[i];
  s.chart = smp.chart;
  s.position = smp.pos;
  auto logs = traj.logs_at(i);
  s.logs.assign(logs.begin(), logs.end() - 1);
  s.logw = logs.back();
  return s;
}

// Conserved quantity recomputed from the data stored at sample i.
inline cpx sample_conserved(const Trajectory& traj,
                            const FuchsianConnection& c, std::size_t i) {
  HolonomyState s = state_at(traj, i);
  return holonomy_factor(s, c) * traj.samples[i].vel;
}

struct TrajectoryState {
  HolonomyState holonomy;
  cpx velocity{0.0, 0.0};
};

// Move a position/velocity/holonomy triple to the other chart. The conserved
// quantity exp(K) * velocity is unchanged: K shifts by the continued branch
// of log(-1/w^2) while the velocity picks up the reciprocal factor.
inline TrajectoryState switch_chart(const TrajectoryState& s) {
  TrajectoryState out;
  out.holonomy = switch_holonomy_chart(s.holonomy);
  out.velocity = ChartTransition::velocity(s.holonomy.position, s.velocity);
  return out;
}

namespace detail {

// Dormand-Prince 5(4) tableau.
struct Dp54 {
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
};

// Velocity field of the conserved form: v(y) = C * exp(-K(y)), where K is
// continued from the step base by principal-branch increments. Valid while
// the evaluation point stays within the current step's pole-distance bound.
struct HoloRhs {
  const FuchsianConnection* conn;
  const HolonomyState* base;
  cpx d0;  // C * exp(-K(base))

  cpx operator()(const cpx& y) const {
    cpx dK{0.0, 0.0};
    if (base->chart == Chart::z) {
      for (std::size_t j = 0; j < conn->poles.size(); ++j)
        dK += conn->residues[j] *
              std::log((y - conn->poles[j]) / (base->position - conn->poles[j]));
    } else {
      for (std::size_t j = 0; j < conn->poles.size(); ++j)
        dK += conn->residues[j] * std::log((1.0 - conn->poles[j] * y) /
                                           (1.0 - conn->poles[j] * base->position));
      dK += conn->rho_infinity() * std::log(y / base->position);
    }
    return d0 * std::exp(-dK);
  }
};

struct AttemptResult {
  cpx y5{0.0, 0.0};
  double err = 0.0;
  bool finite = false;
};

inline AttemptResult dp54_attempt(const HoloRhs& f, const cpx& y0, double h) {
  using T = Dp54;
  AttemptResult r;
  const cpx k1 = f(y0);
  const cpx k2 = f(y0 + h * (T::a21 * k1));
  const cpx k3 = f(y0 + h * (T::a31 * k1 + T::a32 * k2));
  const cpx k4 = f(y0 + h * (T::a41 * k1 + T::a42 * k2 + T::a43 * k3));
  const cpx k5 = f(y0 + h * (T::a51 * k1 + T::a52 * k2 + T::a53 * k3 +
                             T::a54 * k4));
  const cpx k6 = f(y0 + h * (T::a61 * k1 + T::a62 * k2 + T::a63 * k3 +
                             T::a64 * k4 + T::a65 * k5));
  r.y5 = y0 + h * (T::b1 * k1 + T::b3 * k3 + T::b4 * k4 + T::b5 * k5 +
                   T::b6 * k6);
  const cpx k7 = f(r.y5);
  const cpx est = h * (T::e1 * k1 + T::e3 * k3 + T::e4 * k4 + T::e5 * k5 +
                       T::e6 * k6 + T::e7 * k7);
  r.err = std::abs(est);
  r.finite = std::isfinite(r.y5.real()) && std::isfinite(r.y5.imag()) &&
             std::isfinite(r.err);
  return r;
}

inline double dist_to_chart_singularities(const FuchsianConnection& c,
                                          const HolonomyState& s) {
  thread_local std::vector<cpx> sing;
  chart_singularities(c, s.chart, sing);
  double d = std::numeric_limits<double>::infinity();
  for (const cpx& q : sing) d = std::min(d, std::abs(s.position - q));
  return d;
}

struct CutHit {
  std::uint32_t pole = 0;
  double s = 0.0;
  int direction = 0;
};

// Crossings of the horizontal rays {p_j + t : t > 0} by the plane segment
// a -> b, ordered along the segment.
inline void detect_cut_crossings(const std::vector<cpx>& poles, const cpx& a,
                                 const cpx& b, std::vector<CutHit>& out) {
  out.clear();
  for (std::uint32_t j = 0; j < poles.size(); ++j) {
    const double ya = a.imag() - poles[j].imag();
    const double yb = b.imag() - poles[j].imag();
    if ((ya < 0.0) == (yb < 0.0)) continue;
    if (ya == yb) continue;
    const double s = ya / (ya - yb);
    const double x = a.real() + s * (b.real() - a.real()) - poles[j].real();
    if (x <= 0.0) continue;
    out.push_back(CutHit{j, s, yb > ya ? +1 : -1});
  }
  std::sort(out.begin(), out.end(),
            [](const CutHit& u, const CutHit& v) { return u.s < v.s; });
}

}  // namespace detail

// Resumable error-controlled integration of the conserved-form equation from
// an explicit state. Used for the main loop's refinement passes and for
// post-hoc evaluation between stored samples.
class Stepper {
 public:
  Stepper(const FuchsianConnection& conn, HolonomyState hs, cpx conserved,
          double t = 0.0)
      : conn_(&conn), hs_(std::move(hs)), c_(conserved), t_(t) {
    v_ = c_ * std::exp(-holonomy_exponent(hs_, *conn_));
  }

  const HolonomyState& holonomy() const { return hs_; }
  const cpx& position() const { return hs_.position; }
  const cpx& velocity() const { return v_; }
  double time() const { return t_; }
  cpx conserved() const { return c_; }

  // Advance exactly dt (dt >= 0). Returns false when the step size collapses,
  // which signals a singular point closer than the requested target.
  bool advance(double dt, double rtol = 1e-12, double h_max_disp = 0.05) {
    double remaining = dt;
    double h = remaining;
    while (remaining > 1e-18 * std::max(1.0, std::abs(t_))) {
      const double d = detail::dist_to_chart_singularities(*conn_, hs_);
      const double cap = std::min(h_max_disp, 0.1 * d);
      const double speed = std::max(std::abs(v_), 1e-300);
      h = std::min({h, cap / speed, remaining});
      if (h < 1e-16 * std::max(1.0, std::abs(t_)) || h < 1e-300) return false;
      detail::HoloRhs rhs{conn_, &hs_,
                          c_ * std::exp(-holonomy_exponent(hs_, *conn_))};
      const auto att = detail::dp54_attempt(rhs, hs_.position, h);
      const double sc = 1e-13 + rtol * std::max(std::abs(hs_.position),
                                                std::abs(att.y5));
      if (!att.finite || att.err > sc ||
          std::abs(att.y5 - hs_.position) > 1.5 * cap) {
        h *= 0.5;
        continue;
      }
      bool moved = false;
      try {
        hs_ = continue_along(*conn_, hs_, att.y5);
        moved = true;
      } catch (const StepTooLarge&) {
      } catch (const SegmentHitsPole&) {
      }
      if (!moved) {
        h *= 0.5;
        continue;
      }
      v_ = c_ * std::exp(-holonomy_exponent(hs_, *conn_));
      t_ += h;
      remaining -= h;
      const double grow =
          att.err > 0.0 ? 0.9 * std::pow(sc / att.err, 0.2) : 5.0;
      h = remaining > 0.0 ? std::min(remaining, h * std::clamp(grow, 0.2, 5.0))
                          : 0.0;
    }
    return true;
  }

 private:
  const FuchsianConnection* conn_;
  HolonomyState hs_;
  cpx c_;
  cpx v_{0.0, 0.0};
  double t_ = 0.0;
};

inline Stepper resume_at(const Trajectory& traj, const FuchsianConnection& c,
                         std::size_t i) {
  return Stepper(c, state_at(traj, i), traj.conserved, traj.samples[i].t);
}

namespace detail {

// Spatial hash over stored samples, one table per chart, used by the
// closed-orbit detector.
class SampleGrid {
 public:
  explicit SampleGrid(double cell) : cell_(cell) {}

  void insert(Chart chart, const cpx& p, std::uint32_t idx) {
    tables_[chart == Chart::z ? 0 : 1][key(p)].push_back(idx);
  }

  void collect_near(Chart chart, const cpx& p,
                    std::vector<std::uint32_t>& out) const {
    const auto& table = tables_[chart == Chart::z ? 0 : 1];
    const long ix = cell_index(p.real());
    const long iy = cell_index(p.imag());
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy) {
        auto it = table.find(pack(ix + dx, iy + dy));
        if (it == table.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
      }
  }

 private:
  long cell_index(double x) const {
    return static_cast<long>(std::floor(x / cell_));
  }
  std::uint64_t key(const cpx& p) const {
    return pack(cell_index(p.real()), cell_index(p.imag()));
  }
  static std::uint64_t pack(long ix, long iy) {
    const std::uint64_t ux = static_cast<std::uint32_t>(ix + 0x40000000L);
    const std::uint64_t uy = static_cast<std::uint32_t>(iy + 0x40000000L);
    return (ux << 32) | uy;
  }

  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> tables_[2];
};

inline double point_segment_distance(const cpx& p, const cpx& a,
                                     const cpx& b) {
  return segment_distance(a, b, p);
}

}  // namespace detail

// Integrate a geodesic. The equation is used in its conserved first-order
// form sigma' = C * exp(-K(sigma)); the constant C is fixed by the launch
// data and exp(K) is continued along the trajectory, so the recomputed
// product exp(K) * velocity measures the accumulated numerical defect.
inline Trajectory integrate(const FuchsianConnection& c,
                            const GeodesicSpec& spec) {
  require_valid(c);
  const std::size_t n_poles = c.poles.size();

  // launch checks
  for (std::size_t j = 0; j < n_poles; ++j)
    if (chordal(spec.start, c.poles[j]) < 1e-6)
      throw StartAtPole("launch point at pole " + std::to_string(j));
  if (c.infinity_is_pole() && chordal_to_infinity(spec.start) < 1e-6)
    throw StartAtPole("launch point at infinity");

  const bool allow_w = c.include_infinity;
  Trajectory traj;
  traj.log_stride = n_poles + 1;

  const std::optional<int> mk = minimal_k(c);
  const int k = (spec.track_sheets && mk) ? *mk : 0;
  traj.k = k;

  HolonomyState hs = init_holonomy(c, spec.start, Chart::z);
  if (allow_w && std::abs(spec.start) > spec.r_out)
    hs = switch_holonomy_chart(hs);

  cpx v0 = spec.direction * spec.speed;
  if (spec.normalization == SpeedNormalization::unit_metric_speed) {
    if (!c.has_real_residues())
      throw NonRealResidues("unit metric speed requires real residues");
    v0 = spec.direction * spec.speed / metric_density(c, spec.start);
  }
  if (hs.chart == Chart::w)
    v0 = ChartTransition::velocity(spec.start, v0);
  const cpx C = holonomy_factor(hs, c) * v0;
  traj.conserved = C;

  cpx v = v0;
  double t = 0.0;
  double arc = 0.0;
  int sheet = 0;
  const bool metric_arc = c.has_real_residues();

  detail::SampleGrid grid(2.0 * spec.h_max);
  std::vector<std::uint32_t> candidates;
  std::vector<detail::CutHit> hits;

  auto push_sample = [&](void) {
    traj.samples.push_back(Sample{t, hs.position, v, hs.chart, sheet, arc});
    traj.logs_flat.insert(traj.logs_flat.end(), hs.logs.begin(),
                          hs.logs.end());
    traj.logs_flat.push_back(hs.chart == Chart::w ? hs.logw : cpx{0.0, 0.0});
    grid.insert(hs.chart, hs.position, traj.samples.size() - 1);
  };
  push_sample();

  auto finish = [&](StopReason r, int pole) {
    traj.stop = r;
    traj.stop_pole = pole;
  };

  // nearest singular point, as a global index
  auto nearest_singular = [&]() {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_poles; ++j) {
      const double d = chordal_from_chart(hs.position, hs.chart, c.poles[j]);
      if (d < bd) { bd = d; best = static_cast<int>(j); }
    }
    if (c.infinity_is_pole()) {
      const double d = chordal_from_chart_to_infinity(hs.position, hs.chart);
      if (d < bd) { bd = d; best = static_cast<int>(c.infinity_index()); }
    }
    return best;
  };

  double h = 1e-3;
  bool done = false;
  while (!done) {
    if (t >= spec.max_time || traj.samples.size() >= spec.max_samples ||
        arc >= spec.max_arclength) {
      finish(StopReason::BudgetExhausted, -1);
      break;
    }

    const double d = detail::dist_to_chart_singularities(c, hs);
    const double cap = std::min(spec.h_max, 0.1 * d);
    const double speed = std::max(std::abs(v), 1e-300);
    h = std::min(h, cap / speed);
    bool clipped = false;
    if (t + h >= spec.max_time) {
      h = spec.max_time - t;
      clipped = true;
    }

    // one accepted step per pass
    detail::AttemptResult att;
    const HolonomyState pre = hs;
    const cpx v_pre = v;
    const double t_pre = t;
    while (true) {
      detail::HoloRhs rhs{&c, &hs, C * std::exp(-holonomy_exponent(hs, c))};
      att = detail::dp54_attempt(rhs, hs.position, h);
      const double sc =
          1e-13 + spec.rtol * std::max(std::abs(hs.position), std::abs(att.y5));
      bool ok = att.finite && att.err <= sc &&
                std::abs(att.y5 - hs.position) <= 1.5 * cap;
      if (ok) {
        try {
          hs = continue_along(c, hs, att.y5);
        } catch (const StepTooLarge&) {
          ok = false;
        } catch (const SegmentHitsPole&) {
          ok = false;
        }
      }
      if (ok) {
        const double grow =
            att.err > 0.0 ? 0.9 * std::pow(sc / att.err, 0.2) : 5.0;
        const double next = h * std::clamp(grow, 0.2, 5.0);
        t += h;
        h = next;
        break;
      }
      clipped = false;
      h *= 0.5;
      if (h < 1e-14) {
        finish(StopReason::PoleReached, nearest_singular());
        done = true;
        break;
      }
    }
    if (done) break;

    // cut crossings along the accepted segment, in plane coordinates
    if (k >= 1 && n_poles > 0) {
      const cpx a = pre.chart == Chart::z ? pre.position : 1.0 / pre.position;
      const cpx b = hs.chart == Chart::z ? hs.position : 1.0 / hs.position;
      detail::detect_cut_crossings(c.poles, a, b, hits);
      for (const auto& hit : hits) {
        sheet = sheet_index_update(sheet, hit.pole, hit.direction, c, k);
        traj.cut_crossings.push_back(
            CutCrossing{static_cast<std::uint32_t>(traj.samples.size() - 1),
                        hit.s, t_pre + hit.s * (t - t_pre), hit.pole,
                        hit.direction, sheet});
      }
    }

    v = C * std::exp(-holonomy_exponent(hs, c));
    const double seg_len = std::abs(hs.position - pre.position);
    if (metric_arc) {
      const cpx mid = 0.5 * (hs.position + pre.position);
      double dens = 1.0;
      if (hs.chart == Chart::z) {
        dens = metric_density(c, mid);
      } else {
        // |q|-type density in the w chart: u(1/w) / |w|^2
        dens = metric_density(c, 1.0 / mid) / std::norm(mid);
      }
      arc += dens * seg_len;
    } else {
      arc += seg_len;
    }

    // closed-orbit detection: coarse gate against earlier samples, then a
    // local minimization of the distance along the true solution
    if (spec.detect_closed && traj.samples.size() >= 8) {
      candidates.clear();
      grid.collect_near(hs.chart, hs.position, candidates);
      const std::uint32_t inew =
          static_cast<std::uint32_t>(traj.samples.size());
      const double fmag =
          std::abs(coefficient_at_or_zero(c, pre.position, pre.chart));
      const double sag = 0.3 * seg_len * seg_len * fmag + 1e-6;
      for (std::uint32_t j : candidates) {
        if (inew - j < 8) continue;
        const Sample& old = traj.samples[j];
        if (old.chart != hs.chart) continue;
        if (arc - old.arc < 1e-3) continue;
        if (std::abs(angle_between(old.vel, v_pre)) > 0.05) continue;
        const double dseg = detail::point_segment_distance(
            old.pos, pre.position, hs.position);
        if (dseg > sag) continue;
        // bracket the closest approach of the solution to old.pos
        auto gval = [&](const cpx& z, const cpx& vv) {
          return (vv * std::conj(z - old.pos)).real();
        };
        double g0 = gval(pre.position, v_pre);
        double g1 = gval(hs.position, v);
        if (!(g0 < 0.0 && g1 > 0.0)) continue;
        double lo = 0.0, hi = t - t_pre;
        cpx zbest = hs.position, vbest = v;
        for (int it = 0; it < 80 && hi - lo > 1e-15 * std::max(1.0, hi);
             ++it) {
          const double mid = 0.5 * (lo + hi);
          Stepper st(c, pre, C, t_pre);
          if (!st.advance(mid)) break;
          if (gval(st.position(), st.velocity()) < 0.0) {
            lo = mid;
          } else {
            hi = mid;
            zbest = st.position();
            vbest = st.velocity();
          }
        }
        if (std::abs(zbest - old.pos) < 1e-7 &&
            std::abs(angle_between(old.vel, vbest)) < 1e-5 &&
            (vbest * std::conj(old.vel)).real() > 0.0) {
          // truncate at the refined return point
          t = t_pre + 0.5 * (lo + hi);
          Stepper st(c, pre, C, t_pre);
          st.advance(0.5 * (lo + hi));
          hs = st.holonomy();
          v = st.velocity();
          push_sample();
          traj.closed = ClosedMatch{j, t - old.t};
          finish(StopReason::ClosedDetected, -1);
          done = true;
          break;
        }
      }
      if (done) break;
    }

    push_sample();

    // pole arrival: chordal proximity with inward radial velocity
    {
      int hit_pole = -1;
      for (std::size_t j = 0; j < n_poles && hit_pole < 0; ++j) {
        if (chordal_from_chart(hs.position, hs.chart, c.poles[j]) >= 1e-6)
          continue;
        cpx q;
        if (hs.chart == Chart::z) {
          q = c.poles[j];
        } else {
          if (std::abs(c.poles[j]) < 1e-300) continue;
          q = 1.0 / c.poles[j];
        }
        if ((v * std::conj(hs.position - q)).real() < 0.0)
          hit_pole = static_cast<int>(j);
      }
      if (hit_pole < 0 && c.infinity_is_pole() && hs.chart == Chart::w &&
          chordal_from_chart_to_infinity(hs.position, hs.chart) < 1e-6 &&
          (v * std::conj(hs.position)).real() < 0.0)
        hit_pole = static_cast<int>(c.infinity_index());
      if (hit_pole >= 0) {
        finish(StopReason::PoleReached, hit_pole);
        break;
      }
    }

    if (!allow_w && std::abs(hs.position) > 1e6) {
      finish(StopReason::Escaped, -1);
      break;
    }

    // chart switch with hysteresis
    if (allow_w) {
      const bool out = hs.chart == Chart::z &&
                       std::abs(hs.position) > spec.r_out;
      const bool back = hs.chart == Chart::w &&
                        std::abs(hs.position) > 1.0 / spec.r_in;
      if (out || back) {
        const cpx pos_old = hs.position;
        hs = switch_holonomy_chart(hs);
        v = ChartTransition::velocity(pos_old, v);
        ++traj.chart_switches;
        push_sample();
      }
    }

    if (clipped && t >= spec.max_time) {
      finish(StopReason::BudgetExhausted, -1);
      break;
    }
  }

  // accumulated defect of the conserved quantity
  double drift = 0.0;
  const double cmag = std::max(std::abs(traj.conserved), 1e-300);
  for (std::size_t i = 0; i < traj.samples.size(); ++i)
    drift = std::max(drift,
                     std::abs(sample_conserved(traj, c, i) - traj.conserved) /
                         cmag);
  traj.drift_total = drift;
  traj.drift_rate = drift / std::max(1.0, traj.duration());
  return traj;
}

// Fan of geodesics from a common point, directions exp(2 pi i j / n) in
// launch order.
inline std::vector<Trajectory> shoot_fan(const FuchsianConnection& c,
                                         const cpx& center, int n_directions,
                                         const GeodesicSpec& spec_template) {
  if (n_directions < 1) throw ConfigError("fan needs at least one direction");
  std::vector<Trajectory> out;
  out.reserve(n_directions);
  for (int j = 0; j < n_directions; ++j) {
    GeodesicSpec spec = spec_template;
    spec.start = center;
    spec.direction = std::polar(1.0, kTwoPi * j / n_directions);
    out.push_back(integrate(c, spec));
  }
  return out;
}

namespace detail {

// Fixed-step classical RK4 on the second-order system (z, v), used as an
// independent cross-check of the conserved-form route in tests.
struct SecondOrderSample {
  double t;
  cpx z;
  cpx v;
};

inline std::vector<SecondOrderSample> integrate_second_order(
    const FuchsianConnection& c, const cpx& z0, const cpx& v0, double t_end,
    double dt) {
  struct State {
    cpx z, v;
  };
  auto deriv = [&](const State& s) {
    return State{s.v, -coefficient_at(c, s.z) * s.v * s.v};
  };
  auto axpy = [](const State& s, double a, const State& d) {
    return State{s.z + a * d.z, s.v + a * d.v};
  };
  std::vector<SecondOrderSample> out;
  State s{z0, v0};
  double t = 0.0;
  out.push_back({t, s.z, s.v});
  while (t < t_end - 1e-15) {
    const double h = std::min(dt, t_end - t);
    const State d1 = deriv(s);
    const State d2 = deriv(axpy(s, 0.5 * h, d1));
    const State d3 = deriv(axpy(s, 0.5 * h, d2));
    const State d4 = deriv(axpy(s, h, d3));
    s.z += h / 6.0 * (d1.z + 2.0 * d2.z + 2.0 * d3.z + d4.z);
    s.v += h / 6.0 * (d1.v + 2.0 * d2.v + 2.0 * d3.v + d4.v);
    t += h;
    out.push_back({t, s.z, s.v});
  }
  return out;
}

}  // namespace detail

}  // namespace geoflow

// Copyright 2026 The mnsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MNSIM__VIOLATION_HPP_
#define MNSIM__VIOLATION_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mnsim/core.hpp"
#include "mnsim/geometry.hpp"

namespace mnsim
{

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Piecewise-linear target speed over arc length. Two knots at the same
/// arc length encode a step. Outside the knot range the end values hold.
class SpeedProfile
{
public:
  struct Knot
  {
    double s;
    double v;
  };

  SpeedProfile() = default;
  explicit SpeedProfile(std::vector<Knot> knots) : knots_(std::move(knots))
  {
    if (knots_.empty()) {
      throw ConfigError("speed profile needs at least one knot");
    }
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (knots_[i].v < 0.0 || !std::isfinite(knots_[i].v)) {
        throw ConfigError("speed profile values must be finite and nonnegative");
      }
      if (i > 0 && knots_[i].s < knots_[i - 1].s) {
        throw ConfigError("speed profile knots must be sorted");
      }
    }
  }

  static SpeedProfile constant(double v) { return SpeedProfile({{0.0, v}}); }

  [[nodiscard]] const std::vector<Knot> & knots() const { return knots_; }

  /// Speed at `s`; at a step the value after the step is used.
  [[nodiscard]] double at(double s) const
  {
    if (s < knots_.front().s) {
      return knots_.front().v;
    }
    for (std::size_t i = knots_.size(); i-- > 0;) {
      if (knots_[i].s <= s) {
        if (i + 1 == knots_.size()) {
          return knots_[i].v;
        }
        const Knot & a = knots_[i];
        const Knot & b = knots_[i + 1];
        if (b.s == a.s) {
          return b.v;
        }
        return a.v + (b.v - a.v) * (s - a.s) / (b.s - a.s);
      }
    }
    return knots_.back().v;
  }

  [[nodiscard]] double max_speed() const
  {
    double m = 0.0;
    for (const auto & k : knots_) {
      m = std::max(m, k.v);
    }
    return m;
  }

  /// Linear pieces covering [s0, s1]: (start, end, v_start, v_end).
  struct Piece
  {
    double a;
    double b;
    double va;
    double vb;
  };

  [[nodiscard]] std::vector<Piece> pieces(double s0, double s1) const
  {
    std::vector<double> cuts{s0};
    for (const auto & k : knots_) {
      if (k.s > s0 && k.s < s1) {
        cuts.push_back(k.s);
      }
    }
    cuts.push_back(s1);
    std::vector<Piece> out;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double a = cuts[i];
      const double b = cuts[i + 1];
      if (b <= a) {
        continue;
      }
      out.push_back({a, b, value_right_of(a), value_left_of(b)});
    }
    return out;
  }

private:
  [[nodiscard]] double value_right_of(double s) const { return at(s); }

  [[nodiscard]] double value_left_of(double s) const
  {
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
      const Knot & a = knots_[i];
      const Knot & b = knots_[i + 1];
      if (a.s < s && s <= b.s) {
        return a.v + (b.v - a.v) * (s - a.s) / (b.s - a.s);
      }
    }
    return at(s);
  }

  std::vector<Knot> knots_{{0.0, 0.0}};
};

struct SpeedModelConfig
{
  double cruise{10.0};
  double turn_speed{5.0};
  double turn_ramp{15.0};
  double exit_ramp{20.0};
  double stop_decel{2.5};
  double stop_offset{1.0};
  double accel{3.0};
  double brake{6.0};
  double emergency_brake{8.0};
};

/// Go-mode profiles for every turn plus the stop-mode parameters.
class SpeedModels
{
public:
  SpeedModels(const IntersectionMap & map, SpeedModelConfig cfg = {}) : cfg_(cfg)
  {
    const double entry = map.entry_s();
    for (Turn t : kAllTurns) {
      if (t == Turn::straight) {
        go_[index_of(t)] = SpeedProfile::constant(cfg.cruise);
      } else {
        const double exit = map.exit_s(PathId{Approach::south, t});
        go_[index_of(t)] = SpeedProfile({
          {entry - cfg.turn_ramp, cfg.cruise},
          {entry, cfg.turn_speed},
          {exit, cfg.turn_speed},
          {exit + cfg.exit_ramp, cfg.cruise},
        });
      }
    }
    stop_line_ = entry - cfg.stop_offset;
  }

  [[nodiscard]] const SpeedModelConfig & config() const { return cfg_; }
  [[nodiscard]] const SpeedProfile & go(Turn t) const { return go_[index_of(t)]; }
  [[nodiscard]] double stop_line() const { return stop_line_; }

  /// Target speed of the stop model: decelerate to rest at the stop line;
  /// beyond the line the vehicle is committed and follows the go profile.
  [[nodiscard]] double stop_target(Turn t, double s) const
  {
    const double go_v = go(t).at(s);
    if (s > stop_line_) {
      return go_v;
    }
    return std::min(go_v, std::sqrt(2.0 * cfg_.stop_decel * (stop_line_ - s)));
  }

private:
  SpeedModelConfig cfg_;
  std::array<SpeedProfile, 3> go_{};
  double stop_line_{0.0};
};

/// Travel time from (s0, v0) to s1 when speed follows `profile` but can only
/// rise at `accel`; decreases are followed immediately. Returns +inf when the
/// target is unreachable (zero speed on the way).
inline double travel_time(
  const SpeedProfile & profile, double s0, double v0, double s1, double accel)
{
  if (s1 <= s0) {
    return 0.0;
  }
  double t = 0.0;
  double v = std::max(0.0, v0);
  for (const auto & pc : profile.pieces(s0, s1)) {
    const double len = pc.b - pc.a;
    const double k = (pc.vb - pc.va) / len;
    auto model = [&](double s) { return pc.va + k * (s - pc.a); };
    v = std::min(v, pc.va);
    if (v + 1e-12 >= pc.va) {
      // Riding the profile for the whole piece.
      if (pc.va <= 0.0 || pc.vb <= 0.0) {
        return kInf;
      }
      if (std::abs(k) < 1e-12) {
        t += len / pc.va;
      } else {
        t += std::log(pc.vb / pc.va) / k;
      }
      v = pc.vb;
      continue;
    }
    if (accel <= 0.0 && v <= 0.0) {
      return kInf;
    }
    // Ramp up from v until the profile is met.
    auto ramp = [&](double s) { return std::sqrt(v * v + 2.0 * accel * (s - pc.a)); };
    if (ramp(pc.b) <= model(pc.b)) {
      const double vb = ramp(pc.b);
      t += accel > 0.0 ? (vb - v) / accel : len / v;
      v = vb;
      continue;
    }
    double lo = pc.a;
    double hi = pc.b;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (ramp(mid) < model(mid)) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double sc = hi;
    const double vc = model(sc);
    t += (vc - v) / accel;
    if (sc < pc.b) {
      if (vc <= 0.0 || pc.vb <= 0.0) {
        return kInf;
      }
      if (std::abs(k) < 1e-12) {
        t += (pc.b - sc) / vc;
      } else {
        t += std::log(pc.vb / vc) / k;
      }
    }
    v = pc.vb;
  }
  return t;
}

/// Absolute time at which the front reaches the entry line under the go model.
inline double time_to_intersection(
  const AgentState & st, const SpeedModels & models, const IntersectionMap & map, Turn turn)
{
  if (st.s >= map.entry_s()) {
    return st.ta;
  }
  return st.ta + travel_time(models.go(turn), st.s, st.v, map.entry_s(), models.config().accel);
}

/// Absolute time at which the rear clears the exit line under the go model.
inline double time_to_exit(
  const AgentState & st, const SpeedModels & models, const IntersectionMap & map, Turn turn)
{
  const double target = map.cleared_s(PathId{st.path.approach, turn});
  if (st.s >= target) {
    return st.ta;
  }
  return st.ta + travel_time(models.go(turn), st.s, st.v, target, models.config().accel);
}

struct OccupationInterval
{
  double tti{0.0};
  double tte{0.0};
  double tti_w{0.0};
  double tte_w{0.0};
};

/// Widen [tti, tte] proportionally to lead time.
inline OccupationInterval widen(double tti, double tte, double now, double sigma)
{
  OccupationInterval o{tti, tte, tti, tte};
  o.tti_w = tti - sigma * (tti - now);
  o.tte_w = tte + sigma * (tte - now);
  return o;
}

/// Occupation intervals for the given turn, or for every turn when unknown.
/// An agent whose body already cleared the exit occupies nothing.
inline std::vector<OccupationInterval> occupation_intervals(
  const AgentState & st, double now, std::optional<Turn> turn, double sigma,
  const SpeedModels & models, const IntersectionMap & map)
{
  std::vector<OccupationInterval> out;
  auto one = [&](Turn t) {
    if (st.s >= map.cleared_s(PathId{st.path.approach, t})) {
      return;
    }
    const double tti = std::max(now, time_to_intersection(st, models, map, t));
    const double tte = std::max(tti, time_to_exit(st, models, map, t));
    out.push_back(widen(tti, tte, now, sigma));
  };
  if (turn) {
    one(*turn);
  } else {
    for (Turn t : kAllTurns) {
      one(t);
    }
  }
  return out;
}

/// Closed-interval overlap of two widened occupation intervals.
inline bool intervals_overlap(const OccupationInterval & a, const OccupationInterval & b)
{
  return a.tti_w <= b.tte_w && b.tti_w <= a.tte_w;
}

inline bool no_priority_violation_dynamic(
  const std::vector<OccupationInterval> & self, const std::vector<OccupationInterval> & requester)
{
  for (const auto & a : self) {
    for (const auto & b : requester) {
      if (intervals_overlap(a, b)) {
        return false;
      }
    }
  }
  return true;
}

/// True when no overlap is predicted between `self` on its own path and the
/// requester on `requester_turn` (all turns when absent). Paths that never
/// meet cannot violate priority.
inline bool no_priority_violation_dynamic(
  const Agent & self, const Agent & requester, double now, std::optional<Turn> requester_turn,
  double sigma, const SpeedModels & models, const IntersectionMap & map)
{
  bool any_conflict = false;
  for (Turn t : kAllTurns) {
    if (requester_turn && *requester_turn != t) {
      continue;
    }
    any_conflict = any_conflict ||
                   map.conflicts(self.as.path, PathId{requester.as.path.approach, t});
  }
  if (!any_conflict) {
    return true;
  }
  const auto mine = occupation_intervals(self.as, now, self.as.path.turn, sigma, models, map);
  const auto theirs = occupation_intervals(requester.as, now, requester_turn, sigma, models, map);
  return no_priority_violation_dynamic(mine, theirs);
}

struct OccupancyArea
{
  double x_lo{0.0};
  double x_hi{0.0};
  double v_lo{0.0};
  double v_hi{0.0};
};

struct StaticViolationConfig
{
  double dt{0.1};
  double a_min{-8.0};
  double a_max{3.0};
  double v_max{15.0};
  int max_iterations{100000};

  void validate() const
  {
    if (!(dt > 0.0) || !(a_min < 0.0) || !(a_max > 0.0) || !(v_max > 0.0)) {
      throw ConfigError("static predicate needs dt > 0 and a_min < 0 < a_max");
    }
  }
};

/// One prediction step of the reachable arc-length interval.
inline OccupancyArea occupancy_step(const OccupancyArea & o, double dt, const StaticViolationConfig & cfg)
{
  OccupancyArea n = o;
  n.x_lo = o.x_lo + std::max(0.0, o.v_lo * dt + 0.5 * cfg.a_min * dt * dt);
  n.v_lo = std::max(0.0, o.v_lo + cfg.a_min * dt);
  const double vh = std::min(o.v_hi, cfg.v_max);
  if (vh + cfg.a_max * dt <= cfg.v_max) {
    n.x_hi = o.x_hi + vh * dt + 0.5 * cfg.a_max * dt * dt;
    n.v_hi = vh + cfg.a_max * dt;
  } else {
    const double tau = (cfg.v_max - vh) / cfg.a_max;
    n.x_hi = o.x_hi + vh * tau + 0.5 * cfg.a_max * tau * tau + cfg.v_max * (dt - tau);
    n.v_hi = cfg.v_max;
  }
  n.x_lo = std::min(n.x_lo, n.x_hi);
  return n;
}

/// Guaranteed beyond `exit_front_s` (front position at which the body is clear).
inline bool has_left_intersection(const OccupancyArea & o, double exit_front_s)
{
  return o.x_lo > exit_front_s;
}

inline OccupancyArea occupancy_from(const AgentState & st)
{
  return {st.s, st.s, st.v, st.v};
}

/// Advance an area by `span` seconds in `dt` steps (last step shortened).
inline OccupancyArea occupancy_advance(OccupancyArea o, double span, const StaticViolationConfig & cfg)
{
  while (span > 1e-12) {
    const double h = std::min(cfg.dt, span);
    o = occupancy_step(o, h, cfg);
    span -= h;
  }
  return o;
}

/// Occupancy-prediction predicate between agent i on path `pi` and agent j on
/// path `pj`, both projected to `t0` and stepped until either is guaranteed out
/// or `horizon_end` is reached. False when both may sit in the shared zone
/// during the same slice.
inline bool no_priority_violation_static(
  const AgentState & si, const PathId & pi, const AgentState & sj, const PathId & pj, double t0,
  double horizon_end, const StaticViolationConfig & cfg, const IntersectionMap & map)
{
  cfg.validate();
  const auto zi = map.conflict_zone(pi, pj);
  const auto zj = map.conflict_zone(pj, pi);
  if (!zi || !zj) {
    return true;
  }
  const double len = map.vehicle_length();
  const double out_i = zi->hi + len;
  const double out_j = zj->hi + len;
  OccupancyArea oi = occupancy_advance(occupancy_from(si), std::max(0.0, t0 - si.ta), cfg);
  OccupancyArea oj = occupancy_advance(occupancy_from(sj), std::max(0.0, t0 - sj.ta), cfg);
  auto touches = [len](double lo, double hi, const ConflictZone & z) {
    return lo - len <= z.hi && hi >= z.lo;
  };
  double t = t0;
  int k = 0;
  while (t < horizon_end - 1e-12) {
    if (has_left_intersection(oi, out_i) || has_left_intersection(oj, out_j)) {
      return true;
    }
    if (++k > cfg.max_iterations) {
      throw ConfigError("static predicate exceeded its iteration cap");
    }
    const double h = std::min(cfg.dt, horizon_end - t);
    const OccupancyArea ni = occupancy_step(oi, h, cfg);
    const OccupancyArea nj = occupancy_step(oj, h, cfg);
    if (touches(oi.x_lo, ni.x_hi, *zi) && touches(oj.x_lo, nj.x_hi, *zj)) {
      return false;
    }
    oi = ni;
    oj = nj;
    t += h;
  }
  return true;
}

}  // namespace mnsim

#endif  // MNSIM__VIOLATION_HPP_

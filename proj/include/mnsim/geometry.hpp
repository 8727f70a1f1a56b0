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

#ifndef MNSIM__GEOMETRY_HPP_
#define MNSIM__GEOMETRY_HPP_

#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include "mnsim/core.hpp"

namespace mnsim
{

struct MapConfig
{
  double approach_length{200.0};
  double box_half{8.0};
  double lane_offset{2.5};
  double vehicle_length{4.0};
  double vehicle_width{2.0};
  double zone_sample_step{0.1};
};

struct ConflictZone
{
  double lo{0.0};
  double hi{0.0};
};

/// Four-way intersection with one inbound and one outbound lane per arm.
/// Every path is approach straight + inner part (line or quarter circle)
/// + outbound straight. Arc length 0 is the far end of the approach, so the
/// entry line sits at `approach_length` on every path.
class IntersectionMap
{
public:
  explicit IntersectionMap(MapConfig cfg = {}) : cfg_(cfg)
  {
    if (cfg_.lane_offset <= 0.0 || cfg_.box_half <= cfg_.lane_offset) {
      throw ConfigError("box must be wider than the lane offset");
    }
    for (Approach a : kAllApproaches) {
      for (Turn t : kAllTurns) {
        compute_zones_for(PathId{a, t});
      }
    }
  }

  [[nodiscard]] const MapConfig & config() const { return cfg_; }
  [[nodiscard]] double entry_s() const { return cfg_.approach_length; }
  [[nodiscard]] double vehicle_length() const { return cfg_.vehicle_length; }

  /// Distance from arc length `s` on an approach to the middle of the box.
  [[nodiscard]] double distance_to_center(double s) const
  {
    return entry_s() + cfg_.box_half - s;
  }
  [[nodiscard]] double s_at_distance(double d) const { return entry_s() + cfg_.box_half - d; }

  [[nodiscard]] double inner_length(Turn t) const
  {
    switch (t) {
      case Turn::straight:
        return 2.0 * cfg_.box_half;
      case Turn::left:
        return 0.5 * std::numbers::pi * (cfg_.box_half + cfg_.lane_offset);
      case Turn::right:
        return 0.5 * std::numbers::pi * (cfg_.box_half - cfg_.lane_offset);
    }
    return 0.0;
  }

  [[nodiscard]] double exit_s(const PathId & p) const { return entry_s() + inner_length(p.turn); }
  [[nodiscard]] double path_length(const PathId & p) const
  {
    return exit_s(p) + cfg_.approach_length;
  }

  /// Front position to have the whole body beyond the exit line.
  [[nodiscard]] double cleared_s(const PathId & p) const
  {
    return exit_s(p) + cfg_.vehicle_length;
  }

  [[nodiscard]] Vec2 point(const PathId & p, double s) const
  {
    const auto [lx, ly, lh] = local_pose(p.turn, s);
    (void)lh;
    return rotate(p.approach, lx, ly);
  }

  [[nodiscard]] double heading(const PathId & p, double s) const
  {
    const auto [lx, ly, lh] = local_pose(p.turn, s);
    (void)lx;
    (void)ly;
    return wrap_angle(lh + rotation_angle(p.approach));
  }

  /// Arc-length interval on `self` where its swept band meets the band of `other`.
  [[nodiscard]] std::optional<ConflictZone> conflict_zone(
    const PathId & self, const PathId & other) const
  {
    return zones_[flat(self)][flat(other)];
  }

  [[nodiscard]] bool conflicts(const PathId & a, const PathId & b) const
  {
    return conflict_zone(a, b).has_value();
  }

  /// Strict static priority of `a` over `b` on conflicting paths: the
  /// north-south road dominates, then a non-left turn beats a left turn,
  /// then the lower approach index.
  [[nodiscard]] bool has_priority(const PathId & a, const PathId & b) const
  {
    if (!conflicts(a, b)) {
      return false;
    }
    const bool major_a = is_major(a.approach);
    const bool major_b = is_major(b.approach);
    if (major_a != major_b) {
      return major_a;
    }
    const bool left_a = a.turn == Turn::left;
    const bool left_b = b.turn == Turn::left;
    if (left_a != left_b) {
      return !left_a;
    }
    return index_of(a.approach) < index_of(b.approach);
  }

  static bool is_major(Approach a) { return a == Approach::north || a == Approach::south; }

  static double wrap_angle(double a)
  {
    while (a > std::numbers::pi) {
      a -= 2.0 * std::numbers::pi;
    }
    while (a <= -std::numbers::pi) {
      a += 2.0 * std::numbers::pi;
    }
    return a;
  }

  /// Fill in the derived 2-D point and heading of a state.
  [[nodiscard]] AgentState with_pose(AgentState st) const
  {
    st.p = point(st.path, st.s);
    st.heading = heading(st.path, st.s);
    return st;
  }

private:
  struct Pose
  {
    double x;
    double y;
    double h;
  };

  static std::size_t flat(const PathId & p) { return index_of(p.approach) * 3 + index_of(p.turn); }

  // Local frame: vehicle arrives from the south heading north (+y) in lane x = +offset.
  [[nodiscard]] Pose local_pose(Turn t, double s) const
  {
    const double off = cfg_.lane_offset;
    const double b = cfg_.box_half;
    const double a = cfg_.approach_length;
    const double half_pi = 0.5 * std::numbers::pi;
    if (s <= a) {
      return {off, -b - (a - s), half_pi};
    }
    const double inner = inner_length(t);
    const double u = s - a;
    if (t == Turn::straight) {
      return {off, -b + u, half_pi};
    }
    if (t == Turn::left) {
      const double r = b + off;
      if (u <= inner) {
        const double th = u / r;
        return {-b + r * std::cos(th), -b + r * std::sin(th), th + half_pi};
      }
      return {-b - (u - inner), off, std::numbers::pi};
    }
    const double r = b - off;
    if (u <= inner) {
      const double th = std::numbers::pi - u / r;
      return {b + r * std::cos(th), -b + r * std::sin(th), th - half_pi};
    }
    return {b + (u - inner), -off, 0.0};
  }

  static double rotation_angle(Approach a)
  {
    switch (a) {
      case Approach::south:
        return 0.0;
      case Approach::east:
        return 0.5 * std::numbers::pi;
      case Approach::north:
        return std::numbers::pi;
      case Approach::west:
        return -0.5 * std::numbers::pi;
    }
    return 0.0;
  }

  static Vec2 rotate(Approach a, double x, double y)
  {
    switch (a) {
      case Approach::south:
        return {x, y};
      case Approach::east:
        return {-y, x};
      case Approach::north:
        return {-x, -y};
      case Approach::west:
        return {y, -x};
    }
    return {x, y};
  }

  void compute_zones_for(const PathId & self)
  {
    const double step = cfg_.zone_sample_step;
    const double lo_s = entry_s() - 2.0 * cfg_.vehicle_width;
    const double threshold = cfg_.vehicle_width;
    for (Approach oa : kAllApproaches) {
      if (oa == self.approach) {
        continue;
      }
      for (Turn ot : kAllTurns) {
        const PathId other{oa, ot};
        const double hi_self = exit_s(self) + cfg_.vehicle_length;
        const double hi_other = exit_s(other) + cfg_.vehicle_length;
        std::optional<ConflictZone> zone;
        for (double s = lo_s; s <= hi_self; s += step) {
          const Vec2 ps = point(self, s);
          bool hit = false;
          for (double q = lo_s; q <= hi_other && !hit; q += step) {
            hit = distance(ps, point(other, q)) < threshold;
          }
          if (hit) {
            if (!zone) {
              zone = ConflictZone{s, s};
            }
            zone->hi = s;
          }
        }
        zones_[flat(self)][flat(other)] = zone;
      }
    }
  }

  MapConfig cfg_;
  std::array<std::array<std::optional<ConflictZone>, 12>, 12> zones_{};
};

}  // namespace mnsim

#endif  // MNSIM__GEOMETRY_HPP_

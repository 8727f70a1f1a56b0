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

#ifndef MNSIM__WORLD_HPP_
#define MNSIM__WORLD_HPP_

#include <algorithm>
#include <optional>
#include <string_view>

#include "mnsim/core.hpp"
#include "mnsim/geometry.hpp"
#include "mnsim/violation.hpp"

namespace mnsim
{

enum class Intent : std::uint8_t { go, stop };
enum class DirectiveSource : std::uint8_t { eb, mn, hmm, rules };

inline std::string_view to_string(Intent i) { return i == Intent::go ? "go" : "stop"; }

inline std::string_view to_string(DirectiveSource s)
{
  switch (s) {
    case DirectiveSource::eb:
      return "EB";
    case DirectiveSource::mn:
      return "MN";
    case DirectiveSource::hmm:
      return "HMM";
    case DirectiveSource::rules:
      return "rules";
  }
  return "?";
}

struct IntentionDirective
{
  DirectiveSource source{DirectiveSource::rules};
  Intent value{Intent::go};

  friend bool operator==(const IntentionDirective &, const IntentionDirective &) = default;
};

inline IntentionDirective arbitrate_intention(
  bool eb, std::optional<Intent> mn, std::optional<Intent> hmm, Intent rules)
{
  if (eb) {
    return {DirectiveSource::eb, Intent::stop};
  }
  if (mn) {
    return {DirectiveSource::mn, *mn};
  }
  if (hmm) {
    return {DirectiveSource::hmm, *hmm};
  }
  return {DirectiveSource::rules, rules};
}

/// Advance one vehicle along its path. Speed tracks the model for the
/// directive within the acceleration bounds; an emergency stop brakes harder.
inline AgentState step_vehicle(
  const AgentState & st, const IntentionDirective & d, double dt, const SpeedModels & models,
  const IntersectionMap & map)
{
  if (!(dt > 0.0)) {
    throw ConfigError("step_vehicle needs dt > 0");
  }
  const auto & cfg = models.config();
  const Turn turn = st.path.turn;
  const bool stopping = d.value == Intent::stop;
  const bool eb = d.source == DirectiveSource::eb;
  double target = stopping ? models.stop_target(turn, st.s) : models.go(turn).at(st.s);
  if (eb && stopping) {
    target = 0.0;
  }
  const double brake = eb ? cfg.emergency_brake : cfg.brake;
  double v = std::clamp(target, st.v - brake * dt, st.v + cfg.accel * dt);
  v = std::max(0.0, v);
  const double line = models.stop_line();
  if (stopping && st.s <= line) {
    // end speed from which the stop model can still halt on the line
    const double bd = cfg.stop_decel * dt;
    const double disc = bd * bd - 4.0 * (bd * st.v - 2.0 * cfg.stop_decel * (line - st.s));
    const double cap = disc > 0.0 ? std::max(0.0, 0.5 * (std::sqrt(disc) - bd)) : 0.0;
    v = std::max(std::min(v, cap), std::max(0.0, st.v - brake * dt));
  }
  double s = st.s + 0.5 * (st.v + v) * dt;
  if (stopping && st.s <= line && s >= line - 0.01 && st.v <= brake * dt) {
    s = line;
    v = 0.0;
  }
  AgentState n = st;
  n.ta = st.ta + dt;
  n.s = std::min(s, map.path_length(st.path));
  n.a = (v - st.v) / dt;
  n.v = v;
  return map.with_pose(n);
}

/// Both bodies overlap their parts of the shared zone at the same time.
inline bool detect_collision(const AgentState & a, const AgentState & b, const IntersectionMap & map)
{
  const auto za = map.conflict_zone(a.path, b.path);
  const auto zb = map.conflict_zone(b.path, a.path);
  if (!za || !zb) {
    return false;
  }
  const double len = map.vehicle_length();
  auto inside = [len](double front, const ConflictZone & z) {
    return front > z.lo && front - len < z.hi;
  };
  return inside(a.s, *za) && inside(b.s, *zb);
}

inline constexpr double kDangerDistance = 4.0;

/// Fronts closer than the danger distance; a collision always counts.
inline bool detect_danger(const AgentState & a, const AgentState & b, const IntersectionMap & map)
{
  return distance(a.p, b.p) < kDangerDistance || detect_collision(a, b, map);
}

}  // namespace mnsim

#endif  // MNSIM__WORLD_HPP_

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

#ifndef MNSIM__MEMBERSHIP_HPP_
#define MNSIM__MEMBERSHIP_HPP_

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "mnsim/core.hpp"
#include "mnsim/geometry.hpp"
#include "mnsim/violation.hpp"

namespace mnsim
{

struct Segment
{
  double xs{0.0};
  double xe{0.0};
};

struct MembershipConfig
{
  double d_max{200.0};
  std::size_t n_max{16};
  double communication_range{200.0};
  double v_max{15.0};

  void validate() const
  {
    if (!(d_max > 0.0) || n_max == 0 || !(communication_range > 0.0) || !(v_max > 0.0)) {
      throw ConfigError("membership parameters must be positive");
    }
  }
};

inline std::vector<Turn> get_possible_turns(const Agent & ar)
{
  if (ar.intent_known) {
    return {ar.as.path.turn};
  }
  return {kAllTurns.begin(), kAllTurns.end()};
}

inline bool is_fresh(const Membership & m, double now, const TimingConfig & timing)
{
  return now < m.tm + 2.0 * timing.T_M;
}

/// Agents that may come within communication range of `ar` before
/// `horizon_end`, assuming both close in at `v_max` from their last known spot.
inline std::set<AgentId> get_reachable_agents(
  const Agent & ar, double horizon_end, const std::vector<Agent> & registry,
  const MembershipConfig & cfg)
{
  std::set<AgentId> out;
  for (const auto & other : registry) {
    if (other.id == ar.id) {
      continue;
    }
    const double since = std::min(ar.as.ta, other.as.ta);
    const double span = std::max(0.0, horizon_end - since);
    const double closest = distance(ar.as.p, other.as.p) - 2.0 * cfg.v_max * span;
    if (closest <= cfg.communication_range) {
      out.insert(other.id);
    }
  }
  return out;
}

/// Per-turn sets of strictly higher-priority agents that could co-occupy the
/// shared zone with `ar` before `horizon_end`.
inline std::vector<std::set<AgentId>> get_unsafe_agents(
  const Agent & ar, const std::vector<Turn> & turns, double now, double horizon_end,
  const std::vector<Agent> & registry, const StaticViolationConfig & scfg,
  const IntersectionMap & map)
{
  std::vector<std::set<AgentId>> out(turns.size());
  for (std::size_t k = 0; k < turns.size(); ++k) {
    const PathId mine{ar.as.path.approach, turns[k]};
    for (const auto & other : registry) {
      if (other.id == ar.id) {
        continue;
      }
      for (Turn ot : get_possible_turns(other)) {
        const PathId theirs{other.as.path.approach, ot};
        if (!map.has_priority(theirs, mine)) {
          continue;
        }
        if (!no_priority_violation_static(ar.as, mine, other.as, theirs, now, horizon_end, scfg, map)) {
          out[k].insert(other.id);
          break;
        }
      }
    }
  }
  return out;
}

/// One round of the membership service over a registry snapshot.
inline std::map<AgentId, MembershipSet> membership_round(
  const std::vector<Agent> & registry, const Segment & seg, const MembershipConfig & cfg,
  const TimingConfig & timing, double now, const StaticViolationConfig & scfg,
  const IntersectionMap & map)
{
  cfg.validate();
  std::map<AgentId, MembershipSet> result;
  const double horizon_end = now + timing.membership_horizon();
  std::map<AgentId, const Agent *> by_id;
  for (const auto & a : registry) {
    by_id[a.id] = &a;
  }
  for (const auto & ar : registry) {
    if (!(ar.as.s > seg.xs && ar.as.s < seg.xe)) {
      continue;
    }
    const auto turns = get_possible_turns(ar);
    const auto unsafe = get_unsafe_agents(ar, turns, now, horizon_end, registry, scfg, map);
    const auto reachable = get_reachable_agents(ar, horizon_end, registry, cfg);
    double tm = ar.as.ta;
    for (const auto & u : unsafe) {
      for (AgentId id : u) {
        tm = std::min(tm, by_id.at(id)->as.ta);
      }
    }
    MembershipSet mr{};
    for (std::size_t k = 0; k < turns.size(); ++k) {
      const auto & u = unsafe[k];
      bool ok = u.size() <= cfg.n_max;
      for (AgentId id : u) {
        ok = ok && reachable.count(id) > 0 &&
             distance(ar.as.p, by_id.at(id)->as.p) <= cfg.d_max;
      }
      mr[index_of(turns[k])] = ok ? Membership{tm, true, u} : Membership{tm, false, {}};
    }
    result[ar.id] = mr;
  }
  return result;
}

}  // namespace mnsim

#endif  // MNSIM__MEMBERSHIP_HPP_

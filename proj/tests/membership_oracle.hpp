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


// Brute-force reachability over enumerated acceleration profiles, used to
// judge membership completeness.

#ifndef MNSIM_TESTS__MEMBERSHIP_ORACLE_HPP_
#define MNSIM_TESTS__MEMBERSHIP_ORACLE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "mnsim/membership.hpp"

namespace mnsim::testing
{

struct OracleGrid
{
  int slices{8};
  double sample{kTick};
};

/// For each sample instant in [from, to], whether some profile of piecewise
/// constant accelerations in {a_min, 0, a_max} puts the body inside `z`.
inline std::vector<bool> zone_reach(
  const AgentState & st, const ConflictZone & z, double from, double to,
  const StaticViolationConfig & k, double len, const OracleGrid & g = {})
{
  const int n = int(std::ceil((to - st.ta) / g.sample - 1e-9));
  const int per_slice = std::max(1, (n + g.slices - 1) / g.slices);
  std::vector<bool> hit(std::size_t(n) + 1, false);
  const std::array<double, 3> acc{k.a_min, 0.0, k.a_max};
  int combos = 1;
  for (int i = 0; i < g.slices; ++i) {
    combos *= 3;
  }
  for (int code = 0; code < combos; ++code) {
    double s = st.s;
    double v = st.v;
    int c = code;
    double a = acc[std::size_t(c % 3)];
    for (int i = 0; i <= n; ++i) {
      const double t = st.ta + i * g.sample;
      if (t >= from - 1e-9 && s > z.lo && s - len < z.hi) {
        hit[std::size_t(i)] = true;
      }
      if (i > 0 && i % per_slice == 0) {
        c /= 3;
        a = acc[std::size_t(c % 3)];
      }
      const double nv = std::clamp(v + a * g.sample, 0.0, k.v_max);
      s += 0.5 * (v + nv) * g.sample;
      v = nv;
    }
  }
  return hit;
}

/// Agents that some pair of profiles brings into the shared zone together
/// with `ego` on `turn` before `to`, restricted to higher static priority.
inline std::set<AgentId> oracle_violators(
  const Agent & ego, Turn turn, const std::vector<Agent> & scene, double now, double to,
  const StaticViolationConfig & k, const IntersectionMap & map)
{
  std::set<AgentId> out;
  const PathId mine{ego.as.path.approach, turn};
  for (const auto & other : scene) {
    if (other.id == ego.id) {
      continue;
    }
    for (Turn ot : get_possible_turns(other)) {
      const PathId theirs{other.as.path.approach, ot};
      if (!map.has_priority(theirs, mine)) {
        continue;
      }
      const auto za = map.conflict_zone(mine, theirs);
      const auto zb = map.conflict_zone(theirs, mine);
      // Sample both on a common clock anchored at `now`.
      AgentState a = ego.as;
      AgentState b = other.as;
      const double t0 = std::min(a.ta, b.ta);
      a.ta = t0;
      b.ta = t0;
      const auto ha = zone_reach(a, *za, now, to, k, map.vehicle_length());
      const auto hb = zone_reach(b, *zb, now, to, k, map.vehicle_length());
      bool both = false;
      for (std::size_t i = 0; i < std::min(ha.size(), hb.size()) && !both; ++i) {
        both = ha[i] && hb[i];
      }
      if (both) {
        out.insert(other.id);
        break;
      }
    }
  }
  return out;
}

inline std::vector<Agent> random_scene(std::mt19937_64 & rng, const IntersectionMap & map, double now)
{
  std::uniform_int_distribution<int> count(2, 4);
  std::uniform_int_distribution<int> approach(0, 3);
  std::uniform_int_distribution<int> turn(0, 2);
  std::uniform_real_distribution<double> dist(1.0, 45.0);
  std::uniform_real_distribution<double> speed(0.0, 12.0);
  std::bernoulli_distribution known(0.7);
  std::vector<Agent> scene;
  const int n = count(rng);
  std::array<bool, 4> used{};
  for (int i = 0; i < n; ++i) {
    int a = approach(rng);
    while (used[std::size_t(a)]) {
      a = (a + 1) % 4;
    }
    used[std::size_t(a)] = true;
    Agent ag;
    ag.id = AgentId(i + 1);
    ag.intent_known = known(rng);
    ag.as.ta = now;
    ag.as.path = PathId{kAllApproaches[std::size_t(a)], kAllTurns[std::size_t(turn(rng))]};
    ag.as.s = map.entry_s() - dist(rng);
    ag.as.v = speed(rng);
    ag.as = map.with_pose(ag.as);
    scene.push_back(ag);
  }
  return scene;
}

struct MembershipRecall
{
  int scenes{0};
  int flagged{0};
  int covered{0};
  int invalid{0};
};

/// Compare every fresh, valid membership of random scenes with the oracle.
inline MembershipRecall membership_recall(int scenes, std::uint64_t seed)
{
  const IntersectionMap map;
  const TimingConfig timing;
  const MembershipConfig mcfg;
  const StaticViolationConfig scfg;
  std::mt19937_64 rng(seed);
  MembershipRecall out;
  const double now = 10.0;
  for (int i = 0; i < scenes; ++i) {
    const auto scene = random_scene(rng, map, now);
    const auto result =
      membership_round(scene, Segment{0.0, map.entry_s()}, mcfg, timing, now, scfg, map);
    ++out.scenes;
    for (const auto & ego : scene) {
      auto it = result.find(ego.id);
      if (it == result.end()) {
        continue;
      }
      for (Turn t : get_possible_turns(ego)) {
        const auto & m = it->second[index_of(t)];
        if (!m || !m->mo || !is_fresh(*m, now, timing)) {
          ++out.invalid;
          continue;
        }
        const auto truth =
          oracle_violators(ego, t, scene, now, now + timing.membership_horizon(), scfg, map);
        for (AgentId id : truth) {
          ++out.flagged;
          out.covered += m->sm.count(id) > 0;
        }
      }
    }
  }
  return out;
}

}  // namespace mnsim::testing

#endif  // MNSIM_TESTS__MEMBERSHIP_ORACLE_HPP_

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

#ifndef MNSIM__RISK_HPP_
#define MNSIM__RISK_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "mnsim/core.hpp"
#include "mnsim/geometry.hpp"
#include "mnsim/protocol.hpp"
#include "mnsim/violation.hpp"
#include "mnsim/world.hpp"

namespace mnsim
{

struct GapModel
{
  double a{3.0};
  double b{2.0};
};

/// Probability that a gap of `x` seconds is accepted.
inline double gap_acceptance(double x, const GapModel & g)
{
  return 1.0 / (1.0 + std::exp(g.b * (g.a - x)));
}

struct HmmParams
{
  double p_maneuver_switch{0.10};
  double p_defect_when_matched{0.10};
  double p_switch_when_mismatched{0.50};

  void validate() const
  {
    for (double p : {p_maneuver_switch, p_defect_when_matched, p_switch_when_mismatched}) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("HMM probabilities must lie in [0, 1]");
      }
    }
  }
};

struct RiskConfig
{
  std::size_t particle_count{500};
  double sigma_position{0.5};
  double sigma_speed{0.5};
  double sigma_heading{0.1};
  double resample_threshold{0.5};
  double risk_threshold{0.3};
  double process_speed_noise{0.2};
  double lane_confusion{0.1};
  GapModel gap{};
  HmmParams hmm{};

  void validate() const
  {
    if (particle_count < 100) {
      throw ConfigError("particle_count must be at least 100");
    }
    if (!(risk_threshold > 0.0 && risk_threshold < 1.0)) {
      throw ConfigError("risk_threshold must lie in (0, 1)");
    }
    if (!(sigma_position > 0.0 && sigma_speed > 0.0 && sigma_heading > 0.0)) {
      throw ConfigError("likelihood deviations must be positive");
    }
    if (!(lane_confusion > 0.0 && lane_confusion <= 2.0 / 3.0)) {
      throw ConfigError("lane_confusion must lie in (0, 2/3]");
    }
    if (!(gap.b > 0.0)) {
      throw ConfigError("gap model steepness must be positive");
    }
    hmm.validate();
  }
};

struct Particle
{
  double s{0.0};
  double v{0.0};
  Turn turn{Turn::straight};
  Intent intention{Intent::go};
  Intent expectation{Intent::go};
  double w{0.0};
};

/// Belief about one observed vehicle. Particles live at time `t`.
struct ParticleFilter
{
  AgentId target{0};
  Approach approach{Approach::south};
  double t{0.0};
  std::vector<Particle> particles{};
  bool fresh_intentions{true};

  [[nodiscard]] PathId path_of(const Particle & p) const { return PathId{approach, p.turn}; }
};

/// Which side holds priority, as adjusted by protocol notifications.
class PriorityView
{
public:
  void notify(const Notification & n)
  {
    if (n.kind == NotifyKind::revoke) {
      yielded_to_.reset();
      self_promoted_ = false;
    } else if (n.who) {
      yielded_to_ = *n.who;
    } else {
      self_promoted_ = true;
    }
  }

  /// Does vehicle `j` on `pj` outrank the ego on `ego`?
  [[nodiscard]] bool other_has_priority(
    AgentId j, const PathId & pj, const PathId & ego, const IntersectionMap & map) const
  {
    if (yielded_to_ == j) {
      return true;
    }
    if (self_promoted_) {
      return false;
    }
    return map.has_priority(pj, ego);
  }

  [[nodiscard]] std::optional<AgentId> yielded_to() const { return yielded_to_; }
  [[nodiscard]] bool self_promoted() const { return self_promoted_; }

  friend bool operator==(const PriorityView &, const PriorityView &) = default;

private:
  std::optional<AgentId> yielded_to_{};
  bool self_promoted_{false};
};

inline void normalize(std::vector<Particle> & ps)
{
  double sum = 0.0;
  for (const auto & p : ps) {
    sum += p.w;
  }
  for (auto & p : ps) {
    p.w /= sum;
  }
}

inline ParticleFilter init_filter(
  AgentId target, const AgentState & obs, const RiskConfig & cfg, std::mt19937_64 & rng)
{
  ParticleFilter f;
  f.target = target;
  f.approach = obs.path.approach;
  f.t = obs.ta;
  f.fresh_intentions = true;
  std::normal_distribution<double> ds(0.0, cfg.sigma_position);
  std::normal_distribution<double> dv(0.0, cfg.sigma_speed);
  std::uniform_int_distribution<int> turn(0, 2);
  f.particles.resize(cfg.particle_count);
  const double w = 1.0 / static_cast<double>(cfg.particle_count);
  for (auto & p : f.particles) {
    p.s = obs.s + ds(rng);
    p.v = std::max(0.0, obs.v + dv(rng));
    p.turn = kAllTurns[static_cast<std::size_t>(turn(rng))];
    p.w = w;
  }
  return f;
}

/// Project every particle `dt` seconds ahead: manoeuvre and go/stop
/// intentions follow the HMM once, kinematics run in tick-sized substeps.
inline void predict(
  ParticleFilter & f, double dt, const SpeedModels & models, const RiskConfig & cfg,
  std::mt19937_64 & rng)
{
  if (!(dt > 0.0)) {
    return;
  }
  const auto & mc = models.config();
  const int n = std::max(1, static_cast<int>(std::ceil(dt / kTick - 1e-9)));
  const double h = dt / n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.process_speed_noise * std::sqrt(h));
  for (auto & p : f.particles) {
    if (u(rng) < cfg.hmm.p_maneuver_switch) {
      const int shift = u(rng) < 0.5 ? 1 : 2;
      p.turn = kAllTurns[(index_of(p.turn) + static_cast<std::size_t>(shift)) % 3];
    }
    const double flip = p.intention == p.expectation ? cfg.hmm.p_defect_when_matched
                                                      : cfg.hmm.p_switch_when_mismatched;
    if (u(rng) < flip) {
      p.intention = p.intention == Intent::go ? Intent::stop : Intent::go;
    }
    for (int k = 0; k < n; ++k) {
      const double target =
        p.intention == Intent::go ? models.go(p.turn).at(p.s) : models.stop_target(p.turn, p.s);
      const double v = std::max(0.0, std::clamp(target, p.v - mc.brake * h, p.v + mc.accel * h));
      p.s += 0.5 * (p.v + v) * h;
      p.v = std::max(0.0, v + noise(rng));
    }
  }
  f.t += dt;
}

/// Bayes update against one observation. Returns false when every weight
/// vanished; weights are then left untouched.
inline bool reweight(
  ParticleFilter & f, const AgentState & obs, const RiskConfig & cfg, const IntersectionMap & map)
{
  const double kp = 0.5 / (cfg.sigma_position * cfg.sigma_position);
  const double kv = 0.5 / (cfg.sigma_speed * cfg.sigma_speed);
  const double kh = 0.5 / (cfg.sigma_heading * cfg.sigma_heading);
  const double lane_hit = 1.0 - cfg.lane_confusion;
  const double lane_miss = 0.5 * cfg.lane_confusion;
  std::vector<double> w(f.particles.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < f.particles.size(); ++i) {
    const auto & p = f.particles[i];
    const PathId path = f.path_of(p);
    const Vec2 q = map.point(path, p.s);
    const double dx = q.x - obs.p.x;
    const double dy = q.y - obs.p.y;
    const double dv = p.v - obs.v;
    const double dh = IntersectionMap::wrap_angle(map.heading(path, p.s) - obs.heading);
    const double lane = p.turn == obs.path.turn ? lane_hit : lane_miss;
    w[i] = p.w * lane * std::exp(-(dx * dx + dy * dy) * kp - dv * dv * kv - dh * dh * kh);
    sum += w[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    return false;
  }
  for (std::size_t i = 0; i < f.particles.size(); ++i) {
    f.particles[i].w = w[i] / sum;
  }
  return true;
}

inline double effective_sample_size(const ParticleFilter & f)
{
  double sq = 0.0;
  for (const auto & p : f.particles) {
    sq += p.w * p.w;
  }
  return sq > 0.0 ? 1.0 / sq : 0.0;
}

inline void systematic_resample(ParticleFilter & f, std::mt19937_64 & rng)
{
  const std::size_t n = f.particles.size();
  std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(n));
  const double start = u(rng);
  std::vector<Particle> out;
  out.reserve(n);
  double cum = f.particles[0].w;
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = start + static_cast<double>(k) / static_cast<double>(n);
    while (pos > cum && i + 1 < n) {
      cum += f.particles[++i].w;
    }
    out.push_back(f.particles[i]);
  }
  for (auto & p : out) {
    p.w = 1.0 / static_cast<double>(n);
  }
  f.particles = std::move(out);
}

/// Resample on depletion; restart around `last_obs` when the update collapsed.
inline void resample_or_restart(
  ParticleFilter & f, bool collapsed, const AgentState & last_obs, const RiskConfig & cfg,
  std::mt19937_64 & rng)
{
  if (collapsed) {
    f = init_filter(f.target, last_obs, cfg, rng);
    return;
  }
  if (effective_sample_size(f) < cfg.resample_threshold * static_cast<double>(f.particles.size())) {
    systematic_resample(f, rng);
  }
}

/// Absolute time at which a particle's body would clear its exit under the go model.
inline double particle_exit_time(
  const ParticleFilter & f, const Particle & p, const SpeedModels & models,
  const IntersectionMap & map)
{
  const PathId path = f.path_of(p);
  return f.t + travel_time(models.go(p.turn), p.s, p.v, map.cleared_s(path), models.config().accel);
}

/// The body on `self` has fully passed the zone it shares with `other`.
inline bool past_conflict_zone(
  const PathId & self, double s, const PathId & other, const IntersectionMap & map)
{
  const auto z = map.conflict_zone(self, other);
  return !z || s - map.vehicle_length() >= z->hi;
}

/// Resample expectations of every particle against the ego.
inline void expectation_update(
  ParticleFilter & f, const AgentState & ego, const PriorityView & view,
  const SpeedModels & models, const IntersectionMap & map, const GapModel & gap,
  std::mt19937_64 & rng)
{
  const double ego_exit = time_to_exit(ego, models, map, ego.path.turn);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto & p : f.particles) {
    const PathId pj = f.path_of(p);
    bool go = !map.conflicts(pj, ego.path) || past_conflict_zone(pj, p.s, ego.path, map) ||
              past_conflict_zone(ego.path, ego.s, pj, map) ||
              view.other_has_priority(f.target, pj, ego.path, map);
    if (!go) {
      const double x = std::abs(ego_exit - particle_exit_time(f, p, models, map));
      go = u(rng) < gap_acceptance(x, gap);
    }
    p.expectation = go ? Intent::go : Intent::stop;
    if (f.fresh_intentions) {
      p.intention = p.expectation;
    }
  }
  f.fresh_intentions = false;
}

/// Weight of particles that intend to go although they are expected to stop.
inline double risk_score(const ParticleFilter & f)
{
  double r = 0.0;
  for (const auto & p : f.particles) {
    if (p.intention == Intent::go && p.expectation == Intent::stop) {
      r += p.w;
    }
  }
  return std::clamp(r, 0.0, 1.0);
}

inline bool emergency_break_check(double score, const RiskConfig & cfg)
{
  return score > cfg.risk_threshold;
}

/// Probability that the ego itself is expected to go, given the belief
/// about another vehicle.
inline double ego_go_probability(
  const ParticleFilter & f, const AgentState & ego, const PriorityView & view,
  const SpeedModels & models, const IntersectionMap & map, const GapModel & gap)
{
  if (ego.s >= map.entry_s()) {
    return 1.0;
  }
  const double ego_exit = time_to_exit(ego, models, map, ego.path.turn);
  double p_go = 0.0;
  for (const auto & p : f.particles) {
    const PathId pj = f.path_of(p);
    double g = 1.0;
    if (map.conflicts(ego.path, pj) && !past_conflict_zone(pj, p.s, ego.path, map) &&
        view.other_has_priority(f.target, pj, ego.path, map))
    {
      g = gap_acceptance(std::abs(ego_exit - particle_exit_time(f, p, models, map)), gap);
    }
    p_go += p.w * g;
  }
  return p_go;
}

/// One vehicle's estimator: a filter per observed vehicle plus the
/// protocol-adjusted priority view.
class RiskEstimator
{
public:
  RiskEstimator(AgentId ego, RiskConfig cfg, std::mt19937_64 rng)
  : ego_(ego), cfg_(cfg), rng_(std::move(rng))
  {
    cfg_.validate();
  }

  void notify(const Notification & n) { view_.notify(n); }
  [[nodiscard]] const PriorityView & view() const { return view_; }

  /// Latest broadcast state of another vehicle.
  void observe(AgentId from, const AgentState & st)
  {
    if (from == ego_) {
      return;
    }
    auto & slot = obs_[from];
    if (!slot.state || st.ta > slot.state->ta) {
      slot.state = st;
      slot.pending = true;
    }
  }

  struct Round
  {
    double risk{0.0};
    std::optional<double> go_probability{};
    std::size_t restarts{0};
  };

  /// Fold in new observations and refresh expectations against `ego`.
  Round estimate(const AgentState & ego, const SpeedModels & models, const IntersectionMap & map)
  {
    Round r;
    for (auto & [id, slot] : obs_) {
      if (!slot.state) {
        continue;
      }
      auto it = filters_.find(id);
      if (it == filters_.end()) {
        it = filters_.emplace(id, init_filter(id, *slot.state, cfg_, rng_)).first;
        slot.pending = false;
      } else if (slot.pending) {
        predict(it->second, slot.state->ta - it->second.t, models, cfg_, rng_);
        const bool ok = reweight(it->second, *slot.state, cfg_, map);
        if (!ok) {
          ++r.restarts;
        }
        resample_or_restart(it->second, !ok, *slot.state, cfg_, rng_);
        slot.pending = false;
      }
      auto & f = it->second;
      expectation_update(f, ego, view_, models, map, cfg_.gap, rng_);
      r.risk = std::max(r.risk, risk_score(f));
      const double pg = ego_go_probability(f, ego, view_, models, map, cfg_.gap);
      r.go_probability = r.go_probability ? std::min(*r.go_probability, pg) : pg;
    }
    return r;
  }

  [[nodiscard]] const std::map<AgentId, ParticleFilter> & filters() const { return filters_; }
  [[nodiscard]] const RiskConfig & config() const { return cfg_; }

private:
  struct Slot
  {
    std::optional<AgentState> state{};
    bool pending{false};
  };

  AgentId ego_;
  RiskConfig cfg_;
  std::mt19937_64 rng_;
  PriorityView view_{};
  std::map<AgentId, Slot> obs_{};
  std::map<AgentId, ParticleFilter> filters_{};
};

}  // namespace mnsim

#endif  // MNSIM__RISK_HPP_

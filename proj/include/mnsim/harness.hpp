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

#ifndef MNSIM__HARNESS_HPP_
#define MNSIM__HARNESS_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mnsim/core.hpp"
#include "mnsim/geometry.hpp"
#include "mnsim/membership.hpp"
#include "mnsim/netsim.hpp"
#include "mnsim/protocol.hpp"
#include "mnsim/risk.hpp"
#include "mnsim/violation.hpp"
#include "mnsim/world.hpp"

namespace mnsim
{

enum class Setup : std::uint8_t { re, mn, re_mn };

inline std::string_view to_string(Setup s)
{
  switch (s) {
    case Setup::re:
      return "re";
    case Setup::mn:
      return "mn";
    case Setup::re_mn:
      return "re+mn";
  }
  return "?";
}

inline Setup parse_setup(std::string_view s)
{
  if (s == "re") {
    return Setup::re;
  }
  if (s == "mn") {
    return Setup::mn;
  }
  if (s == "re+mn") {
    return Setup::re_mn;
  }
  throw ConfigError("unknown setup '" + std::string(s) + "'");
}

inline bool uses_risk(Setup s) { return s != Setup::mn; }
inline bool uses_protocol(Setup s) { return s != Setup::re; }

enum class CaseKind : std::uint8_t { normal, noise, comloss, offender };

namespace detail
{

inline double parse_number(std::string_view s)
{
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string format_number(double v)
{
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace detail

struct TestCase
{
  CaseKind kind{CaseKind::normal};
  double noise_multiplier{1.0};
  std::optional<ComLoss> comloss{};

  /// normal | noise:1.5 | noise:2 | comloss:D,T | offender
  static TestCase parse(std::string_view s)
  {
    TestCase tc;
    if (s == "normal") {
      return tc;
    }
    if (s == "offender") {
      tc.kind = CaseKind::offender;
      return tc;
    }
    if (s.starts_with("noise:")) {
      tc.kind = CaseKind::noise;
      tc.noise_multiplier = detail::parse_number(s.substr(6));
      tc.fault_plan().validate();
      return tc;
    }
    if (s.starts_with("comloss:")) {
      const auto body = s.substr(8);
      const auto comma = body.find(',');
      if (comma == std::string_view::npos) {
        throw ConfigError("comloss needs D,T");
      }
      tc.kind = CaseKind::comloss;
      tc.comloss = ComLoss{
        detail::parse_number(body.substr(0, comma)), detail::parse_number(body.substr(comma + 1))};
      tc.fault_plan().validate();
      return tc;
    }
    throw ConfigError("unknown test case '" + std::string(s) + "'");
  }

  [[nodiscard]] std::string name() const
  {
    switch (kind) {
      case CaseKind::normal:
        return "normal";
      case CaseKind::noise:
        return "noise:" + detail::format_number(noise_multiplier);
      case CaseKind::comloss:
        return "comloss:" + detail::format_number(comloss->d_cl) + "," +
               detail::format_number(comloss->t_cl);
      case CaseKind::offender:
        return "offender";
    }
    return "?";
  }

  [[nodiscard]] FaultPlan fault_plan() const
  {
    return FaultPlan{noise_multiplier, comloss, kind == CaseKind::offender};
  }
};

struct ScenarioConfig
{
  Setup setup{Setup::mn};
  TestCase test_case{};
  double d0{65.0};
  double d1{125.0};
  double d_init{30.0};
  std::uint64_t seed{1};
  TimingConfig timing{};
  MembershipConfig membership{};
  StaticViolationConfig static_violation{};
  RiskConfig risk{};
  NoiseConfig noise{};
  ChannelConfig channel{};
  double sigma{0.1};
  double broadcast_period{0.5};
  double timeout{60.0};

  void validate() const
  {
    timing.validate();
    membership.validate();
    static_violation.validate();
    risk.validate();
    test_case.fault_plan().validate();
    auto on_grid = [](double t) {
      const double k = t / kTick;
      return t > 0.0 && std::abs(k - std::round(k)) < 1e-9;
    };
    if (!on_grid(timing.T_A) || !on_grid(timing.T_M) || !on_grid(broadcast_period)) {
      throw ConfigError("T_A, T_M and the broadcast period must be tick multiples");
    }
    if (!(d0 > 0.0) || !(d1 > 0.0) || !(d_init > 0.0)) {
      throw ConfigError("start distances and d_init must be positive");
    }
    if (!(sigma >= 0.0 && sigma < 1.0)) {
      throw ConfigError("sigma must lie in [0, 1)");
    }
    if (!(timeout > 0.0)) {
      throw ConfigError("timeout must be positive");
    }
  }
};

inline void to_json(nlohmann::json & j, const ScenarioConfig & c)
{
  j = nlohmann::json{
    {"setup", std::string(to_string(c.setup))},
    {"case", c.test_case.name()},
    {"d0", c.d0},
    {"d1", c.d1},
    {"d_init", c.d_init},
    {"seed", c.seed},
    {"timing", {{"T_M", c.timing.T_M}, {"T_A", c.timing.T_A}, {"T_D", c.timing.T_D}, {"T_Man", c.timing.T_Man}}},
    {"membership",
     {{"d_max", c.membership.d_max},
      {"n_max", c.membership.n_max},
      {"communication_range", c.membership.communication_range},
      {"v_max", c.membership.v_max}}},
    {"static_violation",
     {{"dt", c.static_violation.dt},
      {"a_min", c.static_violation.a_min},
      {"a_max", c.static_violation.a_max},
      {"v_max", c.static_violation.v_max}}},
    {"risk",
     {{"particle_count", c.risk.particle_count},
      {"sigma_position", c.risk.sigma_position},
      {"sigma_speed", c.risk.sigma_speed},
      {"sigma_heading", c.risk.sigma_heading},
      {"resample_threshold", c.risk.resample_threshold},
      {"risk_threshold", c.risk.risk_threshold},
      {"process_speed_noise", c.risk.process_speed_noise},
      {"lane_confusion", c.risk.lane_confusion},
      {"gap_a", c.risk.gap.a},
      {"gap_b", c.risk.gap.b}}},
    {"noise", {{"position", c.noise.position}, {"speed", c.noise.speed}, {"heading", c.noise.heading}}},
    {"channel",
     {{"mode", c.channel.mode == ChannelMode::synchronous ? "synchronous" : "asynchronous"},
      {"min_fraction", c.channel.min_fraction},
      {"late_probability", c.channel.late_probability}}},
    {"sigma", c.sigma},
    {"broadcast_period", c.broadcast_period},
    {"timeout", c.timeout},
  };
}

inline void from_json(const nlohmann::json & j, ScenarioConfig & c)
{
  c = ScenarioConfig{};
  auto get = [&j](const char * obj, const char * key, auto & dst) {
    if (obj == nullptr) {
      if (j.contains(key)) {
        j.at(key).get_to(dst);
      }
    } else if (j.contains(obj) && j.at(obj).contains(key)) {
      j.at(obj).at(key).get_to(dst);
    }
  };
  if (j.contains("setup")) {
    c.setup = parse_setup(j.at("setup").get<std::string>());
  }
  if (j.contains("case")) {
    c.test_case = TestCase::parse(j.at("case").get<std::string>());
  }
  get(nullptr, "d0", c.d0);
  get(nullptr, "d1", c.d1);
  get(nullptr, "d_init", c.d_init);
  get(nullptr, "seed", c.seed);
  get("timing", "T_M", c.timing.T_M);
  get("timing", "T_A", c.timing.T_A);
  get("timing", "T_D", c.timing.T_D);
  get("timing", "T_Man", c.timing.T_Man);
  get("membership", "d_max", c.membership.d_max);
  get("membership", "n_max", c.membership.n_max);
  get("membership", "communication_range", c.membership.communication_range);
  get("membership", "v_max", c.membership.v_max);
  get("static_violation", "dt", c.static_violation.dt);
  get("static_violation", "a_min", c.static_violation.a_min);
  get("static_violation", "a_max", c.static_violation.a_max);
  get("static_violation", "v_max", c.static_violation.v_max);
  get("risk", "particle_count", c.risk.particle_count);
  get("risk", "sigma_position", c.risk.sigma_position);
  get("risk", "sigma_speed", c.risk.sigma_speed);
  get("risk", "sigma_heading", c.risk.sigma_heading);
  get("risk", "resample_threshold", c.risk.resample_threshold);
  get("risk", "risk_threshold", c.risk.risk_threshold);
  get("risk", "process_speed_noise", c.risk.process_speed_noise);
  get("risk", "lane_confusion", c.risk.lane_confusion);
  get("risk", "gap_a", c.risk.gap.a);
  get("risk", "gap_b", c.risk.gap.b);
  get("noise", "position", c.noise.position);
  get("noise", "speed", c.noise.speed);
  get("noise", "heading", c.noise.heading);
  if (j.contains("channel") && j.at("channel").contains("mode")) {
    const auto mode = j.at("channel").at("mode").get<std::string>();
    if (mode != "synchronous" && mode != "asynchronous") {
      throw ConfigError("unknown channel mode '" + mode + "'");
    }
    c.channel.mode = mode == "synchronous" ? ChannelMode::synchronous : ChannelMode::asynchronous;
  }
  get("channel", "min_fraction", c.channel.min_fraction);
  get("channel", "late_probability", c.channel.late_probability);
  get(nullptr, "sigma", c.sigma);
  get(nullptr, "broadcast_period", c.broadcast_period);
  get(nullptr, "timeout", c.timeout);
}

/// Map plus speed models; building the map samples every conflict zone, so
/// one instance is shared by all runs.
struct World
{
  IntersectionMap map;
  SpeedModels models;

  explicit World(MapConfig m = {}, SpeedModelConfig s = {}) : map(m), models(map, s) {}
};

inline const World & default_world()
{
  static const World w;
  return w;
}

inline constexpr AgentId kLowId = 1;
inline constexpr AgentId kHighId = 2;

struct VehicleSpec
{
  AgentId id{0};
  PathId path{};
  double start_s{0.0};
  double start_v{0.0};
  bool offender{false};
};

/// V_L turns left from the south across the priority road; V_H goes
/// straight from the north.
inline std::vector<VehicleSpec> scenario_vehicles(const ScenarioConfig & cfg, const World & w)
{
  const double v0 = w.models.config().cruise;
  return {
    VehicleSpec{
      kLowId, PathId{Approach::south, Turn::left}, w.map.s_at_distance(cfg.d0), v0,
      cfg.test_case.kind == CaseKind::offender},
    VehicleSpec{
      kHighId, PathId{Approach::north, Turn::straight}, w.map.s_at_distance(cfg.d1), v0, false},
  };
}

enum class EventKind : std::uint8_t { transition, message, notify, revoke, eb, comloss, ignored };

inline std::string_view to_string(EventKind k)
{
  switch (k) {
    case EventKind::transition:
      return "transition";
    case EventKind::message:
      return "message";
    case EventKind::notify:
      return "notify";
    case EventKind::revoke:
      return "revoke";
    case EventKind::eb:
      return "eb";
    case EventKind::comloss:
      return "comloss";
    case EventKind::ignored:
      return "ignored";
  }
  return "?";
}

struct RunEvent
{
  double t{0.0};
  AgentId aid{0};
  EventKind kind{EventKind::transition};
  std::string a{};
  std::string b{};
  std::string cause{};
  std::vector<AgentId> ids{};
  double value{0.0};
};

struct VehicleSample
{
  AgentId id{0};
  double s{0.0};
  double v{0.0};
  double x{0.0};
  double y{0.0};
  Status status{Status::normal};
  IntentionDirective directive{};
  double risk{0.0};
  bool eb{false};
};

struct Sample
{
  double t{0.0};
  std::vector<VehicleSample> vehicles{};
  bool collision{false};
  bool danger{false};
};

struct RunRecord
{
  ScenarioConfig config{};
  std::vector<VehicleSpec> vehicles{};
  std::vector<RunEvent> events{};
  std::vector<Sample> samples{};
  bool timed_out{false};
  double end_time{0.0};
};

inline std::string_view to_string(ReleaseCause c)
{
  switch (c) {
    case ReleaseCause::denied:
      return "denied";
    case ReleaseCause::retry_expired:
      return "retry_expired";
    case ReleaseCause::exited:
      return "exited";
    case ReleaseCause::preempted:
      return "preempted";
  }
  return "?";
}

inline std::string_view to_string(RevokeCause c)
{
  switch (c) {
    case RevokeCause::matching_release:
      return "matching_release";
    case RevokeCause::own_exit:
      return "own_exit";
    case RevokeCause::grantee_left:
      return "grantee_left";
  }
  return "?";
}

/// One seeded run of the two-vehicle scenario.
class Simulation
{
public:
  Simulation(const ScenarioConfig & cfg, const World & world)
  : cfg_(cfg),
    world_(world),
    plan_(cfg.test_case.fault_plan()),
    channel_(cfg.channel, cfg.timing.T_D),
    rng_channel_(make_stream(cfg.seed, 1)),
    rng_noise_(make_stream(cfg.seed, 2))
  {
    cfg_.validate();
    protocol_ = uses_protocol(cfg_.setup);
    risk_ = uses_risk(cfg_.setup);
    ta_ticks_ = ticks_of(cfg_.timing.T_A);
    tm_ticks_ = ticks_of(cfg_.timing.T_M);
    bc_ticks_ = ticks_of(cfg_.broadcast_period);
    record_.config = cfg_;
    record_.vehicles = scenario_vehicles(cfg_, world_);
    for (const auto & spec : record_.vehicles) {
      Vehicle v;
      v.spec = spec;
      v.truth.path = spec.path;
      v.truth.s = spec.start_s;
      v.truth.v = spec.start_v;
      v.truth = world_.map.with_pose(v.truth);
      v.ps.id = spec.id;
      v.ps.ar = Agent{spec.id, v.truth, true};
      if (risk_) {
        v.re.emplace(spec.id, cfg_.risk, make_stream(cfg_.seed, 100 + spec.id));
      }
      if (spec.id == kLowId) {
        v.comloss = ComLossWindow(plan_.comloss);
      }
      vehicles_.push_back(std::move(v));
    }
  }

  RunRecord run()
  {
    if (protocol_) {
      for (auto & v : vehicles_) {
        storage_.put_ar(Agent{v.spec.id, noisy(v.truth), true});
      }
    }
    record_sample(0.0);
    queue_.push(0.0, EventClass::tick, 0, Tick{0});
    while (!queue_.empty() && !done_) {
      auto ev = queue_.pop();
      const double now = ev.key.time;
      std::visit([&](auto & p) { handle(p, now); }, ev.payload);
    }
    return std::move(record_);
  }

private:
  struct Vehicle
  {
    VehicleSpec spec{};
    AgentState truth{};
    ProtocolState ps{};
    std::optional<RiskEstimator> re{};
    std::map<AgentId, AgentState> known{};
    std::optional<MembershipSet> mr_cache{};
    ComLossWindow comloss{};
    bool comloss_open_logged{false};
    bool comloss_close_logged{false};
    bool eb{false};
    double risk{0.0};
    std::optional<Intent> hmm{};
    std::uint64_t timer_gen{0};
    IntentionDirective directive{};
  };

  struct TimerFire
  {
    AgentId aid;
    std::uint64_t gen;
  };
  struct MsgDelivery
  {
    AgentId to;
    Message msg;
  };
  struct StateDelivery
  {
    AgentId to;
    AgentId from;
    AgentState st;
  };
  struct Tick
  {
    std::uint64_t k;
  };
  using Payload = std::variant<TimerFire, MsgDelivery, StateDelivery, Tick>;

  struct Env
  {
    Simulation * sim;
    Vehicle * v;

    [[nodiscard]] Agent own_agent(AgentId id, double) const { return Agent{id, v->truth, true}; }

    [[nodiscard]] std::optional<MembershipSet> fetch_membership(AgentId id) const
    {
      if (v->comloss.active(sim->now_)) {
        return v->mr_cache;
      }
      v->mr_cache = sim->storage_.get_mr(id);
      return v->mr_cache;
    }

    [[nodiscard]] bool has_left_critical_section(AgentId observer, AgentId target, double now) const
    {
      const auto & map = sim->world_.map;
      if (observer == target) {
        return v->truth.s > map.cleared_s(v->truth.path);
      }
      auto it = v->known.find(target);
      if (it == v->known.end() || now - it->second.ta > 2.0 * sim->cfg_.timing.T_M) {
        return false;
      }
      return it->second.s > map.cleared_s(it->second.path);
    }

    [[nodiscard]] bool no_priority_violation_dynamic(
      const Agent & self, const Agent & requester, std::optional<Turn> turn, double now) const
    {
      return mnsim::no_priority_violation_dynamic(
        self, requester, now, turn, sim->cfg_.sigma, sim->world_.models, sim->world_.map);
    }
  };

  static int ticks_of(double t) { return static_cast<int>(std::lround(t / kTick)); }

  Vehicle & vehicle(AgentId id)
  {
    for (auto & v : vehicles_) {
      if (v.spec.id == id) {
        return v;
      }
    }
    throw std::out_of_range("unknown vehicle");
  }

  AgentState noisy(const AgentState & st)
  {
    return observe(st, plan_.noise_multiplier, cfg_.noise, rng_noise_);
  }

  bool blocked(const Vehicle & v, double now) const { return v.comloss.active(now); }

  void log(RunEvent e)
  {
    e.t = quantize9(e.t);
    e.value = quantize9(e.value);
    record_.events.push_back(std::move(e));
  }

  void schedule_timer(Vehicle & v)
  {
    const auto tm = v.ps.timers.get(kRetryTimer);
    if (tm && tm->generation != v.timer_gen) {
      v.timer_gen = tm->generation;
      queue_.push(tm->expiry, EventClass::timer, v.spec.id, TimerFire{v.spec.id, tm->generation});
    }
  }

  void apply(Vehicle & v, OutboundEffect & out, double now)
  {
    const AgentId id = v.spec.id;
    for (const auto & tr : out.transitions) {
      log({now, id, EventKind::transition, std::string(to_string(tr.from)),
           std::string(to_string(tr.to)), std::string(tr.cause), {}, 0.0});
    }
    for (auto & ob : out.messages) {
      Message m = ob.msg;
      if (m.data) {
        m.data->ar.as = noisy(m.data->ar.as);
      }
      log({now, id, EventKind::message, std::string(to_string(m.type)), "",
           ob.release_cause ? std::string(to_string(*ob.release_cause)) : "", ob.to, 0.0});
      for (const auto & d : channel_.send_fifo(id, ob.to, now, blocked(v, now), rng_channel_)) {
        queue_.push(d.time, EventClass::delivery, d.to, MsgDelivery{d.to, m});
      }
    }
    for (const auto & n : out.notifications) {
      std::vector<AgentId> who;
      if (n.who) {
        who.push_back(*n.who);
      }
      log({now, id, EventKind::notify, n.kind == NotifyKind::grant ? "grant" : "revoke", "", "",
           who, 0.0});
      if (v.re) {
        v.re->notify(n);
      }
    }
    for (const auto & r : out.revokes) {
      log({now, id, EventKind::revoke, "", "", std::string(to_string(r)), {}, 0.0});
    }
    if (out.stored_ar && !blocked(v, now)) {
      storage_.put_ar(Agent{id, noisy(out.stored_ar->as), true});
    }
    for (const auto & ig : out.ignored) {
      log({now, id, EventKind::ignored, "", "", std::string(ig), {}, 0.0});
    }
    schedule_timer(v);
  }

  [[nodiscard]] bool in_request_region(const Vehicle & v) const
  {
    return world_.map.distance_to_center(v.truth.s) <= cfg_.d_init &&
           v.truth.s < world_.map.entry_s();
  }

  [[nodiscard]] std::optional<Intent> mn_directive(const Vehicle & v) const
  {
    if (!protocol_ || !in_request_region(v)) {
      return std::nullopt;
    }
    return v.ps.status == Status::execute ? Intent::go : Intent::stop;
  }

  void handle(TimerFire & e, double now)
  {
    now_ = now;
    Vehicle & v = vehicle(e.aid);
    if (!v.ps.timers.fire(kRetryTimer, e.gen)) {
      return;
    }
    OutboundEffect out;
    Env env{this, &v};
    on_retry_expired(v.ps, env, cfg_.timing, now, out);
    apply(v, out, now);
  }

  void handle(MsgDelivery & e, double now)
  {
    now_ = now;
    Vehicle & v = vehicle(e.to);
    if (!protocol_ || blocked(v, now)) {
      return;
    }
    OutboundEffect out;
    Env env{this, &v};
    on_message(v.ps, e.msg, now, env, cfg_.timing, out);
    apply(v, out, now);
  }

  void handle(StateDelivery & e, double now)
  {
    now_ = now;
    Vehicle & v = vehicle(e.to);
    if (blocked(v, now)) {
      return;
    }
    auto it = v.known.find(e.from);
    if (it == v.known.end() || e.st.ta >= it->second.ta) {
      v.known[e.from] = e.st;
    }
    if (v.re) {
      v.re->observe(e.from, e.st);
    }
  }

  void handle(Tick & e, double now)
  {
    now_ = now;
    const auto & map = world_.map;
    if (protocol_ && e.k % static_cast<std::uint64_t>(tm_ticks_) == 0) {
      const auto rounds = membership_round(
        storage_.registry(), Segment{0.0, map.entry_s()}, cfg_.membership, cfg_.timing, now,
        cfg_.static_violation, map);
      for (const auto & [id, m] : rounds) {
        storage_.put_mr(id, m);
      }
    }
    for (auto & v : vehicles_) {
      update_comloss(v, now);
      Env env{this, &v};
      if (protocol_ && e.k % static_cast<std::uint64_t>(ta_ticks_) == 0) {
        OutboundEffect out;
        step_periodic(v.ps, env, cfg_.timing, now, out);
        apply(v, out, now);
        if (in_request_region(v) &&
            (v.ps.status == Status::normal || v.ps.status == Status::grant))
        {
          OutboundEffect req;
          try_maneuver(v.ps, v.spec.path.turn, env, cfg_.timing, now, req);
          apply(v, req, now);
        }
      }
      if (e.k % static_cast<std::uint64_t>(bc_ticks_) == 0) {
        broadcast(v, now);
        if (v.re) {
          const auto round = v.re->estimate(v.truth, world_.models, map);
          v.risk = round.risk;
          const bool eb = emergency_break_check(round.risk, cfg_.risk) &&
                          v.truth.s < map.cleared_s(v.truth.path);
          if (eb && !v.eb) {
            log({now, v.spec.id, EventKind::eb, "", "", "", {}, round.risk});
          }
          v.eb = eb;
          v.hmm.reset();
          if (round.go_probability) {
            v.hmm = *round.go_probability >= 0.5 ? Intent::go : Intent::stop;
          }
        }
      }
    }
    const double next = static_cast<double>(e.k + 1) * kTick;
    for (auto & v : vehicles_) {
      if (v.spec.offender) {
        v.directive = {DirectiveSource::rules, Intent::go};
      } else {
        v.directive = arbitrate_intention(v.eb, mn_directive(v), v.hmm, Intent::go);
      }
      v.truth = step_vehicle(v.truth, v.directive, kTick, world_.models, map);
      v.truth.ta = next;
    }
    record_sample(next);
    bool all_clear = true;
    for (const auto & v : vehicles_) {
      all_clear = all_clear && v.truth.s >= map.cleared_s(v.truth.path);
    }
    if (all_clear) {
      done_ = true;
    } else if (next >= cfg_.timeout - 1e-9) {
      done_ = true;
      record_.timed_out = true;
    } else {
      queue_.push(next, EventClass::tick, 0, Tick{e.k + 1});
    }
    record_.end_time = quantize9(next);
  }

  void update_comloss(Vehicle & v, double now)
  {
    v.comloss.update(world_.map.distance_to_center(v.truth.s), now);
    if (v.comloss.start() && !v.comloss_open_logged) {
      v.comloss_open_logged = true;
      log({*v.comloss.start(), v.spec.id, EventKind::comloss, "start", "", "", {}, 0.0});
    }
    if (v.comloss.end() && !v.comloss_close_logged && now >= *v.comloss.end()) {
      v.comloss_close_logged = true;
      log({*v.comloss.end(), v.spec.id, EventKind::comloss, "end", "", "", {}, 0.0});
    }
  }

  void broadcast(Vehicle & v, double now)
  {
    std::vector<AgentId> others;
    for (const auto & o : vehicles_) {
      if (o.spec.id != v.spec.id) {
        others.push_back(o.spec.id);
      }
    }
    if (blocked(v, now)) {
      return;
    }
    const AgentState st = noisy(v.truth);
    for (const auto & d : channel_.send(others, now, false, rng_channel_)) {
      queue_.push(d.time, EventClass::delivery, d.to, StateDelivery{d.to, v.spec.id, st});
    }
  }

  void record_sample(double t)
  {
    Sample s;
    s.t = quantize9(t);
    for (const auto & v : vehicles_) {
      s.vehicles.push_back(VehicleSample{
        v.spec.id, quantize9(v.truth.s), quantize9(v.truth.v), quantize9(v.truth.p.x),
        quantize9(v.truth.p.y), v.ps.status, v.directive, quantize9(v.risk), v.eb});
    }
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      for (std::size_t j = i + 1; j < vehicles_.size(); ++j) {
        const bool c = detect_collision(vehicles_[i].truth, vehicles_[j].truth, world_.map);
        s.collision = s.collision || c;
        s.danger = s.danger || detect_danger(vehicles_[i].truth, vehicles_[j].truth, world_.map);
      }
    }
    record_.samples.push_back(std::move(s));
  }

  ScenarioConfig cfg_;
  const World & world_;
  FaultPlan plan_;
  Channel channel_;
  std::mt19937_64 rng_channel_;
  std::mt19937_64 rng_noise_;
  bool protocol_{false};
  bool risk_{false};
  int ta_ticks_{2};
  int tm_ticks_{10};
  int bc_ticks_{10};
  double now_{0.0};
  bool done_{false};
  StorageService storage_{};
  EventQueue<Payload> queue_{};
  std::vector<Vehicle> vehicles_{};
  RunRecord record_{};
};

inline RunRecord run_scenario(const ScenarioConfig & cfg, const World & world = default_world())
{
  return Simulation(cfg, world).run();
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail
{

inline void put_fixed(std::string & out, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  out += buf;
}

inline void put_string(std::string & out, std::string_view s)
{
  out += nlohmann::json(std::string(s)).dump();
}

inline Status parse_status(std::string_view s)
{
  for (Status st : {Status::normal, Status::get, Status::tryget, Status::grant, Status::grantget,
                    Status::execute})
  {
    if (to_string(st) == s) {
      return st;
    }
  }
  throw ConfigError("unknown status '" + std::string(s) + "'");
}

inline DirectiveSource parse_source(std::string_view s)
{
  for (DirectiveSource d :
       {DirectiveSource::eb, DirectiveSource::mn, DirectiveSource::hmm, DirectiveSource::rules})
  {
    if (to_string(d) == s) {
      return d;
    }
  }
  throw ConfigError("unknown directive source '" + std::string(s) + "'");
}

inline EventKind parse_event_kind(std::string_view s)
{
  for (EventKind k : {EventKind::transition, EventKind::message, EventKind::notify,
                      EventKind::revoke, EventKind::eb, EventKind::comloss, EventKind::ignored})
  {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw ConfigError("unknown event kind '" + std::string(s) + "'");
}

inline Approach parse_approach(std::string_view s)
{
  for (Approach a : kAllApproaches) {
    if (to_string(a) == s) {
      return a;
    }
  }
  throw ConfigError("unknown approach '" + std::string(s) + "'");
}

inline Turn parse_turn(std::string_view s)
{
  for (Turn t : kAllTurns) {
    if (to_string(t) == s) {
      return t;
    }
  }
  throw ConfigError("unknown turn '" + std::string(s) + "'");
}

}  // namespace detail

/// Newline-delimited JSON: one header, then events, samples and a trailer.
inline std::string to_ndjson(const RunRecord & r)
{
  std::string out;
  nlohmann::json header{{"type", "header"}, {"config", r.config}};
  nlohmann::json vs = nlohmann::json::array();
  for (const auto & v : r.vehicles) {
    vs.push_back({{"id", v.id},
                  {"approach", std::string(to_string(v.path.approach))},
                  {"turn", std::string(to_string(v.path.turn))},
                  {"start_s", v.start_s},
                  {"start_v", v.start_v},
                  {"offender", v.offender}});
  }
  header["vehicles"] = vs;
  out += header.dump();
  out += '\n';
  for (const auto & e : r.events) {
    out += R"({"type":"event","t":)";
    detail::put_fixed(out, e.t);
    out += R"(,"aid":)" + std::to_string(e.aid) + R"(,"kind":)";
    detail::put_string(out, to_string(e.kind));
    out += R"(,"a":)";
    detail::put_string(out, e.a);
    out += R"(,"b":)";
    detail::put_string(out, e.b);
    out += R"(,"cause":)";
    detail::put_string(out, e.cause);
    out += R"(,"ids":[)";
    for (std::size_t i = 0; i < e.ids.size(); ++i) {
      out += (i ? "," : "") + std::to_string(e.ids[i]);
    }
    out += R"(],"value":)";
    detail::put_fixed(out, e.value);
    out += "}\n";
  }
  for (const auto & s : r.samples) {
    out += R"({"type":"sample","t":)";
    detail::put_fixed(out, s.t);
    out += R"(,"collision":)";
    out += s.collision ? "true" : "false";
    out += R"(,"danger":)";
    out += s.danger ? "true" : "false";
    out += R"(,"vehicles":[)";
    for (std::size_t i = 0; i < s.vehicles.size(); ++i) {
      const auto & v = s.vehicles[i];
      out += i ? "," : "";
      out += R"({"id":)" + std::to_string(v.id) + R"(,"s":)";
      detail::put_fixed(out, v.s);
      out += R"(,"v":)";
      detail::put_fixed(out, v.v);
      out += R"(,"x":)";
      detail::put_fixed(out, v.x);
      out += R"(,"y":)";
      detail::put_fixed(out, v.y);
      out += R"(,"status":)";
      detail::put_string(out, to_string(v.status));
      out += R"(,"source":)";
      detail::put_string(out, to_string(v.directive.source));
      out += R"(,"intent":)";
      detail::put_string(out, to_string(v.directive.value));
      out += R"(,"risk":)";
      detail::put_fixed(out, v.risk);
      out += R"(,"eb":)";
      out += v.eb ? "true" : "false";
      out += "}";
    }
    out += "]}\n";
  }
  out += R"({"type":"end","timed_out":)";
  out += r.timed_out ? "true" : "false";
  out += R"(,"end_time":)";
  detail::put_fixed(out, r.end_time);
  out += "}\n";
  return out;
}

inline RunRecord from_ndjson(std::string_view text)
{
  RunRecord r;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      nl = text.size();
    }
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "header") {
      r.config = j.at("config").get<ScenarioConfig>();
      for (const auto & v : j.at("vehicles")) {
        r.vehicles.push_back(VehicleSpec{
          v.at("id").get<AgentId>(),
          PathId{detail::parse_approach(v.at("approach").get<std::string>()),
                 detail::parse_turn(v.at("turn").get<std::string>())},
          v.at("start_s").get<double>(), v.at("start_v").get<double>(),
          v.at("offender").get<bool>()});
      }
      have_header = true;
    } else if (type == "event") {
      RunEvent e;
      e.t = j.at("t").get<double>();
      e.aid = j.at("aid").get<AgentId>();
      e.kind = detail::parse_event_kind(j.at("kind").get<std::string>());
      e.a = j.at("a").get<std::string>();
      e.b = j.at("b").get<std::string>();
      e.cause = j.at("cause").get<std::string>();
      e.ids = j.at("ids").get<std::vector<AgentId>>();
      e.value = j.at("value").get<double>();
      r.events.push_back(std::move(e));
    } else if (type == "sample") {
      Sample s;
      s.t = j.at("t").get<double>();
      s.collision = j.at("collision").get<bool>();
      s.danger = j.at("danger").get<bool>();
      for (const auto & v : j.at("vehicles")) {
        VehicleSample vs;
        vs.id = v.at("id").get<AgentId>();
        vs.s = v.at("s").get<double>();
        vs.v = v.at("v").get<double>();
        vs.x = v.at("x").get<double>();
        vs.y = v.at("y").get<double>();
        vs.status = detail::parse_status(v.at("status").get<std::string>());
        vs.directive.source = detail::parse_source(v.at("source").get<std::string>());
        vs.directive.value = v.at("intent").get<std::string>() == "go" ? Intent::go : Intent::stop;
        vs.risk = v.at("risk").get<double>();
        vs.eb = v.at("eb").get<bool>();
        s.vehicles.push_back(std::move(vs));
      }
      r.samples.push_back(std::move(s));
    } else if (type == "end") {
      r.timed_out = j.at("timed_out").get<bool>();
      r.end_time = j.at("end_time").get<double>();
    } else {
      throw ConfigError("unknown record line type '" + type + "'");
    }
  }
  if (!have_header) {
    throw ConfigError("record has no header line");
  }
  return r;
}

inline std::uint64_t fnv1a64(std::string_view data)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t record_hash(const RunRecord & r) { return fnv1a64(to_ndjson(r)); }

// ---------------------------------------------------------------------------
// Metrics

/// Difference of go-model arrival times at the entry line, V_L minus V_H.
/// Start distances are measured back from `center`.
inline double delta_t(
  double d0, double d1, const SpeedProfile & low, const SpeedProfile & high, double entry,
  double center, double v0, double accel)
{
  return travel_time(low, center - d0, v0, entry, accel) -
         travel_time(high, center - d1, v0, entry, accel);
}

inline double delta_t(const ScenarioConfig & cfg, const World & w)
{
  const auto vs = scenario_vehicles(cfg, w);
  return delta_t(
    cfg.d0, cfg.d1, w.models.go(vs[0].path.turn), w.models.go(vs[1].path.turn), w.map.entry_s(),
    w.map.s_at_distance(0.0), w.models.config().cruise, w.models.config().accel);
}

inline const VehicleSpec & spec_of(const RunRecord & r, AgentId id)
{
  for (const auto & v : r.vehicles) {
    if (v.id == id) {
      return v;
    }
  }
  throw ConfigError("record has no vehicle " + std::to_string(id));
}

/// From the first entry into GET to the first EXECUTE after it.
inline std::optional<double> compute_ttg(const RunRecord & r, AgentId id)
{
  std::optional<double> start;
  for (const auto & e : r.events) {
    if (e.kind != EventKind::transition || e.aid != id) {
      continue;
    }
    if (!start && e.b == to_string(Status::get)) {
      start = e.t;
    } else if (start && e.b == to_string(Status::execute)) {
      return e.t - *start;
    }
  }
  return std::nullopt;
}

/// Interpolated time at which the vehicle's front crossed arc length `s_line`.
inline std::optional<double> crossing_time(const RunRecord & r, AgentId id, double s_line)
{
  std::optional<std::pair<double, double>> prev;
  for (const auto & smp : r.samples) {
    for (const auto & v : smp.vehicles) {
      if (v.id != id) {
        continue;
      }
      if (v.s >= s_line) {
        if (!prev || v.s == prev->second) {
          return smp.t;
        }
        const double f = (s_line - prev->second) / (v.s - prev->second);
        return prev->first + f * (smp.t - prev->first);
      }
      prev = std::make_pair(smp.t, v.s);
    }
  }
  return std::nullopt;
}

inline std::optional<double> compute_tlpv(const RunRecord & r, const World & w)
{
  const auto & h = spec_of(r, kHighId);
  const auto entered = crossing_time(r, kHighId, w.map.entry_s());
  if (!entered) {
    return std::nullopt;
  }
  const double ideal = travel_time(
    w.models.go(h.path.turn), h.start_s, h.start_v, w.map.entry_s(), w.models.config().accel);
  return *entered - ideal;
}

inline int eb_count(const RunRecord & r, AgentId id)
{
  return static_cast<int>(std::count_if(r.events.begin(), r.events.end(), [id](const RunEvent & e) {
    return e.kind == EventKind::eb && e.aid == id;
  }));
}

/// At the first emergency break: go-model time until the braking vehicle's
/// front reaches the zone it shares with the other vehicle, floored at zero.
inline std::optional<double> compute_ttcp(const RunRecord & r, const World & w)
{
  const RunEvent * first = nullptr;
  for (const auto & e : r.events) {
    if (e.kind == EventKind::eb && (!first || e.t < first->t)) {
      first = &e;
    }
  }
  if (!first) {
    return std::nullopt;
  }
  const auto & ego = spec_of(r, first->aid);
  const VehicleSample * at = nullptr;
  for (const auto & smp : r.samples) {
    if (smp.t > first->t + 1e-9) {
      break;
    }
    for (const auto & v : smp.vehicles) {
      if (v.id == ego.id) {
        at = &v;
      }
    }
  }
  if (!at) {
    return std::nullopt;
  }
  std::optional<double> best;
  for (const auto & other : r.vehicles) {
    if (other.id == ego.id) {
      continue;
    }
    const auto zone = w.map.conflict_zone(ego.path, other.path);
    if (!zone) {
      continue;
    }
    double t = 0.0;
    if (at->s < zone->lo) {
      t = travel_time(w.models.go(ego.path.turn), at->s, at->v, zone->lo, w.models.config().accel);
    }
    best = best ? std::min(*best, t) : t;
  }
  return best ? std::optional<double>(std::max(0.0, *best)) : std::nullopt;
}

struct RunMetrics
{
  double d1{0.0};
  double delta_t{0.0};
  std::optional<double> ttg_vl{};
  std::optional<double> ttg_vh{};
  std::optional<double> tlpv_vh{};
  std::optional<double> ttcp{};
  int eb_vl{0};
  int eb_vh{0};
  bool collision{false};
  bool danger{false};
  bool timed_out{false};
};

inline RunMetrics compute_metrics(const RunRecord & r, const World & w = default_world())
{
  RunMetrics m;
  m.d1 = r.config.d1;
  m.delta_t = delta_t(r.config, w);
  m.ttg_vl = compute_ttg(r, kLowId);
  m.ttg_vh = compute_ttg(r, kHighId);
  m.tlpv_vh = compute_tlpv(r, w);
  m.ttcp = compute_ttcp(r, w);
  m.eb_vl = eb_count(r, kLowId);
  m.eb_vh = eb_count(r, kHighId);
  for (const auto & s : r.samples) {
    m.collision = m.collision || s.collision;
    m.danger = m.danger || s.danger;
  }
  m.timed_out = r.timed_out;
  return m;
}

struct TrimmedMean
{
  double value{0.0};
  bool plain{false};
};

/// Mean without the single largest and smallest value; a plain mean (flagged)
/// below three values.
inline std::optional<TrimmedMean> trimmed_mean(std::vector<double> values)
{
  if (values.empty()) {
    return std::nullopt;
  }
  if (values.size() < 3) {
    double sum = 0.0;
    for (double v : values) {
      sum += v;
    }
    return TrimmedMean{sum / static_cast<double>(values.size()), true};
  }
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) {
    sum += values[i];
  }
  return TrimmedMean{sum / static_cast<double>(values.size() - 2), false};
}

struct RecallPrecision
{
  std::optional<double> recall{};
  std::optional<double> precision{};
};

/// Per-run detection statistics for one vehicle's emergency breaks.
inline RecallPrecision recall_precision(const std::vector<RunMetrics> & runs, AgentId id)
{
  int danger = 0;
  int eb = 0;
  int both = 0;
  for (const auto & m : runs) {
    const bool had_eb = (id == kLowId ? m.eb_vl : m.eb_vh) > 0;
    danger += m.danger ? 1 : 0;
    eb += had_eb ? 1 : 0;
    both += (m.danger && had_eb) ? 1 : 0;
  }
  RecallPrecision rp;
  if (danger > 0) {
    rp.recall = static_cast<double>(both) / danger;
  }
  if (eb > 0) {
    rp.precision = static_cast<double>(both) / eb;
  }
  return rp;
}

struct MetricRow
{
  double d1{0.0};
  double delta_t{0.0};
  std::optional<double> ttg_vl{};
  std::optional<double> ttg_vh{};
  std::optional<double> tlpv_vh{};
  std::optional<double> eb_vl{};
  std::optional<double> eb_vh{};
  std::optional<double> ttcp{};
  int collisions{0};
  int dangers{0};
  int runs{0};
  int timeouts{0};
};

inline MetricRow aggregate(const std::vector<RunMetrics> & runs)
{
  MetricRow row;
  if (runs.empty()) {
    return row;
  }
  row.d1 = runs.front().d1;
  row.delta_t = runs.front().delta_t;
  auto collect = [&runs](auto getter) {
    std::vector<double> out;
    for (const auto & m : runs) {
      if (auto v = getter(m)) {
        out.push_back(*v);
      }
    }
    auto tm = trimmed_mean(std::move(out));
    return tm ? std::optional<double>(tm->value) : std::nullopt;
  };
  row.ttg_vl = collect([](const RunMetrics & m) { return m.ttg_vl; });
  row.ttg_vh = collect([](const RunMetrics & m) { return m.ttg_vh; });
  row.tlpv_vh = collect([](const RunMetrics & m) { return m.tlpv_vh; });
  row.ttcp = collect([](const RunMetrics & m) { return m.ttcp; });
  row.eb_vl = collect([](const RunMetrics & m) { return std::optional<double>(m.eb_vl); });
  row.eb_vh = collect([](const RunMetrics & m) { return std::optional<double>(m.eb_vh); });
  for (const auto & m : runs) {
    row.collisions += m.collision ? 1 : 0;
    row.dangers += m.danger ? 1 : 0;
    row.timeouts += m.timed_out ? 1 : 0;
    ++row.runs;
  }
  return row;
}

/// Start distances of the high-priority vehicle, 125 m down to 13 m in 4 m steps.
inline std::vector<double> d1_grid()
{
  std::vector<double> out;
  for (int d = 13; d <= 125; d += 4) {
    out.push_back(static_cast<double>(d));
  }
  return out;
}

struct SweepResult
{
  std::vector<MetricRow> rows{};
  std::vector<std::vector<RunMetrics>> runs{};
};

/// Run `seeds` consecutive seeds from `base.seed` at every start distance.
inline SweepResult sweep(
  const ScenarioConfig & base, const std::vector<double> & d1s, std::size_t seeds,
  const World & world = default_world(),
  const std::function<void(const RunRecord &)> & on_record = {})
{
  SweepResult out;
  for (double d1 : d1s) {
    std::vector<RunMetrics> point;
    for (std::size_t i = 0; i < seeds; ++i) {
      ScenarioConfig cfg = base;
      cfg.d1 = d1;
      cfg.seed = base.seed + i;
      const RunRecord rec = run_scenario(cfg, world);
      if (on_record) {
        on_record(rec);
      }
      point.push_back(compute_metrics(rec, world));
    }
    out.rows.push_back(aggregate(point));
    out.runs.push_back(std::move(point));
  }
  return out;
}

struct CaseSummary
{
  Setup setup{Setup::mn};
  std::string case_name{};
  int collision_points{0};
  int danger_points{0};
  int eb_vl{0};
  int eb_vh{0};
  RecallPrecision vl{};
  RecallPrecision vh{};
  int runs{0};
  int timeouts{0};
};

/// Collision and danger counts are grid points with at least one event.
inline CaseSummary summarize(
  Setup setup, std::string case_name, const std::vector<std::vector<RunMetrics>> & per_point)
{
  CaseSummary out;
  out.setup = setup;
  out.case_name = std::move(case_name);
  std::vector<RunMetrics> all;
  for (const auto & point : per_point) {
    bool col = false;
    bool dan = false;
    for (const auto & m : point) {
      col = col || m.collision;
      dan = dan || m.danger;
      out.eb_vl += m.eb_vl;
      out.eb_vh += m.eb_vh;
      out.timeouts += m.timed_out ? 1 : 0;
      ++out.runs;
      all.push_back(m);
    }
    out.collision_points += col ? 1 : 0;
    out.danger_points += dan ? 1 : 0;
  }
  out.vl = recall_precision(all, kLowId);
  out.vh = recall_precision(all, kHighId);
  return out;
}

inline std::string record_filename(const ScenarioConfig & cfg)
{
  std::string name = std::string(to_string(cfg.setup)) + "_" + cfg.test_case.name();
  std::replace_if(name.begin(), name.end(), [](char c) { return c == ':' || c == ',' || c == '+'; }, '-');
  char tail[64];
  std::snprintf(tail, sizeof(tail), "_d%03d_s%llu.ndjson", static_cast<int>(std::lround(cfg.d1)),
                static_cast<unsigned long long>(cfg.seed));
  return name + tail;
}

inline std::string metrics_csv(const std::vector<MetricRow> & rows)
{
  std::string out = "delta_t,ttg_vl,ttg_vh,tlpv_vh,eb_vl,eb_vh,ttcp,collision,danger\n";
  auto cell = [&out](const std::optional<double> & v) {
    if (v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", *v);
      out += buf;
    }
  };
  for (const auto & r : rows) {
    cell(r.delta_t);
    out += ',';
    cell(r.ttg_vl);
    out += ',';
    cell(r.ttg_vh);
    out += ',';
    cell(r.tlpv_vh);
    out += ',';
    cell(r.eb_vl);
    out += ',';
    cell(r.eb_vh);
    out += ',';
    cell(r.ttcp);
    out += ',' + std::to_string(r.collisions) + ',' + std::to_string(r.dangers) + '\n';
  }
  return out;
}

}  // namespace mnsim

#endif  // MNSIM__HARNESS_HPP_

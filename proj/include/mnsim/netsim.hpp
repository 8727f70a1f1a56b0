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

#ifndef MNSIM__NETSIM_HPP_
#define MNSIM__NETSIM_HPP_

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include "mnsim/core.hpp"

namespace mnsim
{

/// Independent deterministic stream for one component of a run.
inline std::mt19937_64 make_stream(std::uint64_t master_seed, std::uint64_t component)
{
  std::seed_seq seq{
    static_cast<std::uint32_t>(master_seed & 0xffffffffu),
    static_cast<std::uint32_t>(master_seed >> 32),
    static_cast<std::uint32_t>(component & 0xffffffffu),
    static_cast<std::uint32_t>(component >> 32)};
  return std::mt19937_64(seq);
}

enum class EventClass : std::uint8_t { timer = 0, delivery = 1, tick = 2 };

struct EventKey
{
  double time{0.0};
  EventClass cls{EventClass::tick};
  AgentId aid{0};
  std::uint64_t seq{0};

  friend bool operator<(const EventKey & a, const EventKey & b)
  {
    return std::tie(a.time, a.cls, a.aid, a.seq) < std::tie(b.time, b.cls, b.aid, b.seq);
  }
};

/// Min-queue over (time, class, agent, sequence). The sequence number is
/// assigned on push, so equal-key ties resolve in insertion order.
template <typename Payload>
class EventQueue
{
public:
  struct Event
  {
    EventKey key;
    Payload payload;
  };

  void push(double time, EventClass cls, AgentId aid, Payload payload)
  {
    heap_.push(Event{EventKey{time, cls, aid, next_seq_++}, std::move(payload)});
  }

  [[nodiscard]] bool empty() const { return heap_.empty(); }
  [[nodiscard]] std::size_t size() const { return heap_.size(); }
  [[nodiscard]] const Event & top() const { return heap_.top(); }

  Event pop()
  {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }

private:
  struct Later
  {
    bool operator()(const Event & a, const Event & b) const { return b.key < a.key; }
  };

  std::priority_queue<Event, std::vector<Event>, Later> heap_{};
  std::uint64_t next_seq_{0};
};

enum class ChannelMode : std::uint8_t { synchronous, asynchronous };

struct ChannelConfig
{
  ChannelMode mode{ChannelMode::synchronous};
  double min_fraction{0.2};
  double late_probability{0.3};
};

struct Delivery
{
  AgentId to{0};
  double time{0.0};
};

class Channel
{
public:
  Channel(ChannelConfig cfg, double t_d) : cfg_(cfg), t_d_(t_d) {}

  [[nodiscard]] double sample_delay(std::mt19937_64 & rng) const
  {
    std::uniform_real_distribution<double> base(cfg_.min_fraction * t_d_, t_d_);
    double d = base(rng);
    if (cfg_.mode == ChannelMode::asynchronous) {
      std::bernoulli_distribution late(cfg_.late_probability);
      while (late(rng)) {
        d += base(rng);
      }
    }
    return d;
  }

  /// Deliveries for one multicast; none when the sender is cut off.
  std::vector<Delivery> send(
    const std::vector<AgentId> & dests, double now, bool sender_blocked, std::mt19937_64 & rng) const
  {
    std::vector<Delivery> out;
    if (sender_blocked) {
      return out;
    }
    out.reserve(dests.size());
    for (AgentId to : dests) {
      out.push_back({to, now + sample_delay(rng)});
    }
    return out;
  }

  /// Same as `send`, but a link never delivers a message before one sent
  /// earlier from the same sender.
  std::vector<Delivery> send_fifo(
    AgentId from, const std::vector<AgentId> & dests, double now, bool sender_blocked,
    std::mt19937_64 & rng)
  {
    auto out = send(dests, now, sender_blocked, rng);
    for (auto & d : out) {
      double & last = last_[{from, d.to}];
      d.time = std::max(d.time, last);
      last = d.time;
    }
    return out;
  }

  [[nodiscard]] double t_d() const { return t_d_; }
  [[nodiscard]] const ChannelConfig & config() const { return cfg_; }

private:
  ChannelConfig cfg_;
  double t_d_;
  std::map<std::pair<AgentId, AgentId>, double> last_{};
};

struct NoiseConfig
{
  double position{0.2};
  double speed{0.2};
  double heading{0.02};
};

inline double wrap_pi(double a)
{
  return std::remainder(a, 2.0 * std::numbers::pi);
}

/// Noisy copy of a state as another party would receive it. Arc length,
/// speed and heading get independent Gaussian errors; the 2-D point moves
/// with the arc-length error along the heading.
inline AgentState observe(
  const AgentState & st, double multiplier, const NoiseConfig & base, std::mt19937_64 & rng)
{
  AgentState o = st;
  auto draw = [&](double sigma) {
    if (!(sigma * multiplier > 0.0)) {
      return 0.0;
    }
    std::normal_distribution<double> n(0.0, sigma * multiplier);
    return n(rng);
  };
  const double ds = draw(base.position);
  o.s += ds;
  o.p.x += ds * std::cos(st.heading);
  o.p.y += ds * std::sin(st.heading);
  o.v = std::max(0.0, st.v + draw(base.speed));
  o.heading = wrap_pi(st.heading + draw(base.heading));
  return o;
}

class StorageService
{
public:
  void put_ar(const Agent & a) { ar_[a.id] = a; }

  [[nodiscard]] std::optional<Agent> get_ar(AgentId id) const
  {
    auto it = ar_.find(id);
    return it == ar_.end() ? std::nullopt : std::optional<Agent>(it->second);
  }

  [[nodiscard]] std::vector<Agent> registry() const
  {
    std::vector<Agent> out;
    out.reserve(ar_.size());
    for (const auto & [id, a] : ar_) {
      out.push_back(a);
    }
    return out;
  }

  void put_mr(AgentId id, const MembershipSet & m) { mr_[id] = m; }

  [[nodiscard]] std::optional<MembershipSet> get_mr(AgentId id) const
  {
    auto it = mr_.find(id);
    return it == mr_.end() ? std::nullopt : std::optional<MembershipSet>(it->second);
  }

private:
  std::map<AgentId, Agent> ar_{};
  std::map<AgentId, MembershipSet> mr_{};
};

struct ComLoss
{
  double d_cl{0.0};
  double t_cl{0.0};
};

struct FaultPlan
{
  double noise_multiplier{1.0};
  std::optional<ComLoss> comloss{};
  bool offender{false};

  void validate() const
  {
    if (noise_multiplier != 1.0 && noise_multiplier != 1.5 && noise_multiplier != 2.0) {
      throw ConfigError("noise multiplier must be 1.0, 1.5 or 2.0");
    }
    if (comloss && (!(comloss->d_cl > 0.0) || !(comloss->t_cl > 0.0))) {
      throw ConfigError("comloss distance and duration must be positive");
    }
  }
};

/// A single outage armed by distance to a reference point.
class ComLossWindow
{
public:
  ComLossWindow() = default;
  explicit ComLossWindow(std::optional<ComLoss> plan) : plan_(plan) {}

  /// Arm on the first call with the vehicle within `d_cl` of the reference point.
  void update(double distance, double now)
  {
    if (plan_ && !start_ && distance <= plan_->d_cl) {
      start_ = now;
    }
  }

  [[nodiscard]] bool active(double now) const
  {
    return start_ && now >= *start_ && now < *start_ + plan_->t_cl;
  }

  [[nodiscard]] std::optional<double> start() const { return start_; }
  [[nodiscard]] std::optional<double> end() const
  {
    return start_ ? std::optional<double>(*start_ + plan_->t_cl) : std::nullopt;
  }

private:
  std::optional<ComLoss> plan_{};
  std::optional<double> start_{};
};

}  // namespace mnsim

#endif  // MNSIM__NETSIM_HPP_

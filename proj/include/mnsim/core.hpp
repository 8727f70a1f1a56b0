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

#ifndef MNSIM__CORE_HPP_
#define MNSIM__CORE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>

namespace mnsim
{

using AgentId = std::uint32_t;

/// Simulation tick in seconds. Every timer expiry lands on this grid.
inline constexpr double kTick = 0.05;

class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct TimingConfig
{
  double T_M{0.5};
  double T_A{0.1};
  double T_D{0.1};
  double T_Man{8.0};

  void validate() const
  {
    for (double v : {T_M, T_A, T_D, T_Man}) {
      if (!std::isfinite(v) || v <= 0.0) {
        throw ConfigError("timing constants must be positive and finite");
      }
    }
    if (!(T_Man > T_D && T_D >= T_A)) {
      throw ConfigError("timing requires T_Man > T_D >= T_A");
    }
    if (!(T_M > T_A)) {
      throw ConfigError("timing requires T_M > T_A");
    }
  }

  /// Longest residual life of an active retry timer.
  [[nodiscard]] double b_retry() const { return std::max(2.0 * T_D, T_A); }

  /// Look-ahead used by the membership service.
  [[nodiscard]] double membership_horizon() const { return 2.0 * T_M + 2.0 * T_D + T_Man; }
};

/// Side of the intersection a vehicle arrives from.
enum class Approach : std::uint8_t { north = 0, east = 1, south = 2, west = 3 };
enum class Turn : std::uint8_t { left = 0, straight = 1, right = 2 };

inline constexpr std::array<Turn, 3> kAllTurns{Turn::left, Turn::straight, Turn::right};
inline constexpr std::array<Approach, 4> kAllApproaches{
  Approach::north, Approach::east, Approach::south, Approach::west};

inline constexpr std::size_t index_of(Turn t) { return static_cast<std::size_t>(t); }
inline constexpr std::size_t index_of(Approach a) { return static_cast<std::size_t>(a); }

inline std::string_view to_string(Turn t)
{
  switch (t) {
    case Turn::left:
      return "left";
    case Turn::straight:
      return "straight";
    case Turn::right:
      return "right";
  }
  return "?";
}

inline std::string_view to_string(Approach a)
{
  switch (a) {
    case Approach::north:
      return "north";
    case Approach::east:
      return "east";
    case Approach::south:
      return "south";
    case Approach::west:
      return "west";
  }
  return "?";
}

struct PathId
{
  Approach approach{Approach::south};
  Turn turn{Turn::straight};

  friend auto operator<=>(const PathId &, const PathId &) = default;
};

struct Vec2
{
  double x{0.0};
  double y{0.0};
};

inline double distance(const Vec2 & a, const Vec2 & b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Timestamped kinematic snapshot. `s` (arc length along `path`) is canonical;
/// `p` and `heading` are derived from the map.
struct AgentState
{
  double ta{0.0};
  PathId path{};
  double s{0.0};
  Vec2 p{};
  double heading{0.0};
  double v{0.0};
  double a{0.0};
};

struct Agent
{
  AgentId id{0};
  AgentState as{};
  bool intent_known{true};
};

struct AgentTag
{
  double ts{0.0};
  AgentId id{0};
  Turn turn{Turn::straight};
};

/// Priority order between concurrent requests: earlier stamp first, then lower id.
inline bool tag_precedes(const AgentTag & t1, const AgentTag & t2)
{
  return std::tie(t1.ts, t1.id) < std::tie(t2.ts, t2.id);
}

struct Membership
{
  double tm{0.0};
  bool mo{false};
  std::set<AgentId> sm{};

  friend bool operator==(const Membership &, const Membership &) = default;
};

/// One membership per possible turn; absent entries were not computed.
using MembershipSet = std::array<std::optional<Membership>, 3>;

enum class MessageType : std::uint8_t { get, grant, deny, release };

inline std::string_view to_string(MessageType t)
{
  switch (t) {
    case MessageType::get:
      return "GET";
    case MessageType::grant:
      return "GRANT";
    case MessageType::deny:
      return "DENY";
    case MessageType::release:
      return "RELEASE";
  }
  return "?";
}

struct MessagePayload
{
  Agent ar{};
  AgentTag tag{};
};

struct Message
{
  AgentId sender{0};
  double t{0.0};
  MessageType type{MessageType::get};
  std::optional<MessagePayload> data{};
};

/// Snap an instant up to the tick grid (with a small tolerance for rounding noise).
inline double quantize_up(double t)
{
  const double k = std::ceil(t / kTick - 1e-9);
  return k * kTick;
}

inline constexpr std::string_view kRetryTimer = "tRETRY";

/// Named one-shot timers. Restarting replaces the pending expiry; the
/// generation counter lets an event loop discard firings of replaced timers.
class TimerSet
{
public:
  struct Timer
  {
    double expiry{0.0};
    std::uint64_t generation{0};
    double started_at{0.0};
  };

  void start(std::string_view name, double delay, double now)
  {
    if (!std::isfinite(delay) || delay <= 0.0) {
      throw ConfigError("timer delay must be positive");
    }
    auto & slot = timers_[std::string(name)];
    slot.expiry = quantize_up(now + delay);
    slot.generation = ++generation_;
    slot.started_at = now;
  }

  void stop(std::string_view name) { timers_.erase(std::string(name)); }

  [[nodiscard]] bool active(std::string_view name) const
  {
    return timers_.find(std::string(name)) != timers_.end();
  }

  [[nodiscard]] std::optional<Timer> get(std::string_view name) const
  {
    auto it = timers_.find(std::string(name));
    if (it == timers_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  /// Consume the timer if `generation` is still the pending one.
  bool fire(std::string_view name, std::uint64_t generation)
  {
    auto it = timers_.find(std::string(name));
    if (it == timers_.end() || it->second.generation != generation) {
      return false;
    }
    timers_.erase(it);
    return true;
  }

  [[nodiscard]] const std::map<std::string, Timer, std::less<>> & all() const { return timers_; }

private:
  std::map<std::string, Timer, std::less<>> timers_{};
  std::uint64_t generation_{0};
};

class SimClock
{
public:
  [[nodiscard]] double now() const { return now_; }

  void advance(double dt)
  {
    if (!(dt >= 0.0)) {
      throw ConfigError("clock cannot move backwards");
    }
    now_ += dt;
  }

  void advance_to(double t)
  {
    if (t < now_) {
      throw ConfigError("clock cannot move backwards");
    }
    now_ = t;
  }

private:
  double now_{0.0};
};

inline double clock_now(const SimClock & sim) { return sim.now(); }

/// Round to nine decimals so that fixed-precision text round-trips exactly.
inline double quantize9(double x)
{
  if (!std::isfinite(x)) {
    return x;
  }
  return std::round(x * 1e9) / 1e9;
}

}  // namespace mnsim

#endif  // MNSIM__CORE_HPP_

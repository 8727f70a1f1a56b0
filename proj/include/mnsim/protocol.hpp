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

#ifndef MNSIM__PROTOCOL_HPP_
#define MNSIM__PROTOCOL_HPP_

#include <algorithm>
#include <concepts>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "mnsim/core.hpp"
#include "mnsim/membership.hpp"

namespace mnsim
{

enum class Status : std::uint8_t { normal, get, tryget, grant, grantget, execute };

inline std::string_view to_string(Status s)
{
  switch (s) {
    case Status::normal:
      return "NORMAL";
    case Status::get:
      return "GET";
    case Status::tryget:
      return "TRYGET";
    case Status::grant:
      return "GRANT";
    case Status::grantget:
      return "GRANTGET";
    case Status::execute:
      return "EXECUTE";
  }
  return "?";
}

struct ProtocolState
{
  AgentId id{0};
  Agent ar{};
  std::optional<MembershipSet> mr{};
  Status status{Status::normal};
  std::optional<AgentTag> tag{};
  std::optional<AgentId> grant_id{};
  std::vector<Message> m{};
  std::set<AgentId> d{};
  std::set<AgentId> r{};
  TimerSet timers{};
  double round_start{0.0};
};

enum class NotifyKind : std::uint8_t { grant, revoke };

struct Notification
{
  NotifyKind kind{NotifyKind::grant};
  std::optional<AgentId> who{};
};

enum class ReleaseCause : std::uint8_t { denied, retry_expired, exited, preempted };
enum class RevokeCause : std::uint8_t { matching_release, own_exit, grantee_left };

struct Outbound
{
  Message msg{};
  std::vector<AgentId> to{};
  std::optional<ReleaseCause> release_cause{};
};

struct Transition
{
  Status from{Status::normal};
  Status to{Status::normal};
  std::string_view cause{};
};

struct OutboundEffect
{
  std::vector<Outbound> messages{};
  std::vector<Notification> notifications{};
  std::vector<RevokeCause> revokes{};
  std::vector<Transition> transitions{};
  std::optional<Agent> stored_ar{};
  std::vector<std::string_view> ignored{};
};

/// What the automaton needs from its surroundings.
template <typename E>
concept ProtocolEnvironment = requires(
  const E & env, AgentId id, const Agent & agent, std::optional<Turn> turn, double now) {
  { env.own_agent(id, now) } -> std::same_as<Agent>;
  { env.fetch_membership(id) } -> std::same_as<std::optional<MembershipSet>>;
  { env.has_left_critical_section(id, id, now) } -> std::same_as<bool>;
  { env.no_priority_violation_dynamic(agent, agent, turn, now) } -> std::same_as<bool>;
};

namespace detail
{

inline void set_status(ProtocolState & s, Status to, std::string_view cause, OutboundEffect & out)
{
  if (s.status != to) {
    out.transitions.push_back({s.status, to, cause});
  }
  s.status = to;
}

inline void multicast(
  ProtocolState & s, MessageType type, double now, std::optional<ReleaseCause> cause,
  OutboundEffect & out)
{
  Message msg{s.id, now, type, std::nullopt};
  if (s.tag) {
    msg.data = MessagePayload{s.ar, *s.tag};
  }
  out.messages.push_back({msg, {s.d.begin(), s.d.end()}, cause});
}

inline void send(
  const ProtocolState & s, MessageType type, double t, AgentId to, OutboundEffect & out)
{
  out.messages.push_back({Message{s.id, t, type, std::nullopt}, {to}, std::nullopt});
}

inline AgentId requester_of(const Message & m)
{
  return m.data ? m.data->ar.id : m.sender;
}

}  // namespace detail

/// Members of the current membership for the running request. Without a
/// valid membership the destinations stand in, so nothing is pruned.
inline std::set<AgentId> current_members(const ProtocolState & s)
{
  if (s.tag && s.mr) {
    const auto & m = (*s.mr)[index_of(s.tag->turn)];
    if (m && m->mo) {
      return m->sm;
    }
  }
  return s.d;
}

inline bool last(const std::set<AgentId> & r, const std::set<AgentId> & d, const std::set<AgentId> & sm)
{
  for (AgentId id : r) {
    if (d.count(id) > 0 && sm.count(id) > 0) {
      return false;
    }
  }
  return true;
}

inline bool last(const ProtocolState & s) { return last(s.r, s.d, current_members(s)); }

inline bool ongoing_request(const ProtocolState & s)
{
  return s.tag.has_value() &&
         (s.status == Status::get || s.status == Status::tryget || s.status == Status::grantget);
}

inline bool my_priority(const ProtocolState & s, const Message & m)
{
  if (!ongoing_request(s) || !m.data) {
    return false;
  }
  return tag_precedes(*s.tag, m.data->tag);
}

enum class RoundOutcome : std::uint8_t { granted, denied, pending };

inline RoundOutcome classify_round(const ProtocolState & s, double now, const TimingConfig & timing)
{
  for (const auto & m : s.m) {
    if (m.type == MessageType::deny) {
      return RoundOutcome::denied;
    }
  }
  if (last(s) || now >= s.round_start + 2.0 * timing.T_D) {
    return RoundOutcome::granted;
  }
  return RoundOutcome::pending;
}

template <ProtocolEnvironment Env>
void try_maneuver(
  ProtocolState & s, Turn turn, const Env & env, const TimingConfig & timing, double now,
  OutboundEffect & out)
{
  if (s.status == Status::normal || s.status == Status::grant) {
    s.tag = AgentTag{now, s.id, turn};
  }
  if (s.status == Status::normal || s.status == Status::tryget) {
    const double ts = now;
    detail::set_status(s, Status::tryget, "try", out);
    s.ar = env.own_agent(s.id, ts);
    s.mr = env.fetch_membership(s.id);
    const std::optional<Membership> mr =
      s.mr ? (*s.mr)[index_of(turn)] : std::optional<Membership>{};
    if (mr && ts < mr->tm + 2.0 * timing.T_M && mr->mo) {
      s.m.clear();
      s.d = mr->sm;
      s.r = mr->sm;
      s.round_start = ts;
      detail::set_status(s, Status::get, "request", out);
      detail::multicast(s, MessageType::get, ts, std::nullopt, out);
      s.timers.start(kRetryTimer, 2.0 * timing.T_D, now);
    } else {
      s.timers.start(kRetryTimer, timing.T_A, now);
    }
  } else if (s.status == Status::grant) {
    detail::set_status(s, Status::grantget, "defer", out);
  }
}

template <ProtocolEnvironment Env>
void step_periodic(
  ProtocolState & s, const Env & env, const TimingConfig & timing, double now, OutboundEffect & out)
{
  s.ar = env.own_agent(s.id, now);
  out.stored_ar = s.ar;
  s.mr = env.fetch_membership(s.id);
  const auto members = current_members(s);
  std::erase_if(s.m, [&](const Message & m) {
    return s.d.count(m.sender) == 0 || members.count(m.sender) == 0;
  });

  if (s.status == Status::get && last(s.r, s.d, members)) {
    s.timers.stop(kRetryTimer);
    const bool denied = std::any_of(
      s.m.begin(), s.m.end(), [](const Message & m) { return m.type == MessageType::deny; });
    if (!denied) {
      detail::set_status(s, Status::execute, "fully granted", out);
      out.notifications.push_back({NotifyKind::grant, std::nullopt});
    } else {
      detail::set_status(s, Status::tryget, "fully denied", out);
      detail::multicast(s, MessageType::release, now, ReleaseCause::denied, out);
      s.timers.start(kRetryTimer, timing.T_A, now);
    }
  }
  if (s.status == Status::execute && env.has_left_critical_section(s.id, s.id, now)) {
    detail::multicast(s, MessageType::release, now, ReleaseCause::exited, out);
    detail::set_status(s, Status::normal, "left", out);
    out.notifications.push_back({NotifyKind::revoke, std::nullopt});
    out.revokes.push_back(RevokeCause::own_exit);
  }
  if ((s.status == Status::grant || s.status == Status::grantget) && s.grant_id &&
      env.has_left_critical_section(s.id, *s.grant_id, now))
  {
    out.notifications.push_back({NotifyKind::revoke, std::nullopt});
    out.revokes.push_back(RevokeCause::grantee_left);
    s.grant_id.reset();
    if (s.status == Status::grantget) {
      detail::set_status(s, Status::tryget, "grantee left", out);
      try_maneuver(s, s.tag->turn, env, timing, now, out);
    } else {
      detail::set_status(s, Status::normal, "grantee left", out);
    }
  }
}

template <ProtocolEnvironment Env>
void on_retry_expired(
  ProtocolState & s, const Env & env, const TimingConfig & timing, double now, OutboundEffect & out)
{
  if (s.status == Status::get) {
    detail::set_status(s, Status::tryget, "retry expired", out);
    detail::multicast(s, MessageType::release, now, ReleaseCause::retry_expired, out);
    s.timers.start(kRetryTimer, 2.0 * timing.T_D, now);
  }
  if (s.tag) {
    try_maneuver(s, s.tag->turn, env, timing, now, out);
  }
}

template <ProtocolEnvironment Env>
void on_message(
  ProtocolState & s, const Message & m, double tr, const Env & env, const TimingConfig & timing,
  OutboundEffect & out)
{
  if (!(tr - m.t <= timing.T_D)) {
    return;
  }
  if ((m.type == MessageType::grant || m.type == MessageType::deny) && s.status == Status::get) {
    s.m.push_back(m);
    s.r.erase(m.sender);
    return;
  }
  if (m.type == MessageType::get) {
    if (!m.data) {
      out.ignored.push_back("GET without payload");
      return;
    }
    const AgentId requester = m.data->ar.id;
    const bool predicate =
      env.no_priority_violation_dynamic(env.own_agent(s.id, tr), m.data->ar, m.data->tag.turn, tr);
    const bool case_i = s.status == Status::normal || s.status == Status::tryget;
    const bool case_ii = (s.status == Status::grant || s.status == Status::grantget) &&
                         s.grant_id == requester;
    const bool case_iii = s.status == Status::get && !my_priority(s, m);
    if (predicate && (case_i || case_ii || case_iii)) {
      if (s.status == Status::normal) {
        detail::set_status(s, Status::grant, "granted", out);
        s.grant_id = requester;
      } else if (s.status == Status::get || s.status == Status::tryget) {
        s.timers.stop(kRetryTimer);
        if (s.status == Status::get) {
          detail::multicast(s, MessageType::release, tr, ReleaseCause::preempted, out);
        }
        detail::set_status(s, Status::grantget, "granted while requesting", out);
        s.grant_id = requester;
      }
      out.notifications.push_back({NotifyKind::grant, requester});
      detail::send(s, MessageType::grant, tr, requester, out);
    } else {
      detail::send(s, MessageType::deny, tr, requester, out);
    }
    return;
  }
  if (m.type == MessageType::release) {
    const AgentId from = detail::requester_of(m);
    if ((s.status == Status::grant || s.status == Status::grantget) && s.grant_id == from) {
      out.notifications.push_back({NotifyKind::revoke, std::nullopt});
      out.revokes.push_back(RevokeCause::matching_release);
      s.grant_id.reset();
      if (s.status == Status::grant) {
        detail::set_status(s, Status::normal, "released", out);
      } else {
        detail::set_status(s, Status::tryget, "released", out);
        try_maneuver(s, s.tag->turn, env, timing, tr, out);
      }
    }
  }
}

}  // namespace mnsim

#endif  // MNSIM__PROTOCOL_HPP_

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


#include "doctest.h"
#include "protocol_checks.hpp"

using namespace mnsim;
using namespace mnsim::testing;

namespace
{

const TimingConfig kTiming{};

ProtocolState requesting(AgentId id, std::set<AgentId> d)
{
  ProtocolState s = fresh_state(id);
  s.status = Status::get;
  s.tag = AgentTag{1.0, id, Turn::left};
  s.d = d;
  s.r = d;
  s.timers.start(kRetryTimer, 2.0 * kTiming.T_D, 1.0);
  return s;
}

}  // namespace

TEST_CASE("last is an emptiness test on the triple intersection")
{
  CHECK(last({2}, {2, 3}, {3}));
  CHECK_FALSE(last({2}, {2}, {2}));
  CHECK(last({}, {2, 3}, {2, 3}));
}

TEST_CASE("my_priority examples")
{
  ProtocolState s = fresh_state(5);
  s.status = Status::get;
  s.tag = AgentTag{1.0, 5, Turn::left};
  CHECK(my_priority(s, get_msg(2, 1.5, 1.5)));
  CHECK_FALSE(my_priority(s, get_msg(2, 1.0, 1.0)));
  ProtocolState idle = fresh_state(5);
  CHECK_FALSE(my_priority(idle, get_msg(2, 1.5, 1.5)));
}

TEST_CASE("idle periodic step only stores the registry")
{
  ProtocolState s = fresh_state(1);
  FakeEnv env;
  OutboundEffect out;
  step_periodic(s, env, kTiming, 1.0, out);
  CHECK(s.status == Status::normal);
  CHECK(out.messages.empty());
  CHECK(out.notifications.empty());
  CHECK(out.stored_ar.has_value());
}

TEST_CASE("request with a fresh membership sends GET to the members")
{
  ProtocolState s = fresh_state(1);
  FakeEnv env;
  env.members[1] = {2};
  env.now = 3.0;
  OutboundEffect out;
  try_maneuver(s, Turn::left, env, kTiming, 3.0, out);
  CHECK(s.status == Status::get);
  const auto gets = sent(out, MessageType::get);
  REQUIRE(gets.size() == 1);
  CHECK(gets[0]->to == std::vector<AgentId>{2});
  CHECK(s.timers.get(kRetryTimer)->expiry == doctest::Approx(3.2));
  CHECK(s.tag->ts == 3.0);
}

TEST_CASE("empty membership goes straight to EXECUTE on the next loop")
{
  ProtocolState s = fresh_state(1);
  FakeEnv env;
  env.now = 3.0;
  OutboundEffect out;
  try_maneuver(s, Turn::straight, env, kTiming, 3.0, out);
  CHECK(s.status == Status::get);
  CHECK(s.d.empty());
  OutboundEffect out2;
  env.now = 3.1;
  step_periodic(s, env, kTiming, 3.1, out2);
  CHECK(s.status == Status::execute);
  REQUIRE(out2.notifications.size() == 1);
  CHECK(out2.notifications[0].kind == NotifyKind::grant);
}

TEST_CASE("stale or invalid membership defers by one loop period")
{
  FakeEnv env;
  env.members[1] = {2};
  env.now = 3.0;
  env.tm_lag = 1.0;
  ProtocolState s = fresh_state(1);
  OutboundEffect out;
  try_maneuver(s, Turn::left, env, kTiming, 3.0, out);
  CHECK(s.status == Status::tryget);
  CHECK(out.messages.empty());
  CHECK(s.timers.get(kRetryTimer)->expiry == doctest::Approx(3.1));

  env.tm_lag = 0.0;
  env.mo = false;
  ProtocolState s2 = fresh_state(1);
  OutboundEffect out2;
  try_maneuver(s2, Turn::left, env, kTiming, 3.0, out2);
  CHECK(s2.status == Status::tryget);

  env.no_membership = {1};
  ProtocolState s3 = fresh_state(1);
  OutboundEffect out3;
  try_maneuver(s3, Turn::left, env, kTiming, 3.0, out3);
  CHECK(s3.status == Status::tryget);
  CHECK(s3.timers.active(kRetryTimer));
}

TEST_CASE("request while granting defers without sending")
{
  ProtocolState s = fresh_state(1);
  s.status = Status::grant;
  s.grant_id = 2;
  FakeEnv env;
  OutboundEffect out;
  try_maneuver(s, Turn::left, env, kTiming, 2.0, out);
  CHECK(s.status == Status::grantget);
  CHECK(out.messages.empty());
}

TEST_CASE("try_maneuver mid-flight is a no-op")
{
  FakeEnv env;
  for (Status st : {Status::get, Status::execute, Status::grantget}) {
    ProtocolState s = fresh_state(1);
    s.status = st;
    s.tag = AgentTag{1.0, 1, Turn::left};
    OutboundEffect out;
    try_maneuver(s, Turn::left, env, kTiming, 2.0, out);
    CHECK(s.status == st);
    CHECK(out.messages.empty());
  }
}

TEST_CASE("all grants lead to EXECUTE")
{
  FakeEnv env;
  env.members[1] = {2, 3};
  ProtocolState s = requesting(1, {2, 3});
  OutboundEffect o1;
  on_message(s, reply_msg(2, MessageType::grant, 1.05), 1.08, env, kTiming, o1);
  on_message(s, reply_msg(3, MessageType::grant, 1.05), 1.09, env, kTiming, o1);
  CHECK(s.r.empty());
  OutboundEffect o2;
  step_periodic(s, env, kTiming, 1.1, o2);
  CHECK(s.status == Status::execute);
  CHECK_FALSE(s.timers.active(kRetryTimer));
}

TEST_CASE("one DENY means release and retry after a loop period")
{
  FakeEnv env;
  env.members[1] = {2, 3};
  ProtocolState s = requesting(1, {2, 3});
  OutboundEffect o1;
  on_message(s, reply_msg(2, MessageType::grant, 1.05), 1.08, env, kTiming, o1);
  on_message(s, reply_msg(3, MessageType::deny, 1.05), 1.09, env, kTiming, o1);
  OutboundEffect o2;
  step_periodic(s, env, kTiming, 1.1, o2);
  CHECK(s.status == Status::tryget);
  const auto rel = sent(o2, MessageType::release);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0]->release_cause == ReleaseCause::denied);
  CHECK(s.timers.get(kRetryTimer)->expiry == doctest::Approx(1.2));
}

TEST_CASE("replies from agents that left the membership are pruned")
{
  FakeEnv env;
  env.members[1] = {2};
  ProtocolState s = requesting(1, {2, 3});
  OutboundEffect o1;
  on_message(s, reply_msg(3, MessageType::deny, 1.05), 1.06, env, kTiming, o1);
  on_message(s, reply_msg(2, MessageType::grant, 1.05), 1.07, env, kTiming, o1);
  OutboundEffect o2;
  step_periodic(s, env, kTiming, 1.1, o2);
  CHECK(s.status == Status::execute);
}

TEST_CASE("leaving after EXECUTE releases and revokes")
{
  FakeEnv env;
  ProtocolState s = fresh_state(1);
  s.status = Status::execute;
  s.tag = AgentTag{1.0, 1, Turn::left};
  s.d = {2};
  env.left = {1};
  OutboundEffect out;
  step_periodic(s, env, kTiming, 5.0, out);
  CHECK(s.status == Status::normal);
  REQUIRE(sent(out, MessageType::release).size() == 1);
  CHECK(has_revoke(out));
  CHECK(out.revokes == std::vector{RevokeCause::own_exit});
}

TEST_CASE("grantee leaving frees the grantor")
{
  FakeEnv env;
  env.left = {2};
  ProtocolState s = fresh_state(1);
  s.status = Status::grant;
  s.grant_id = 2;
  OutboundEffect out;
  step_periodic(s, env, kTiming, 5.0, out);
  CHECK(s.status == Status::normal);
  CHECK_FALSE(s.grant_id);
  CHECK(has_revoke(out));

  ProtocolState g = fresh_state(1);
  g.status = Status::grantget;
  g.grant_id = 2;
  g.tag = AgentTag{4.0, 1, Turn::left};
  OutboundEffect out2;
  step_periodic(g, env, kTiming, 5.0, out2);
  CHECK((g.status == Status::get || g.status == Status::tryget));
  CHECK(g.timers.active(kRetryTimer));
}

TEST_CASE("retry expiry in GET releases and asks again")
{
  FakeEnv env;
  env.members[1] = {2};
  env.now = 1.2;
  ProtocolState s = requesting(1, {2});
  OutboundEffect out;
  on_retry_expired(s, env, kTiming, 1.2, out);
  const auto rel = sent(out, MessageType::release);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0]->release_cause == ReleaseCause::retry_expired);
  CHECK(s.status == Status::get);
  CHECK(sent(out, MessageType::get).size() == 1);
}

TEST_CASE("retry expiry while deferred goes straight to try_maneuver")
{
  FakeEnv env;
  env.members[1] = {2};
  env.now = 1.2;
  ProtocolState s = fresh_state(1);
  s.status = Status::tryget;
  s.tag = AgentTag{1.0, 1, Turn::left};
  OutboundEffect out;
  on_retry_expired(s, env, kTiming, 1.2, out);
  CHECK(sent(out, MessageType::release).empty());
  CHECK(s.status == Status::get);
}

TEST_CASE("stale retry firing after completion does nothing")
{
  FakeEnv env;
  ProtocolState s = fresh_state(1);
  OutboundEffect out;
  on_retry_expired(s, env, kTiming, 1.2, out);
  CHECK(s.status == Status::normal);
  CHECK(out.messages.empty());
}

TEST_CASE("GET handling examples")
{
  FakeEnv env;
  ProtocolState s = fresh_state(1);
  OutboundEffect out;
  on_message(s, get_msg(2, 2.0, 2.0), 2.05, env, kTiming, out);
  CHECK(s.status == Status::grant);
  CHECK(sent(out, MessageType::grant).size() == 1);

  ProtocolState r = requesting(1, {2});
  r.tag->ts = 3.0;
  OutboundEffect out2;
  on_message(r, get_msg(2, 2.0, 3.1), 3.15, env, kTiming, out2);
  CHECK(r.status == Status::grantget);
  CHECK(sent(out2, MessageType::release).size() == 1);
  CHECK(sent(out2, MessageType::grant).size() == 1);
}

TEST_CASE("late messages are not processed")
{
  FakeEnv env;
  ProtocolState s = fresh_state(1);
  OutboundEffect out;
  on_message(s, get_msg(2, 2.0, 2.0), 2.0 + kTiming.T_D + 0.01, env, kTiming, out);
  CHECK(s.status == Status::normal);
  CHECK(out.messages.empty());
}

TEST_CASE("matching RELEASE ends a grant and others are ignored")
{
  FakeEnv env;
  ProtocolState s = fresh_state(1);
  s.status = Status::grant;
  s.grant_id = 2;
  OutboundEffect o1;
  on_message(s, release_msg(3, 1.0, 2.0), 2.0, env, kTiming, o1);
  CHECK(s.status == Status::grant);
  CHECK_FALSE(has_revoke(o1));
  OutboundEffect o2;
  on_message(s, release_msg(2, 1.0, 2.0), 2.0, env, kTiming, o2);
  CHECK(s.status == Status::normal);
  CHECK(has_revoke(o2));
}

TEST_CASE("round classification")
{
  ProtocolState s = requesting(1, {2, 3});
  s.round_start = 1.0;
  CHECK(classify_round(s, 1.05, kTiming) == RoundOutcome::pending);
  s.m.push_back(reply_msg(2, MessageType::grant, 1.05));
  s.r.erase(2);
  s.m.push_back(reply_msg(3, MessageType::grant, 1.05));
  s.r.erase(3);
  CHECK(classify_round(s, 1.1, kTiming) == RoundOutcome::granted);
  s.m.back().type = MessageType::deny;
  CHECK(classify_round(s, 1.1, kTiming) == RoundOutcome::denied);
}

TEST_CASE("granting decision matches the rule for every configuration")
{
  const auto tally = enumerate_granting();
  CHECK(tally.cases == 108);
  for (const auto & f : tally.failures) {
    INFO(f);
  }
  CHECK(tally.mismatches == 0);
}

TEST_CASE("bounded interleavings never release or revoke out of turn")
{
  const auto tally = explore_releasing(8, 2'000'000);
  CHECK_FALSE(tally.truncated);
  CHECK(tally.releases > 0);
  CHECK(tally.revokes > 0);
  for (const auto & f : tally.failures) {
    INFO(f);
  }
  CHECK(tally.counterexamples == 0);
}

TEST_CASE("random traces keep the retry timer bounded")
{
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto t = random_timer_trace(seed, 4000);
    CHECK(t.tryget_without_timer == 0);
    CHECK(t.overlong == 0);
    CHECK(t.timer_lifetimes > 50);
    CHECK(t.executes > 0);
  }
}

TEST_CASE("a lone requester reaches EXECUTE soon after the lane empties")
{
  const double bound = kTiming.b_retry() + 2.0 * kTiming.T_A + 1e-9;
  for (Status st : {Status::get, Status::tryget, Status::grantget}) {
    for (int phase = 0; phase < 2; ++phase) {
      for (double age : {0.0, 0.05, 0.1}) {
        const auto r = progress_from(st, phase, age);
        CHECK(r.reached);
        CHECK(r.latency <= bound);
      }
    }
  }
}

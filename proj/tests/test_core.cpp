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


#include <random>

#include "doctest.h"
#include "mnsim/core.hpp"

using namespace mnsim;

TEST_CASE("clock starts at zero and advances additively")
{
  SimClock c;
  CHECK(clock_now(c) == 0.0);
  c.advance(0.5);
  CHECK(clock_now(c) == doctest::Approx(0.5));
  CHECK(clock_now(c) == clock_now(c));
  CHECK_THROWS_AS(c.advance(-0.1), ConfigError);
  CHECK_THROWS_AS(c.advance_to(0.2), ConfigError);
}

TEST_CASE("timer fires at start plus delay")
{
  TimingConfig t;
  TimerSet ts;
  ts.start(kRetryTimer, 2.0 * t.T_D, 1.0);
  REQUIRE(ts.get(kRetryTimer));
  CHECK(ts.get(kRetryTimer)->expiry == doctest::Approx(1.2));
}

TEST_CASE("stopped timer never fires")
{
  TimerSet ts;
  ts.start(kRetryTimer, 0.2, 0.0);
  const auto gen = ts.get(kRetryTimer)->generation;
  ts.stop(kRetryTimer);
  CHECK_FALSE(ts.active(kRetryTimer));
  CHECK_FALSE(ts.fire(kRetryTimer, gen));
}

TEST_CASE("restart replaces the pending expiry")
{
  TimingConfig t;
  TimerSet ts;
  ts.start(kRetryTimer, t.T_A, 1.0);
  const auto old_gen = ts.get(kRetryTimer)->generation;
  ts.start(kRetryTimer, t.T_A, 1.1);
  CHECK(ts.all().size() == 1);
  CHECK(ts.get(kRetryTimer)->expiry == doctest::Approx(1.2));
  CHECK_FALSE(ts.fire(kRetryTimer, old_gen));
  CHECK(ts.fire(kRetryTimer, ts.get(kRetryTimer)->generation));
  CHECK_FALSE(ts.active(kRetryTimer));
}

TEST_CASE("nonpositive timer delay is rejected")
{
  TimerSet ts;
  CHECK_THROWS_AS(ts.start(kRetryTimer, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(ts.start(kRetryTimer, -1.0, 1.0), ConfigError);
}

TEST_CASE("tag order examples")
{
  CHECK(tag_precedes({1.0, 7, Turn::left}, {2.0, 1, Turn::left}));
  CHECK(tag_precedes({1.0, 1, Turn::left}, {1.0, 2, Turn::left}));
  const AgentTag t{1.0, 3, Turn::right};
  CHECK_FALSE(tag_precedes(t, t));
}

TEST_CASE("tag order is a strict total order")
{
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> ts(0, 4);
  std::uniform_int_distribution<AgentId> id(1, 4);
  std::vector<AgentTag> tags;
  for (int i = 0; i < 60; ++i) {
    tags.push_back({0.5 * ts(rng), id(rng), Turn::straight});
  }
  for (const auto & a : tags) {
    CHECK_FALSE(tag_precedes(a, a));
    for (const auto & b : tags) {
      const bool same = a.ts == b.ts && a.id == b.id;
      const int n = int(tag_precedes(a, b)) + int(tag_precedes(b, a)) + int(same);
      CHECK(n == 1);
      for (const auto & c : tags) {
        if (tag_precedes(a, b) && tag_precedes(b, c)) {
          CHECK(tag_precedes(a, c));
        }
      }
    }
  }
}

TEST_CASE("random start and stop sequences keep one expiry per name")
{
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> op(0, 2);
  TimerSet ts;
  double now = 0.0;
  for (int i = 0; i < 2000; ++i) {
    now += kTick;
    switch (op(rng)) {
      case 0:
        ts.start(kRetryTimer, 0.2, now);
        break;
      case 1:
        ts.start("other", 0.1, now);
        break;
      default:
        ts.stop(kRetryTimer);
    }
    CHECK(ts.all().size() <= 2);
  }
}

TEST_CASE("timing defaults and validation")
{
  TimingConfig t;
  CHECK_NOTHROW(t.validate());
  CHECK(t.b_retry() == doctest::Approx(0.2));
  TimingConfig bad = t;
  bad.T_D = 0.05;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.T_Man = 0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.T_M = 0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.T_A = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("quantize_up snaps to the tick grid")
{
  CHECK(quantize_up(1.2) == doctest::Approx(1.2));
  CHECK(quantize_up(1.21) == doctest::Approx(1.25));
  CHECK(quantize_up(1.2000000000001) == doctest::Approx(1.2));
  CHECK(quantize9(0.1234567891234) == doctest::Approx(0.123456789));
}

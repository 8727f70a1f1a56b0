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


#include <cmath>
#include <random>

#include "doctest.h"
#include "mnsim/world.hpp"

using namespace mnsim;

namespace
{

const IntersectionMap & test_map()
{
  static const IntersectionMap m;
  return m;
}

const SpeedModels & test_models()
{
  static const SpeedModels sm(test_map());
  return sm;
}

AgentState at(PathId path, double s, double v)
{
  AgentState st;
  st.path = path;
  st.s = s;
  st.v = v;
  return test_map().with_pose(st);
}

constexpr PathId kNorthStraight{Approach::north, Turn::straight};
constexpr PathId kSouthLeft{Approach::south, Turn::left};

}  // namespace

TEST_CASE("arbitration order")
{
  using I = Intent;
  using S = DirectiveSource;
  CHECK(arbitrate_intention(true, I::go, I::go, I::go) == IntentionDirective{S::eb, I::stop});
  CHECK(arbitrate_intention(false, I::stop, I::go, I::go) == IntentionDirective{S::mn, I::stop});
  CHECK(arbitrate_intention(false, I::go, I::stop, I::stop) == IntentionDirective{S::mn, I::go});
  CHECK(arbitrate_intention(false, {}, I::stop, I::go) == IntentionDirective{S::hmm, I::stop});
  CHECK(arbitrate_intention(false, {}, {}, I::go) == IntentionDirective{S::rules, I::go});
  CHECK(to_string(S::eb) == "EB");
}

TEST_CASE("cruise keeps speed")
{
  const auto n = step_vehicle(at(kNorthStraight, 100.0, 10.0), {}, 0.05, test_models(), test_map());
  CHECK(n.v == doctest::Approx(10.0));
  CHECK(n.s == doctest::Approx(100.5));
  CHECK(n.ta == doctest::Approx(0.05));
  CHECK(n.a == doctest::Approx(0.0));
}

TEST_CASE("stop directive rests exactly on the stop line")
{
  const IntentionDirective stop{DirectiveSource::mn, Intent::stop};
  for (double s0 : {120.0, 150.0, 170.0}) {
    AgentState st = at(kSouthLeft, s0, 10.0);
    for (int i = 0; i < 2000 && st.v > 0.0; ++i) {
      st = step_vehicle(st, stop, 0.05, test_models(), test_map());
      CHECK(st.s <= test_models().stop_line());
    }
    CHECK(st.v == 0.0);
    CHECK(st.s == test_models().stop_line());
  }
}

TEST_CASE("go from rest follows the acceleration bound")
{
  const double dt = 0.05;
  const double a = test_models().config().accel;
  AgentState st = at(kNorthStraight, test_models().stop_line(), 0.0);
  double v_ref = 0.0;
  double s_ref = st.s;
  for (int i = 0; i < 100; ++i) {
    st = step_vehicle(st, {}, dt, test_models(), test_map());
    const double v_next = std::min(10.0, v_ref + a * dt);
    s_ref += 0.5 * (v_ref + v_next) * dt;
    v_ref = v_next;
    CHECK(st.v == doctest::Approx(v_ref).epsilon(1e-9));
    CHECK(st.s == doctest::Approx(s_ref).epsilon(1e-9));
  }
  CHECK(st.v == doctest::Approx(10.0));
}

TEST_CASE("emergency break stops even past the line")
{
  const IntentionDirective eb{DirectiveSource::eb, Intent::stop};
  const double start = test_models().stop_line() + 3.0;
  AgentState st = at(kNorthStraight, start, 10.0);
  int steps = 0;
  while (st.v > 0.0 && steps < 100) {
    const double v = st.v;
    st = step_vehicle(st, eb, 0.05, test_models(), test_map());
    CHECK(v - st.v == doctest::Approx(std::min(v, 0.4)));
    ++steps;
  }
  CHECK(steps == 25);
  CHECK(st.s == doctest::Approx(start + 10.0 * 10.0 / (2.0 * 8.0)));
}

TEST_CASE("a non-emergency stop past the line is ignored")
{
  const IntentionDirective stop{DirectiveSource::hmm, Intent::stop};
  const auto n = step_vehicle(
    at(kNorthStraight, test_models().stop_line() + 2.0, 10.0), stop, 0.05, test_models(), test_map());
  CHECK(n.v == doctest::Approx(10.0));
}

TEST_CASE("motion stays within bounds under random directives")
{
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, 3);
  const auto & cfg = test_models().config();
  for (int run = 0; run < 50; ++run) {
    AgentState st = at(run % 2 ? kSouthLeft : kNorthStraight, 120.0 + run, 10.0);
    for (int i = 0; i < 400; ++i) {
      const int k = pick(rng);
      const IntentionDirective d{
        k == 0 ? DirectiveSource::eb : DirectiveSource::hmm, k == 1 ? Intent::go : Intent::stop};
      const auto n = step_vehicle(st, d, 0.05, test_models(), test_map());
      CHECK(n.v >= 0.0);
      CHECK(n.s >= st.s);
      CHECK(n.a <= cfg.accel + 1e-9);
      CHECK(n.a >= -cfg.emergency_brake - 1e-9);
      st = n;
    }
  }
}

TEST_CASE("step rejects nonpositive dt")
{
  CHECK_THROWS_AS(step_vehicle(at(kNorthStraight, 0.0, 0.0), {}, 0.0, test_models(), test_map()), ConfigError);
}

TEST_CASE("danger threshold")
{
  const auto a = at(kNorthStraight, 150.0, 0.0);
  auto b = a;
  b.p.y -= 3.9;
  CHECK(detect_danger(a, b, test_map()));
  b.p.y = a.p.y - 4.1;
  CHECK_FALSE(detect_danger(a, b, test_map()));
}

TEST_CASE("collision needs both bodies in the shared zone")
{
  const auto za = *test_map().conflict_zone(kNorthStraight, kSouthLeft);
  const auto zb = *test_map().conflict_zone(kSouthLeft, kNorthStraight);
  const double mid_a = 0.5 * (za.lo + za.hi) + 2.0;
  const double mid_b = 0.5 * (zb.lo + zb.hi) + 2.0;
  CHECK(detect_collision(at(kNorthStraight, mid_a, 0.0), at(kSouthLeft, mid_b, 0.0), test_map()));
  CHECK_FALSE(detect_collision(at(kNorthStraight, za.lo - 1.0, 0.0), at(kSouthLeft, mid_b, 0.0), test_map()));
  CHECK_FALSE(detect_collision(
    at(kNorthStraight, mid_a, 0.0), at(kSouthLeft, zb.hi + 4.5, 0.0), test_map()));
  // parallel approaches never share a zone
  CHECK_FALSE(detect_collision(
    at(kNorthStraight, 100.0, 0.0), at(PathId{Approach::south, Turn::straight}, 100.0, 0.0),
    test_map()));
}

TEST_CASE("collision implies danger on sampled crossings")
{
  std::mt19937_64 rng(5);
  const auto za = *test_map().conflict_zone(kNorthStraight, kSouthLeft);
  const auto zb = *test_map().conflict_zone(kSouthLeft, kNorthStraight);
  std::uniform_real_distribution<double> ua(za.lo - 6.0, za.hi + 6.0);
  std::uniform_real_distribution<double> ub(zb.lo - 6.0, zb.hi + 6.0);
  int collisions = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto a = at(kNorthStraight, ua(rng), 0.0);
    const auto b = at(kSouthLeft, ub(rng), 0.0);
    if (detect_collision(a, b, test_map())) {
      ++collisions;
      CHECK(detect_danger(a, b, test_map()));
    }
  }
  CHECK(collisions > 0);
}

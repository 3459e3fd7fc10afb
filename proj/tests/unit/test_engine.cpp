#include <doctest.h>

#include <map>

#include "gimbal/engine.hpp"

using namespace gimbal;

namespace {

EngineParams slow_params() {
  EngineParams p;
  p.cost.prefill_rate = 1000.0;
  p.cost.decode_time_per_token = 0.025;
  p.sjf_enabled = true;
  return p;
}

Request make_request(std::int64_t id, std::int64_t prefill, std::int64_t output,
                     const std::string& user = "", double arrival = 0.0) {
  Request r;
  r.id = id;
  r.prefill_tokens = prefill;
  r.output_tokens = output;
  r.user_id = user;
  r.arrival_time = arrival;
  return r;
}

struct Timeline {
  std::map<std::int64_t, double> first_token;
  std::map<std::int64_t, double> completion;
  std::map<std::int64_t, double> dispatch;
  std::map<std::int64_t, std::int64_t> uncached;
  void absorb(const std::vector<EngineEvent>& events) {
    for (const auto& ev : events) {
      if (ev.kind == EngineEvent::Kind::kFirstToken) {
        first_token[ev.request_id] = ev.time;
        dispatch[ev.request_id] = ev.dispatch_time;
        uncached[ev.request_id] = ev.uncached_prefill;
      } else {
        completion[ev.request_id] = ev.time;
      }
    }
  }
};

}  // namespace

TEST_CASE("admit queues without executing") {
  Engine e(slow_params());
  e.admit(make_request(1, 100, 5), 3.0);
  CHECK(e.waiting_size() == 1);
  CHECK(e.running_size() == 0);
  CHECK(e.kv_used() == 0.0);
}

TEST_CASE("admit rejects duplicates") {
  Engine e(slow_params());
  e.admit(make_request(1, 100, 5), 0.0);
  CHECK_THROWS_AS(e.admit(make_request(1, 50, 5), 1.0), std::invalid_argument);
}

TEST_CASE("admission is unbounded queueing even at full KV") {
  auto p = slow_params();
  p.kv_capacity = 150;
  Engine e(p);
  e.admit(make_request(1, 100, 1), 0.0);
  e.admit(make_request(2, 100, 1), 0.0);
  e.admit(make_request(3, 100, 1), 0.0);
  CHECK(e.waiting_size() == 3);  // queue accepts regardless of pressure
}

TEST_CASE("single request timing follows the cost model exactly") {
  Engine e(slow_params());
  e.admit(make_request(1, 100, 5), 0.0);
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  // prefill: 100 tokens at 1000 tok/s; then 4 decode ticks of 25 ms
  CHECK(t.first_token.at(1) == 0.1);
  CHECK(t.completion.at(1) == doctest::Approx(0.1 + 4 * 0.025).epsilon(1e-12));
  CHECK(t.dispatch.at(1) == 0.0);
  CHECK(t.uncached.at(1) == 100);
  CHECK(e.kv_used() == 0.0);
  CHECK_FALSE(e.has_pending_work());
}

TEST_CASE("fully cached prompt prefills in zero time") {
  Engine e(slow_params());
  e.admit(make_request(1, 64, 2, "u1"), 0.0);
  Timeline t;
  t.absorb(e.step(5.0, nullptr));
  CHECK(t.uncached.at(1) == 64);

  e.admit(make_request(2, 64, 1, "u1"), 6.0);
  t.absorb(e.step(5.0, nullptr));
  // 64 = 4 full blocks, all resident from request 1
  CHECK(t.uncached.at(2) == 0);
  CHECK(t.first_token.at(2) == 6.0);
  CHECK(t.completion.at(2) == 6.0);
}

TEST_CASE("cache hits shrink the prefill by whole blocks only") {
  Engine e(slow_params());
  e.admit(make_request(1, 100, 1, "u9"), 0.0);
  Timeline t;
  t.absorb(e.step(1.0, nullptr));
  e.admit(make_request(2, 100, 1, "u9"), 2.0);
  t.absorb(e.step(2.0, nullptr));
  // 100 tokens = 6 full blocks (96) + 4 remainder; second request hits 6
  CHECK(t.uncached.at(2) == 100 - 6 * 16);
  CHECK(t.first_token.at(2) == doctest::Approx(2.0 + 4.0 / 1000.0));
}

TEST_CASE("KV pressure serializes execution") {
  auto p = slow_params();
  p.kv_capacity = 150;  // each request reserves 100 + 1 = 101 slots
  Engine e(p);
  e.admit(make_request(1, 100, 1), 0.0);
  e.admit(make_request(2, 100, 1), 0.0);
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  CHECK(t.dispatch.at(1) == 0.0);
  CHECK(t.completion.at(1) == 0.1);
  CHECK(t.dispatch.at(2) == 0.1);  // waited for request 1's release
  CHECK(t.first_token.at(2) == doctest::Approx(0.2));
  CHECK(e.kv_used() == 0.0);
}

TEST_CASE("a request that can never fit fails loudly") {
  auto p = slow_params();
  p.kv_capacity = 50;
  Engine e(p);
  e.admit(make_request(1, 100, 1), 0.0);
  CHECK_THROWS_AS(e.step(1.0, nullptr), std::invalid_argument);
}

TEST_CASE("prefill batching respects the token budget") {
  auto p = slow_params();
  p.max_batch_tokens = 1000;
  p.sjf_enabled = false;
  Engine e(p);
  e.admit(make_request(1, 600, 1), 0.0);
  e.admit(make_request(2, 600, 1), 0.0);
  e.admit(make_request(3, 600, 1), 0.0);
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  // 600 + 600 exceeds the budget, so the passes serialize
  CHECK(t.first_token.at(1) == doctest::Approx(0.6));
  CHECK(t.first_token.at(2) == doctest::Approx(1.2));
  CHECK(t.first_token.at(3) == doctest::Approx(1.8));
}

TEST_CASE("an oversized request still prefills alone") {
  auto p = slow_params();
  p.max_batch_tokens = 1000;
  Engine e(p);
  e.admit(make_request(1, 5000, 1), 0.0);
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  CHECK(t.first_token.at(1) == doctest::Approx(5.0));
}

TEST_CASE("decode runs the whole batch per tick") {
  auto p = slow_params();
  p.sjf_enabled = false;
  Engine e(p);
  e.admit(make_request(1, 100, 3), 0.0);
  e.admit(make_request(2, 100, 3), 0.0);
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  // joint prefill [0, 0.2]; two decode ticks finish both at 0.25
  CHECK(t.first_token.at(1) == doctest::Approx(0.2));
  CHECK(t.first_token.at(2) == doctest::Approx(0.2));
  CHECK(t.completion.at(1) == doctest::Approx(0.25));
  CHECK(t.completion.at(2) == doctest::Approx(0.25));
}

TEST_CASE("SJF queueing reorders the backlog, FIFO does not") {
  auto run_order = [](bool sjf) {
    auto p = slow_params();
    p.sjf_enabled = sjf;
    p.max_batch_tokens = 1;  // force one prefill per pass
    Engine e(p);
    e.admit(make_request(1, 3000, 1), 0.0);  // occupies the engine first
    e.admit(make_request(2, 2000, 1), 0.0);
    e.admit(make_request(3, 10, 1), 0.0);
    Timeline t;
    t.absorb(e.step(30.0, nullptr));
    return t;
  };
  auto sjf = run_order(true);
  CHECK(sjf.first_token.at(3) < sjf.first_token.at(2));
  auto fifo = run_order(false);
  CHECK(fifo.first_token.at(2) < fifo.first_token.at(3));
}

TEST_CASE("aging promotes a starving request ahead of shorter arrivals") {
  // One 4000-token request competes with a 100-token arrival every 100 ms.
  // Each short pass takes exactly 100 ms, so pure SJF starves the big one
  // until the stream ends; with theta_age = 5 s it is dispatched at t = 5.
  // shorts arrive just before the previous pass ends so the engine never idles
  auto run_whale = [](double theta_age) {
    auto p = slow_params();
    p.max_batch_tokens = 1;
    p.sjf.theta_age = theta_age;
    Engine e(p);
    e.admit(make_request(999, 4000, 1), 0.0);
    for (int k = 0; k < 60; ++k) {
      e.admit(make_request(k, 100, 1), k == 0 ? 0.0 : 0.1 * k - 0.001);
    }
    Timeline t;
    t.absorb(e.step(30.0, nullptr));
    return t.dispatch.at(999);
  };
  CHECK(run_whale(4.95) == doctest::Approx(5.0));
  CHECK(run_whale(1e9) == doctest::Approx(6.0));  // aging off: waits out the stream
}

TEST_CASE("metrics snapshot reports load and usage") {
  auto p = slow_params();
  p.engine_id = 3;
  p.kv_capacity = 1000;
  Engine e(p);
  e.admit(make_request(1, 100, 10), 0.0);
  e.admit(make_request(2, 200, 20), 0.0);
  auto m0 = e.metrics_snapshot(0.0);
  CHECK(m0.engine_id == 3);
  CHECK(m0.kv_usage == 0.0);
  CHECK(m0.running_load == 300);  // both waiting: prefill only

  // start the joint prefill pass, snapshot mid-flight
  REQUIRE(e.try_start_iteration(0.0, nullptr).has_value());
  auto m1 = e.metrics_snapshot(0.1);
  // prefill KV materialized up front: 300 slots of 1000
  CHECK(m1.kv_usage == doctest::Approx(0.3));
  // remaining prefill 300 + remaining decode 30
  CHECK(m1.running_load == 330);
  CHECK(m1.reported_at == 0.1);

  auto pp = p;
  pp.load_metric = LoadMetric::kPrefillOnly;
  Engine e2(pp);
  e2.admit(make_request(1, 100, 10), 0.0);
  CHECK(e2.metrics_snapshot(0.0).running_load == 100);
}

TEST_CASE("step honors enqueue times within the window") {
  Engine e(slow_params());
  e.admit(make_request(1, 100, 1), 0.0);
  e.admit(make_request(2, 100, 1), 5.0);  // arrives later
  Timeline t;
  t.absorb(e.step(10.0, nullptr));
  CHECK(t.dispatch.at(1) == 0.0);
  CHECK(t.dispatch.at(2) == 5.0);
  CHECK(t.first_token.at(2) == doctest::Approx(5.1));
}

TEST_CASE("KV accounting conserves across a busy run") {
  auto p = slow_params();
  p.kv_capacity = 2000;
  Engine e(p);
  for (int i = 0; i < 20; ++i) {
    e.admit(make_request(i, 50 + 37 * i % 400, 1 + i % 7, i % 2 ? "u" : "", i * 0.01), 0.0);
  }
  Timeline t;
  t.absorb(e.step(100.0, nullptr));
  CHECK(t.completion.size() == 20);
  CHECK(e.kv_used() == 0.0);
  CHECK_FALSE(e.has_pending_work());
  // first token can never precede dispatch + own uncached prefill time
  for (const auto& [id, ft] : t.first_token) {
    CHECK(ft >= t.dispatch.at(id) + static_cast<double>(t.uncached.at(id)) / 1000.0 - 1e-12);
  }
}

TEST_CASE("parameter validation") {
  EngineParams p;
  p.kv_capacity = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = EngineParams{};
  p.cost.prefill_rate = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = EngineParams{};
  p.block_size = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

#include "gimbal/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gimbal {

void CostModel::validate() const {
  if (!(prefill_rate > 0.0)) {
    throw std::invalid_argument("CostModel: prefill_rate must be > 0");
  }
  if (!(decode_time_per_token > 0.0)) {
    throw std::invalid_argument("CostModel: decode_time_per_token must be > 0");
  }
  if (!(kv_tokens_per_token > 0.0)) {
    throw std::invalid_argument("CostModel: kv_tokens_per_token must be > 0");
  }
  if (decode_batch_slowdown < 0.0 || moe_imbalance_slowdown < 0.0 ||
      comm_time_per_transition < 0.0) {
    throw std::invalid_argument("CostModel: slowdown factors must be >= 0");
  }
}

void EngineParams::validate() const {
  if (engine_id < 0) throw std::invalid_argument("EngineParams: engine_id must be >= 0");
  if (kv_capacity < 1) throw std::invalid_argument("EngineParams: kv_capacity must be >= 1");
  if (block_size < 1) throw std::invalid_argument("EngineParams: block_size must be >= 1");
  if (max_batch_tokens < 1) {
    throw std::invalid_argument("EngineParams: max_batch_tokens must be >= 1");
  }
  cost.validate();
  if (sjf_enabled) sjf.validate();
}

Engine::Engine(EngineParams params) : params_(params) {
  params_.validate();
  prefix_cache_.block_size = params_.block_size;
}

void Engine::admit(const Request& request, double now) {
  if (request.prefill_tokens < 1 || request.output_tokens < 1) {
    throw std::invalid_argument("admit: token counts must be >= 1");
  }
  if (!seen_ids_.insert(request.id).second) {
    throw std::invalid_argument("admit: duplicate request id " + std::to_string(request.id));
  }
  waiting_.push_back(QueuedRequest{request, now});
}

double Engine::reservation_for(std::int64_t uncached, std::int64_t output) const {
  return static_cast<double>(uncached + output) * params_.cost.kv_tokens_per_token;
}

bool Engine::has_pending_work() const {
  if (inflight_ || !waiting_.empty()) return true;
  for (const auto& r : running_) {
    if (!r.prefilled || r.decoded < r.request.output_tokens) return true;
  }
  return false;
}

double Engine::inflight_end() const {
  if (!inflight_) throw std::logic_error("inflight_end: engine is idle");
  return inflight_->end;
}

std::optional<double> Engine::try_start_iteration(double now, MoeHook* moe) {
  if (inflight_) return std::nullopt;
  clock_ = std::max(clock_, now);

  // Only requests already enqueued by the current clock compete; step() can
  // carry future admissions in the queue.
  std::vector<QueuedRequest> eligible;
  std::vector<QueuedRequest> future;
  for (auto& q : waiting_) {
    (q.enqueued_at <= clock_ ? eligible : future).push_back(std::move(q));
  }
  if (params_.sjf_enabled) {
    eligible = reorder_queue(std::move(eligible), clock_, params_.sjf);
  }

  // Admit in queue order, no skipping, until KV or the prefill token budget
  // stops us. A request larger than the budget is still admitted alone.
  std::vector<std::size_t> batch;
  std::int64_t batch_tokens = 0;
  std::size_t next = 0;
  while (next < eligible.size()) {
    const QueuedRequest& head = eligible[next];
    auto prompt = synth_prompt_tokens(head.request.user_id, head.request.id,
                                      head.request.prefill_tokens);
    const std::int64_t hits = prefix_peek(prefix_cache_, prompt);
    const std::int64_t uncached =
        head.request.prefill_tokens - hits * params_.block_size;
    const double need = reservation_for(uncached, head.request.output_tokens);
    if (kv_reserved_ + need > static_cast<double>(params_.kv_capacity)) break;
    if (!batch.empty() && batch_tokens + uncached > params_.max_batch_tokens) break;

    prefix_lookup(prefix_cache_, prompt);
    RunningRequest r;
    r.request = head.request;
    r.enqueued_at = head.enqueued_at;
    r.dispatch_time = clock_;
    r.hit_blocks = hits;
    r.uncached_prefill = uncached;
    r.kv_reserved = need;
    // prefill KV materializes at the start of its pass
    r.kv_allocated = static_cast<double>(uncached) * params_.cost.kv_tokens_per_token;
    kv_reserved_ += need;
    kv_used_ += r.kv_allocated;
    batch_tokens += uncached;
    running_.push_back(std::move(r));
    batch.push_back(running_.size() - 1);
    ++next;
  }

  if (batch.empty() && running_.empty() && next < eligible.size()) {
    // nothing running, so no KV will ever free up for the queue head
    throw std::invalid_argument("request exceeds engine KV capacity: id " +
                                std::to_string(eligible[next].request.id));
  }

  waiting_.clear();
  for (std::size_t i = next; i < eligible.size(); ++i) {
    waiting_.push_back(std::move(eligible[i]));
  }
  for (auto& q : future) waiting_.push_back(std::move(q));

  bool prefill_pass = !batch.empty();
  std::int64_t decode_batch = 0;
  if (!prefill_pass) {
    for (const auto& r : running_) {
      if (r.prefilled && r.decoded < r.request.output_tokens) ++decode_batch;
    }
    if (decode_batch == 0) return std::nullopt;
  }

  double base;
  std::int64_t routed_tokens;
  if (prefill_pass) {
    base = static_cast<double>(batch_tokens) / params_.cost.prefill_rate;
    routed_tokens = batch_tokens;
  } else {
    base = params_.cost.decode_time_per_token *
           (1.0 + params_.cost.decode_batch_slowdown * static_cast<double>(decode_batch - 1));
    routed_tokens = decode_batch;
  }
  double duration = base;
  if (moe != nullptr) {
    duration += moe->iteration_cost(routed_tokens, base, params_.cost);
    duration += moe->take_pending_stall(params_.engine_id);
  }

  inflight_ = Inflight{prefill_pass, clock_ + duration, std::move(batch)};
  return inflight_->end;
}

void Engine::complete_request(std::size_t idx, double at, std::vector<EngineEvent>& events) {
  RunningRequest& r = running_[idx];
  EngineEvent ev;
  ev.kind = EngineEvent::Kind::kCompletion;
  ev.request_id = r.request.id;
  ev.time = at;
  events.push_back(ev);
  kv_used_ -= r.kv_allocated;
  kv_reserved_ -= r.kv_reserved;
}

std::vector<EngineEvent> Engine::finish_iteration(MoeHook* moe) {
  if (!inflight_) throw std::logic_error("finish_iteration: engine is idle");
  const Inflight fl = std::move(*inflight_);
  inflight_.reset();
  clock_ = fl.end;

  std::vector<EngineEvent> events;
  std::vector<std::size_t> done;
  if (fl.prefill) {
    for (std::size_t idx : fl.batch) {
      RunningRequest& r = running_[idx];
      r.prefilled = true;
      r.decoded = 1;  // the prefill pass emits the first token
      r.kv_allocated += params_.cost.kv_tokens_per_token;
      kv_used_ += params_.cost.kv_tokens_per_token;
      EngineEvent ev;
      ev.kind = EngineEvent::Kind::kFirstToken;
      ev.request_id = r.request.id;
      ev.time = fl.end;
      ev.dispatch_time = r.dispatch_time;
      ev.uncached_prefill = r.uncached_prefill;
      ev.hit_blocks = r.hit_blocks;
      events.push_back(ev);
      if (r.decoded >= r.request.output_tokens) {
        complete_request(idx, fl.end, events);
        done.push_back(idx);
      }
    }
  } else {
    for (std::size_t idx = 0; idx < running_.size(); ++idx) {
      RunningRequest& r = running_[idx];
      if (!r.prefilled || r.decoded >= r.request.output_tokens) continue;
      r.decoded += 1;
      r.kv_allocated += params_.cost.kv_tokens_per_token;
      kv_used_ += params_.cost.kv_tokens_per_token;
      if (r.decoded >= r.request.output_tokens) {
        complete_request(idx, fl.end, events);
        done.push_back(idx);
      }
    }
  }

  if (!done.empty()) {
    std::sort(done.begin(), done.end());
    for (auto it = done.rbegin(); it != done.rend(); ++it) {
      running_.erase(running_.begin() + static_cast<std::ptrdiff_t>(*it));
    }
  }

  ++forward_steps_;
  if (moe != nullptr) moe->on_forward_step(clock_);
  return events;
}

std::vector<EngineEvent> Engine::step(double dt, MoeHook* moe) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  const double deadline = clock_ + dt;
  std::vector<EngineEvent> events;
  for (;;) {
    if (!inflight_) {
      if (!try_start_iteration(clock_, moe)) {
        // idle: jump to the next queued enqueue time inside the window
        double next_t = deadline;
        bool found = false;
        for (const auto& q : waiting_) {
          if (q.enqueued_at > clock_ && q.enqueued_at <= deadline) {
            next_t = found ? std::min(next_t, q.enqueued_at) : q.enqueued_at;
            found = true;
          }
        }
        if (!found) break;
        clock_ = next_t;
        continue;
      }
    }
    if (inflight_->end > deadline) break;
    auto evs = finish_iteration(moe);
    events.insert(events.end(), evs.begin(), evs.end());
  }
  clock_ = std::max(clock_, deadline);
  return events;
}

EngineMetrics Engine::metrics_snapshot(double now) const {
  EngineMetrics m;
  m.engine_id = params_.engine_id;
  m.kv_usage = std::clamp(kv_used_ / static_cast<double>(params_.kv_capacity), 0.0, 1.0);
  std::int64_t load = 0;
  for (const auto& q : waiting_) load += q.request.prefill_tokens;
  for (const auto& r : running_) {
    if (!r.prefilled) load += r.uncached_prefill;
    if (params_.load_metric == LoadMetric::kPrefillPlusDecode) {
      load += r.request.output_tokens - r.decoded;
    }
  }
  m.running_load = load;
  m.reported_at = now;
  return m;
}

}  // namespace gimbal

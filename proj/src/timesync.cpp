#include "rollcall/timesync.hpp"

#include <chrono>
#include <thread>
#include <tuple>

namespace rollcall {

std::optional<OffsetDelay> estimate(const SyncSample& s) {
  if (s.t4 < s.t1 || s.t3 < s.t2) return std::nullopt;
  const Millis delay = (s.t4 - s.t1) - (s.t3 - s.t2);
  if (delay < 0) return std::nullopt;
  return OffsetDelay{((s.t2 - s.t1) + (s.t3 - s.t4)) / 2, delay};
}

ClockEstimate best_estimate(std::span<const SyncSample> samples, std::size_t window) {
  if (window == 0) throw SyncError("sync window must be at least 1");

  std::optional<OffsetDelay> best;
  int used = 0;
  for (auto it = samples.rbegin(); it != samples.rend() && static_cast<std::size_t>(used) < window;
       ++it) {
    const auto e = estimate(*it);
    if (!e) continue;
    ++used;
    if (!best || std::tie(e->delay_ms, e->offset_ms) < std::tie(best->delay_ms, best->offset_ms))
      best = e;
  }
  if (!best) throw SyncError("no accepted sync samples");
  return ClockEstimate{best->offset_ms, best->delay_ms, used};
}

Millis SystemClock::now_ms() const {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void SystemClock::sleep_for_ms(Millis duration) {
  if (duration > 0) std::this_thread::sleep_for(std::chrono::milliseconds(duration));
}

void wait_until(Millis target_counter_ms, const ClockEstimate& estimate, Clock& clock) {
  for (;;) {
    const Millis remaining = target_counter_ms - estimate.to_counter(clock.now_ms());
    if (remaining <= 0) return;
    clock.sleep_for_ms(remaining);
  }
}

}  // namespace rollcall

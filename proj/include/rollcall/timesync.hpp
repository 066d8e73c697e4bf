#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>

#include "rollcall/experiment.hpp"

namespace rollcall {

/// Four-timestamp exchange: t1 client send, t2 counter receive, t3 counter
/// send, t4 client receive. t1/t4 are local clock, t2/t3 counter clock.
struct SyncSample {
  Millis t1 = 0;
  Millis t2 = 0;
  Millis t3 = 0;
  Millis t4 = 0;
  friend bool operator==(const SyncSample&, const SyncSample&) = default;
};

struct OffsetDelay {
  Millis offset_ms = 0;
  Millis delay_ms = 0;
  friend bool operator==(const OffsetDelay&, const OffsetDelay&) = default;
};

/// offset = ((t2 - t1) + (t3 - t4)) / 2, truncated toward zero;
/// delay = (t4 - t1) - (t3 - t2). nullopt when the sample is rejected.
std::optional<OffsetDelay> estimate(const SyncSample& sample);

/// counter_time = local_time + offset_ms.
struct ClockEstimate {
  Millis offset_ms = 0;
  Millis delay_ms = 0;
  int samples_used = 1;

  Millis to_counter(Millis local) const { return local + offset_ms; }
  Millis to_local(Millis counter) const { return counter - offset_ms; }
};

class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultSyncWindow = 8;

/// Minimum-delay filter over the `window` most recent accepted samples.
/// Ties on delay resolve to the smaller offset, which keeps the result
/// independent of sample order. Throws SyncError if nothing is accepted.
ClockEstimate best_estimate(std::span<const SyncSample> samples,
                            std::size_t window = kDefaultSyncWindow);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now_ms() const = 0;
  virtual void sleep_for_ms(Millis duration) = 0;
};

/// Wall clock in ms since the Unix epoch.
class SystemClock final : public Clock {
 public:
  Millis now_ms() const override;
  void sleep_for_ms(Millis duration) override;
};

/// Blocks until clock.now_ms() + estimate.offset_ms >= target_counter_ms.
/// Returns immediately for targets in the past.
void wait_until(Millis target_counter_ms, const ClockEstimate& estimate, Clock& clock);

}  // namespace rollcall

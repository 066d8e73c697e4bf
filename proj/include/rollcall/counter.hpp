#pragma once

#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rollcall/event_log.hpp"
#include "rollcall/experiment.hpp"
#include "rollcall/protocol.hpp"
#include "rollcall/timesync.hpp"

namespace rollcall {

struct RoundTally {
  RoundRef round;
  std::int64_t count = 0;
  Millis window_open_ms = 0;
  Millis window_close_ms = 0;
  bool closed = false;

  friend bool operator==(const RoundTally&, const RoundTally&) = default;
};

struct SurveyRecord {
  Millis arrival_ms = 0;
  Survey survey;

  friend bool operator==(const SurveyRecord&, const SurveyRecord&) = default;
};

/// Calibration counts in round order plus N* once the execution round closed.
struct Distribution {
  std::vector<std::int64_t> counts;
  std::optional<std::int64_t> n_star;

  friend bool operator==(const Distribution&, const Distribution&) = default;
};

class CounterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The tallying core. Every state change is appended to the sink before the
/// call returns, so a reply built from the return value implies a logged
/// event. Not thread-safe; CounterService adds the locking.
class CounterState {
 public:
  /// `log` may be null (no persistence); it must outlive the state.
  explicit CounterState(ExperimentConfig config, EventSink* log = nullptr);

  /// Rebuilds state from a persisted log. ACCEPT records are re-validated
  /// against the config; REJECT records are skipped. New events go to `log`.
  static CounterState replay(ExperimentConfig config, const std::vector<LogRecord>& records,
                             EventSink* log = nullptr);

  /// Returns Ack or Reject.
  Message accept_report(const Report& report, Millis arrival_ms);

  /// `raw` is logged verbatim when the report is rejected.
  Message accept_report(const Report& report, std::string_view raw, Millis arrival_ms);

  Ack accept_survey(const Survey& survey, Millis arrival_ms);

  /// Freezes the tally. Throws CounterError before window_close; closing an
  /// already closed round returns the frozen tally without logging again.
  const RoundTally& close_round(RoundRef round, Millis now_ms);

  /// Closes every round whose window_close is strictly before now_ms.
  std::vector<RoundRef> close_due(Millis now_ms);

  /// Decodes one wire line and dispatches it. SYNC is answered with
  /// t2 = t3 = arrival_ms; undecodable lines get REJ MALFORMED and are logged.
  std::string handle_line(std::string_view line, Millis arrival_ms);

  /// Throws CounterError if any calibration round is still open.
  Distribution distribution() const;

  const ExperimentConfig& config() const { return config_; }
  const RoundTally& tally(RoundRef round) const;
  const std::vector<RoundTally>& tallies() const { return tallies_; }
  const std::set<std::pair<RoundRef, std::string>>& seen() const { return seen_; }
  const std::vector<SurveyRecord>& surveys() const { return surveys_; }
  bool all_closed() const;

  /// Compares tallies, seen-set and surveys (not the sink).
  bool same_state(const CounterState& other) const;

 private:
  RoundTally& tally_mut(RoundRef round);
  void log(Millis at, LogKind kind, std::string payload);
  Message reject(RejectReason reason, std::string_view raw, Millis arrival_ms);

  ExperimentConfig config_;
  EventSink* log_;
  std::vector<RoundTally> tallies_;
  std::vector<std::string> tokens_;
  std::set<std::pair<RoundRef, std::string>> seen_;
  std::vector<SurveyRecord> surveys_;
};

/// Calibration counts and N* recovered from a persisted log. With a config
/// the log is replayed in full. Without one, the CLOSE records must cover
/// CAL 0..k-1 (k >= 2) and EXE, and each CLOSE count must equal the number
/// of distinct nonces in that round's ACCEPT records. Throws LogError when
/// the log is incomplete or inconsistent.
Distribution distribution_from_log(const std::vector<LogRecord>& records,
                                   const ExperimentConfig* config = nullptr);

/// Thread-safe wrapper: one mutex serializes tally mutation and log append.
class CounterService {
 public:
  CounterService(CounterState state, Clock& clock) : state_(std::move(state)), clock_(clock) {}

  /// Processes one request line and returns the reply line. For SYNC the
  /// reply's t3 is read after processing.
  std::string handle(std::string_view line);

  std::vector<RoundRef> tick();

  std::vector<RoundTally> tallies() const;
  Distribution distribution() const;
  bool all_closed() const;

  /// Copy of the full state for inspection.
  CounterState snapshot() const;

 private:
  mutable std::mutex mutex_;
  CounterState state_;
  Clock& clock_;
};

}  // namespace rollcall

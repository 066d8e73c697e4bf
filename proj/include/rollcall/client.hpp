#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rollcall/experiment.hpp"
#include "rollcall/protocol.hpp"
#include "rollcall/timesync.hpp"

namespace rollcall {

/// A mechanical input event (keyboard, pointer) in counter time.
struct ActivityEvent {
  Millis timestamp_ms = 0;
  friend auto operator<=>(const ActivityEvent&, const ActivityEvent&) = default;
};

enum class UptimeKind { Down, Up };

/// Host power record in counter time, as recovered from a system log.
struct UptimeRecord {
  UptimeKind kind = UptimeKind::Down;
  Millis timestamp_ms = 0;
  friend bool operator==(const UptimeRecord&, const UptimeRecord&) = default;
};

// ---------------------------------------------------------------------------
// Pure decision helpers

inline constexpr Millis kDefaultPromptLeadMs = 120'000;
inline constexpr Millis kDefaultStartToleranceMs = 60'000;

/// True when no event falls in [from, to].
bool window_compliant(std::span<const ActivityEvent> events, Millis from, Millis to);

/// Strictly alternating DOWN/UP kinds with non-decreasing timestamps.
bool uptime_well_formed(std::span<const UptimeRecord> records);

enum class Certification { Compliant, NotCompliant, Malformed };

/// Compliant iff some DOWN at d with its matching UP at u satisfies
/// d <= t* + start_tolerance and u >= t* + delta_tau. A trailing DOWN
/// without UP never certifies (the host must have come back to report).
Certification certify_shutdown(std::span<const UptimeRecord> records,
                               const ExperimentConfig& config,
                               Millis start_tolerance_ms = kDefaultStartToleranceMs);

struct Wakeup {
  RoundRef round;
  Millis prompt_ms = 0;  // t_i - prompt_lead (t* - prompt_lead for EXE)
  friend bool operator==(const Wakeup&, const Wakeup&) = default;
};

/// Earliest round at or after `first_ordinal` whose acceptance window has not
/// closed at now_counter_ms; nullopt once every window has closed.
std::optional<Wakeup> next_wakeup(const ExperimentConfig& config, Millis now_counter_ms,
                                  Millis prompt_lead_ms = kDefaultPromptLeadMs,
                                  std::size_t first_ordinal = 0);

/// Validates the reason word locally; throws std::invalid_argument for an
/// unknown code or an invalid nonce.
Survey make_survey(std::string nonce, std::string_view code_word, std::string text);

// ---------------------------------------------------------------------------
// Pluggable inputs

class ConsentSource {
 public:
  virtual ~ConsentSource() = default;
  /// Asks the user to take part in `round`; no answer by deadline means no.
  virtual bool ask(RoundRef round, Millis deadline_counter_ms) = 0;
};

class ActivitySource {
 public:
  virtual ~ActivitySource() = default;
  /// First recorded input event in [from, to], if any.
  virtual std::optional<Millis> first_event_in(Millis from, Millis to) = 0;
};

class UptimeSource {
 public:
  virtual ~UptimeSource() = default;
  /// nullopt when the underlying record stream cannot be parsed.
  virtual std::optional<std::vector<UptimeRecord>> records() = 0;
};

struct SurveyAnswer {
  SurveyCode code = SurveyCode::Other;
  std::string text;
};

class SurveySource {
 public:
  virtual ~SurveySource() = default;
  /// nullopt when the user skips the questionnaire.
  virtual std::optional<SurveyAnswer> answer(SurveyCode suggested) = 0;
};

/// Answers per round; rounds without an entry get the fallback.
class ScriptedConsent final : public ConsentSource {
 public:
  explicit ScriptedConsent(bool fallback = false) : fallback_(fallback) {}
  void set(RoundRef round, bool yes);
  bool ask(RoundRef round, Millis deadline_counter_ms) override;

 private:
  std::vector<std::pair<RoundRef, bool>> answers_;
  bool fallback_;
};

class ScriptedActivity final : public ActivitySource {
 public:
  ScriptedActivity() = default;
  explicit ScriptedActivity(std::vector<ActivityEvent> events);
  std::optional<Millis> first_event_in(Millis from, Millis to) override;
  const std::vector<ActivityEvent>& events() const { return events_; }

 private:
  std::vector<ActivityEvent> events_;  // sorted
};

class ScriptedUptime final : public UptimeSource {
 public:
  ScriptedUptime() = default;
  explicit ScriptedUptime(std::optional<std::vector<UptimeRecord>> records)
      : records_(std::move(records)) {}
  std::optional<std::vector<UptimeRecord>> records() override { return records_; }

 private:
  std::optional<std::vector<UptimeRecord>> records_ = std::vector<UptimeRecord>{};
};

/// Always gives the same answer; the suggested code is used when `code` is empty.
class ScriptedSurvey final : public SurveySource {
 public:
  ScriptedSurvey() = default;
  ScriptedSurvey(std::optional<SurveyCode> code, std::string text, bool skip = false)
      : code_(code), text_(std::move(text)), skip_(skip) {}
  std::optional<SurveyAnswer> answer(SurveyCode suggested) override;

 private:
  std::optional<SurveyCode> code_;
  std::string text_;
  bool skip_ = false;
};

// File formats: activity is one `<ms>` per line; uptime is `DOWN <ms>` /
// `UP <ms>` per line; consent is `<CAL|EXE> <index> <yes|no>` per line.
// Blank lines and `#` comments are ignored.
class InputFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<ActivityEvent> read_activity_file(const std::filesystem::path& path);
/// nullopt for an unparseable stream (certification then fails as Malformed).
std::optional<std::vector<UptimeRecord>> read_uptime_file(const std::filesystem::path& path);
ScriptedConsent read_consent_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// State machine

struct ClientOptions {
  Millis prompt_lead_ms = kDefaultPromptLeadMs;
  Millis start_tolerance_ms = kDefaultStartToleranceMs;
  /// SYNC exchanges per synchronization; 0 disables sync and trusts the
  /// local clock (offset 0).
  int sync_samples = 8;
  /// Exchanges tried per synchronization before it counts as failed; lost
  /// or rejected samples are retried up to this bound.
  int sync_max_attempts = 24;
  std::size_t sync_window = kDefaultSyncWindow;
  /// Re-synchronize after consent, before each calibration window.
  bool resync_each_round = true;
  /// Attempts for the initial sync before the client gives up.
  int initial_sync_attempts = 3;
  Millis retry_interval_ms = 5'000;
  int survey_max_attempts = 3;
};

enum class ClientPhase {
  Syncing,
  Waiting,
  Prompting,
  Monitoring,
  Reporting,
  ExecutionPending,
  Certifying,
  Surveying,
  Done
};

std::string_view to_string(ClientPhase phase);

enum class RoundStatus {
  Reported,      // ACK received (or DUP after a retry)
  Declined,      // user said no
  Violated,      // input activity inside the window
  Missed,        // prompt time already past when the client got to it
  SyncFailed,    // no fresh clock estimate
  Rejected,      // counter refused the report
  GaveUp,        // window closed while retrying
  NotCompliant   // execution round: shutdown not certified
};

std::string_view to_string(RoundStatus status);

struct RoundOutcome {
  RoundRef round;
  RoundStatus status = RoundStatus::Reported;
  std::optional<RejectReason> reason;
  friend bool operator==(const RoundOutcome&, const RoundOutcome&) = default;
};

/// What the driver must do next: send a line (and feed the reply or a
/// failure back), sleep until a counter-time target, or stop.
struct Step {
  std::optional<std::string> send;
  std::optional<Millis> wake_counter_ms;
  bool done = false;
};

/// Deterministic, single-threaded client lifecycle. Time only enters through
/// the `local_now` arguments; the driver owns clocks and transport.
class ClientMachine {
 public:
  struct Inputs {
    ConsentSource& consent;
    ActivitySource& activity;
    UptimeSource& uptime;
    SurveySource& survey;
  };

  ClientMachine(ExperimentConfig config, std::string nonce, ClientOptions options, Inputs inputs);

  Step start(Millis local_now);
  Step on_wake(Millis local_now);
  Step on_reply(Millis local_now, std::string_view line);
  Step on_send_failed(Millis local_now);

  ClientPhase phase() const { return phase_; }
  const ClockEstimate& estimate() const { return estimate_; }
  bool has_estimate() const { return has_estimate_; }
  const std::vector<RoundOutcome>& outcomes() const { return outcomes_; }
  /// Every line handed to the driver, in order.
  const std::vector<std::string>& sent() const { return sent_; }
  bool survey_sent() const { return survey_acked_; }
  /// True when the client stopped because the counter was unreachable.
  bool failed() const { return failed_; }
  const std::string& nonce() const { return nonce_; }

 private:
  enum class SyncPurpose { Initial, Round };

  Step send(std::string line);
  Step wake_at(Millis counter_ms);
  Step finish(bool failed = false);
  Step schedule_next(Millis local_now);
  Step begin_sync(SyncPurpose purpose, Millis local_now);
  Step sync_attempt_done(Millis local_now);
  Step after_sync(bool ok, Millis local_now);
  Step begin_monitoring();
  Step send_report();
  Step report_retry(Millis local_now, std::optional<RejectReason> reason);
  Step round_done(RoundStatus status, Millis local_now, std::optional<RejectReason> reason = {});
  Step certify(Millis local_now);
  Step begin_survey(SurveyCode suggested, bool force_code, Millis local_now);
  Step send_survey();

  ExperimentConfig config_;
  std::string nonce_;
  ClientOptions options_;
  Inputs inputs_;

  ClientPhase phase_ = ClientPhase::Syncing;
  ClockEstimate estimate_{};
  bool has_estimate_ = false;
  bool failed_ = false;

  std::size_t cursor_ = 0;  // ordinal of the next round to handle
  RoundRef current_{};

  SyncPurpose sync_purpose_ = SyncPurpose::Initial;
  std::vector<SyncSample> samples_;
  int sync_attempts_ = 0;
  int initial_sync_rounds_ = 0;
  Millis pending_t1_ = 0;

  bool retry_pending_ = false;
  std::optional<Survey> survey_;
  int survey_attempts_ = 0;
  bool survey_acked_ = false;

  std::vector<RoundOutcome> outcomes_;
  std::vector<std::string> sent_;
};

// ---------------------------------------------------------------------------
// Blocking driver

class Transport {
 public:
  virtual ~Transport() = default;
  /// One request/response exchange; nullopt on any network failure.
  virtual std::optional<std::string> exchange(std::string_view line) = 0;
};

/// Runs the machine to completion against a real clock and transport.
void run_client(ClientMachine& machine, Transport& transport, Clock& clock);

}  // namespace rollcall

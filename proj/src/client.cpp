#include "rollcall/client.hpp"

#include <algorithm>
#include <fstream>

#include "rollcall/detail/text.hpp"

namespace rollcall {

bool window_compliant(std::span<const ActivityEvent> events, Millis from, Millis to) {
  return std::none_of(events.begin(), events.end(), [&](const ActivityEvent& e) {
    return e.timestamp_ms >= from && e.timestamp_ms <= to;
  });
}

bool uptime_well_formed(std::span<const UptimeRecord> records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].kind == records[i - 1].kind) return false;
    if (records[i].timestamp_ms < records[i - 1].timestamp_ms) return false;
  }
  return true;
}

Certification certify_shutdown(std::span<const UptimeRecord> records, const ExperimentConfig& config,
                               Millis start_tolerance_ms) {
  if (!uptime_well_formed(records)) return Certification::Malformed;
  const Millis latest_down = config.t_star_ms + start_tolerance_ms;
  const Millis earliest_up = config.t_star_ms + config.delta_tau_ms;
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    if (records[i].kind != UptimeKind::Down) continue;
    if (records[i].timestamp_ms <= latest_down && records[i + 1].timestamp_ms >= earliest_up)
      return Certification::Compliant;
  }
  return Certification::NotCompliant;
}

std::optional<Wakeup> next_wakeup(const ExperimentConfig& config, Millis now_counter_ms,
                                  Millis prompt_lead_ms, std::size_t first_ordinal) {
  for (std::size_t ord = first_ordinal; ord <= static_cast<std::size_t>(config.n_rounds); ++ord) {
    const RoundRef round = config.round_at(ord);
    if (now_counter_ms <= config.window_close(round))
      return Wakeup{round, config.round_start(round) - prompt_lead_ms};
  }
  return std::nullopt;
}

Survey make_survey(std::string nonce, std::string_view code_word, std::string text) {
  const auto code = parse_survey_code(code_word);
  if (!code) throw std::invalid_argument("unknown survey code: " + std::string(code_word));
  if (!is_valid_nonce(nonce)) throw std::invalid_argument("invalid nonce");
  return Survey{std::move(nonce), *code, std::move(text)};
}

// --- scripted sources --------------------------------------------------------

void ScriptedConsent::set(RoundRef round, bool yes) {
  for (auto& [r, answer] : answers_) {
    if (r == round) {
      answer = yes;
      return;
    }
  }
  answers_.emplace_back(round, yes);
}

bool ScriptedConsent::ask(RoundRef round, Millis) {
  for (const auto& [r, answer] : answers_)
    if (r == round) return answer;
  return fallback_;
}

ScriptedActivity::ScriptedActivity(std::vector<ActivityEvent> events) : events_(std::move(events)) {
  std::sort(events_.begin(), events_.end());
}

std::optional<Millis> ScriptedActivity::first_event_in(Millis from, Millis to) {
  const auto it = std::lower_bound(events_.begin(), events_.end(), ActivityEvent{from});
  if (it != events_.end() && it->timestamp_ms <= to) return it->timestamp_ms;
  return std::nullopt;
}

std::optional<SurveyAnswer> ScriptedSurvey::answer(SurveyCode suggested) {
  if (skip_) return std::nullopt;
  return SurveyAnswer{code_.value_or(suggested), text_};
}

// --- input files -------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_content_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw InputFileError("cannot open " + path.string());
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) fn(line, line_no);
  }
}

std::string where(const std::filesystem::path& path, int line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

}  // namespace

std::vector<ActivityEvent> read_activity_file(const std::filesystem::path& path) {
  std::vector<ActivityEvent> events;
  for_each_content_line(path, [&](std::string_view line, int line_no) {
    const auto ms = detail::parse_int(line);
    if (!ms) throw InputFileError(where(path, line_no) + ": expected a millisecond timestamp");
    events.push_back(ActivityEvent{*ms});
  });
  return events;
}

std::optional<std::vector<UptimeRecord>> read_uptime_file(const std::filesystem::path& path) {
  std::vector<UptimeRecord> records;
  bool ok = true;
  for_each_content_line(path, [&](std::string_view line, int) {
    const auto f = detail::split_fields(line);
    const auto ms = f.size() == 2 ? detail::parse_int(f[1]) : std::nullopt;
    if (!ms || (f[0] != "DOWN" && f[0] != "UP")) {
      ok = false;
      return;
    }
    records.push_back(UptimeRecord{f[0] == "DOWN" ? UptimeKind::Down : UptimeKind::Up, *ms});
  });
  if (!ok) return std::nullopt;
  return records;
}

ScriptedConsent read_consent_file(const std::filesystem::path& path) {
  ScriptedConsent consent(false);
  for_each_content_line(path, [&](std::string_view line, int line_no) {
    const auto f = detail::split_fields(line);
    const auto kind = f.size() == 3 ? parse_round_kind(f[0]) : std::nullopt;
    const auto index = f.size() == 3 ? detail::parse_int(f[1]) : std::nullopt;
    if (!kind || !index || *index < 0 || (f[2] != "yes" && f[2] != "no"))
      throw InputFileError(where(path, line_no) + ": expected `<CAL|EXE> <index> <yes|no>`");
    consent.set(RoundRef{*kind, static_cast<int>(*index)}, f[2] == "yes");
  });
  return consent;
}

// --- names -------------------------------------------------------------------

std::string_view to_string(ClientPhase phase) {
  switch (phase) {
    case ClientPhase::Syncing: return "SYNCING";
    case ClientPhase::Waiting: return "WAITING";
    case ClientPhase::Prompting: return "PROMPTING";
    case ClientPhase::Monitoring: return "MONITORING";
    case ClientPhase::Reporting: return "REPORTING";
    case ClientPhase::ExecutionPending: return "EXECUTION_PENDING";
    case ClientPhase::Certifying: return "CERTIFYING";
    case ClientPhase::Surveying: return "SURVEYING";
    case ClientPhase::Done: return "DONE";
  }
  return "DONE";
}

std::string_view to_string(RoundStatus status) {
  switch (status) {
    case RoundStatus::Reported: return "REPORTED";
    case RoundStatus::Declined: return "DECLINED";
    case RoundStatus::Violated: return "VIOLATED";
    case RoundStatus::Missed: return "MISSED";
    case RoundStatus::SyncFailed: return "SYNC_FAILED";
    case RoundStatus::Rejected: return "REJECTED";
    case RoundStatus::GaveUp: return "GAVE_UP";
    case RoundStatus::NotCompliant: return "NOT_COMPLIANT";
  }
  return "REJECTED";
}

// --- state machine -------------------------------------------------------------

ClientMachine::ClientMachine(ExperimentConfig config, std::string nonce, ClientOptions options,
                             Inputs inputs)
    : config_(std::move(config)), nonce_(std::move(nonce)), options_(options), inputs_(inputs) {
  config_.validate();
  if (!is_valid_nonce(nonce_)) throw std::invalid_argument("nonce must be 8-64 printable characters");
  if (options_.sync_samples < 0 || options_.sync_window == 0 || options_.retry_interval_ms <= 0)
    throw std::invalid_argument("invalid client options");
}

Step ClientMachine::send(std::string line) {
  sent_.push_back(line);
  Step s;
  s.send = std::move(line);
  return s;
}

Step ClientMachine::wake_at(Millis counter_ms) {
  Step s;
  s.wake_counter_ms = counter_ms;
  return s;
}

Step ClientMachine::finish(bool failed) {
  phase_ = ClientPhase::Done;
  failed_ = failed;
  Step s;
  s.done = true;
  return s;
}

Step ClientMachine::start(Millis local_now) {
  if (options_.sync_samples == 0) {
    estimate_ = ClockEstimate{0, 0, 1};
    has_estimate_ = true;
    return schedule_next(local_now);
  }
  return begin_sync(SyncPurpose::Initial, local_now);
}

Step ClientMachine::schedule_next(Millis local_now) {
  const auto next = next_wakeup(config_, estimate_.to_counter(local_now), options_.prompt_lead_ms,
                                cursor_);
  if (!next) return finish();
  cursor_ = config_.ordinal(next->round);
  current_ = next->round;
  phase_ = ClientPhase::Waiting;
  return wake_at(next->prompt_ms);
}

Step ClientMachine::begin_sync(SyncPurpose purpose, Millis local_now) {
  phase_ = ClientPhase::Syncing;
  sync_purpose_ = purpose;
  samples_.clear();
  sync_attempts_ = 0;
  retry_pending_ = false;
  pending_t1_ = local_now;
  return send(encode(SyncRequest{local_now}));
}

Step ClientMachine::sync_attempt_done(Millis local_now) {
  ++sync_attempts_;
  const bool enough = static_cast<int>(samples_.size()) >= options_.sync_samples;
  if (!enough && sync_attempts_ < options_.sync_max_attempts) {
    pending_t1_ = local_now;
    return send(encode(SyncRequest{local_now}));
  }
  try {
    estimate_ = best_estimate(samples_, options_.sync_window);
    has_estimate_ = true;
    return after_sync(true, local_now);
  } catch (const SyncError&) {
    return after_sync(false, local_now);
  }
}

Step ClientMachine::after_sync(bool ok, Millis local_now) {
  if (sync_purpose_ == SyncPurpose::Round) {
    if (!ok) return round_done(RoundStatus::SyncFailed, local_now);
    return begin_monitoring();
  }
  if (ok) return schedule_next(local_now);
  if (++initial_sync_rounds_ >= options_.initial_sync_attempts) return finish(true);
  retry_pending_ = true;
  return wake_at(estimate_.to_counter(local_now) + options_.retry_interval_ms);
}

Step ClientMachine::begin_monitoring() {
  phase_ = ClientPhase::Monitoring;
  return wake_at(config_.window_open(current_));
}

Step ClientMachine::send_report() {
  phase_ = ClientPhase::Reporting;
  retry_pending_ = false;
  return send(encode(Report{current_, nonce_, derive_token(config_.secret, current_)}));
}

Step ClientMachine::report_retry(Millis local_now, std::optional<RejectReason> reason) {
  const Millis next = estimate_.to_counter(local_now) + options_.retry_interval_ms;
  if (next <= config_.window_close(current_)) {
    retry_pending_ = true;
    return wake_at(next);
  }
  if (reason) return round_done(RoundStatus::Rejected, local_now, reason);
  return round_done(RoundStatus::GaveUp, local_now);
}

Step ClientMachine::round_done(RoundStatus status, Millis local_now,
                               std::optional<RejectReason> reason) {
  outcomes_.push_back(RoundOutcome{current_, status, reason});
  if (current_.is_exe()) {
    switch (status) {
      case RoundStatus::Declined: return begin_survey(SurveyCode::ChangedMind, false, local_now);
      case RoundStatus::Missed: return begin_survey(SurveyCode::Forgot, false, local_now);
      case RoundStatus::NotCompliant: return begin_survey(SurveyCode::Other, false, local_now);
      default: return finish();
    }
  }
  ++cursor_;
  return schedule_next(local_now);
}

Step ClientMachine::certify(Millis local_now) {
  phase_ = ClientPhase::Certifying;
  const auto records = inputs_.uptime.records();
  const auto verdict = records ? certify_shutdown(*records, config_, options_.start_tolerance_ms)
                               : Certification::Malformed;
  switch (verdict) {
    case Certification::Compliant:
      return send_report();
    case Certification::NotCompliant:
      return round_done(RoundStatus::NotCompliant, local_now);
    case Certification::Malformed:
      outcomes_.push_back(RoundOutcome{current_, RoundStatus::NotCompliant, std::nullopt});
      return begin_survey(SurveyCode::Obstacle, true, local_now);
  }
  return finish();
}

Step ClientMachine::begin_survey(SurveyCode suggested, bool force_code, Millis) {
  phase_ = ClientPhase::Surveying;
  auto answer = inputs_.survey.answer(suggested);
  if (!answer) return finish();
  survey_ = Survey{nonce_, force_code ? suggested : answer->code, std::move(answer->text)};
  survey_attempts_ = 0;
  return send_survey();
}

Step ClientMachine::send_survey() {
  ++survey_attempts_;
  retry_pending_ = false;
  return send(encode(*survey_));
}

Step ClientMachine::on_wake(Millis local_now) {
  const Millis now = estimate_.to_counter(local_now);
  switch (phase_) {
    case ClientPhase::Syncing:
      return begin_sync(SyncPurpose::Initial, local_now);

    case ClientPhase::Waiting: {
      const Millis start = config_.round_start(current_);
      if (current_.is_exe() && now >= config_.window_open(current_)) return certify(local_now);
      if (now > start) return round_done(RoundStatus::Missed, local_now);
      phase_ = ClientPhase::Prompting;
      if (!inputs_.consent.ask(current_, start)) return round_done(RoundStatus::Declined, local_now);
      if (current_.is_exe()) {
        phase_ = ClientPhase::ExecutionPending;
        return wake_at(config_.window_open(current_));
      }
      if (options_.sync_samples > 0 && options_.resync_each_round)
        return begin_sync(SyncPurpose::Round, local_now);
      return begin_monitoring();
    }

    case ClientPhase::Monitoring: {
      const Millis from = config_.round_start(current_);
      if (inputs_.activity.first_event_in(from, from + config_.delta_tau_ms))
        return round_done(RoundStatus::Violated, local_now);
      return send_report();
    }

    case ClientPhase::Reporting:
      return send_report();

    case ClientPhase::ExecutionPending:
      return certify(local_now);

    case ClientPhase::Surveying:
      return send_survey();

    case ClientPhase::Prompting:
    case ClientPhase::Certifying:
    case ClientPhase::Done:
      break;
  }
  return finish(failed_);
}

Step ClientMachine::on_reply(Millis local_now, std::string_view line) {
  const auto message = decode(line);
  switch (phase_) {
    case ClientPhase::Syncing:
      if (message) {
        if (const auto* r = std::get_if<SyncReply>(&*message); r && r->t1 == pending_t1_)
          samples_.push_back(SyncSample{r->t1, r->t2, r->t3, local_now});
      }
      return sync_attempt_done(local_now);

    case ClientPhase::Reporting:
      if (message) {
        if (const auto* ack = std::get_if<Ack>(&*message); ack && ack->round == current_)
          return round_done(RoundStatus::Reported, local_now);
        if (const auto* rej = std::get_if<Reject>(&*message)) {
          switch (rej->reason) {
            case RejectReason::Dup: return round_done(RoundStatus::Reported, local_now);
            case RejectReason::Early: return report_retry(local_now, rej->reason);
            default: return round_done(RoundStatus::Rejected, local_now, rej->reason);
          }
        }
      }
      return report_retry(local_now, std::nullopt);

    case ClientPhase::Surveying:
      if (message && std::holds_alternative<Ack>(*message)) {
        survey_acked_ = true;
        return finish();
      }
      return on_send_failed(local_now);

    default:
      return finish(failed_);
  }
}

Step ClientMachine::on_send_failed(Millis local_now) {
  switch (phase_) {
    case ClientPhase::Syncing:
      return sync_attempt_done(local_now);
    case ClientPhase::Reporting:
      return report_retry(local_now, std::nullopt);
    case ClientPhase::Surveying:
      if (survey_attempts_ < options_.survey_max_attempts) {
        retry_pending_ = true;
        return wake_at(estimate_.to_counter(local_now) + options_.retry_interval_ms);
      }
      return finish();
    default:
      return finish(failed_);
  }
}

void run_client(ClientMachine& machine, Transport& transport, Clock& clock) {
  Step step = machine.start(clock.now_ms());
  while (!step.done) {
    if (step.send) {
      const auto reply = transport.exchange(*step.send);
      step = reply ? machine.on_reply(clock.now_ms(), *reply) : machine.on_send_failed(clock.now_ms());
    } else if (step.wake_counter_ms) {
      wait_until(*step.wake_counter_ms, machine.estimate(), clock);
      step = machine.on_wake(clock.now_ms());
    } else {
      break;
    }
  }
}

}  // namespace rollcall

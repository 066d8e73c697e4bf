#include "rollcall/counter.hpp"

#include <algorithm>

#include "rollcall/detail/text.hpp"

namespace rollcall {

CounterState::CounterState(ExperimentConfig config, EventSink* log)
    : config_(std::move(config)), log_(log) {
  config_.validate();
  for (const auto round : config_.rounds()) {
    tallies_.push_back(RoundTally{round, 0, config_.window_open(round), config_.window_close(round),
                                  false});
    tokens_.push_back(derive_token(config_.secret, round));
  }
}

RoundTally& CounterState::tally_mut(RoundRef round) { return tallies_[config_.ordinal(round)]; }

const RoundTally& CounterState::tally(RoundRef round) const {
  if (!config_.has_round(round)) throw CounterError("no such round: " + to_string(round));
  return tallies_[config_.ordinal(round)];
}

void CounterState::log(Millis at, LogKind kind, std::string payload) {
  if (log_) log_->append(LogRecord{at, kind, std::move(payload)});
}

Message CounterState::reject(RejectReason reason, std::string_view raw, Millis arrival_ms) {
  log(arrival_ms, LogKind::Reject, std::string(raw));
  return Reject{reason};
}

Message CounterState::accept_report(const Report& report, Millis arrival_ms) {
  return accept_report(report, encode(report), arrival_ms);
}

Message CounterState::accept_report(const Report& report, std::string_view raw, Millis arrival_ms) {
  const bool round_exists = config_.has_round(report.round);
  const std::string& expected = round_exists ? tokens_[config_.ordinal(report.round)]
                                             : derive_token(config_.secret, report.round);
  if (report.token != expected) return reject(RejectReason::BadToken, raw, arrival_ms);
  if (!round_exists) return reject(RejectReason::BadRound, raw, arrival_ms);

  RoundTally& t = tally_mut(report.round);
  if (arrival_ms < t.window_open_ms) return reject(RejectReason::Early, raw, arrival_ms);
  if (t.closed || arrival_ms > t.window_close_ms) return reject(RejectReason::Late, raw, arrival_ms);
  if (seen_.contains({report.round, report.nonce})) return reject(RejectReason::Dup, raw, arrival_ms);

  log(arrival_ms, LogKind::Accept, encode(report));
  seen_.emplace(report.round, report.nonce);
  ++t.count;
  return Ack{report.round};
}

Ack CounterState::accept_survey(const Survey& survey, Millis arrival_ms) {
  log(arrival_ms, LogKind::Survey, encode(survey));
  surveys_.push_back(SurveyRecord{arrival_ms, survey});
  return Ack{RoundRef::exe()};
}

const RoundTally& CounterState::close_round(RoundRef round, Millis now_ms) {
  if (!config_.has_round(round)) throw CounterError("no such round: " + to_string(round));
  RoundTally& t = tally_mut(round);
  if (t.closed) return t;
  if (now_ms <= t.window_close_ms)
    throw CounterError("round " + to_string(round) + " cannot close before its window ends");
  log(now_ms, LogKind::Close, to_string(round) + " " + std::to_string(t.count));
  t.closed = true;
  return t;
}

std::vector<RoundRef> CounterState::close_due(Millis now_ms) {
  std::vector<RoundRef> closed;
  for (auto& t : tallies_) {
    if (!t.closed && now_ms > t.window_close_ms) {
      close_round(t.round, now_ms);
      closed.push_back(t.round);
    }
  }
  return closed;
}

std::string CounterState::handle_line(std::string_view line, Millis arrival_ms) {
  auto message = decode(line);
  if (!message) return encode(reject(RejectReason::Malformed, line, arrival_ms));
  if (const auto* sync = std::get_if<SyncRequest>(&*message))
    return encode(SyncReply{sync->t1, arrival_ms, arrival_ms});
  if (const auto* report = std::get_if<Report>(&*message))
    return encode(accept_report(*report, line, arrival_ms));
  if (const auto* survey = std::get_if<Survey>(&*message))
    return encode(accept_survey(*survey, arrival_ms));
  // Server-to-client messages are not valid requests.
  return encode(reject(RejectReason::Malformed, line, arrival_ms));
}

Distribution CounterState::distribution() const {
  Distribution d;
  for (const auto& t : tallies_) {
    if (t.round.is_exe()) {
      if (t.closed) d.n_star = t.count;
      continue;
    }
    if (!t.closed) throw CounterError("calibration round " + to_string(t.round) + " is still open");
    d.counts.push_back(t.count);
  }
  return d;
}

bool CounterState::all_closed() const {
  return std::all_of(tallies_.begin(), tallies_.end(), [](const auto& t) { return t.closed; });
}

bool CounterState::same_state(const CounterState& other) const {
  return config_ == other.config_ && tallies_ == other.tallies_ && seen_ == other.seen_ &&
         surveys_ == other.surveys_;
}

CounterState CounterState::replay(ExperimentConfig config, const std::vector<LogRecord>& records,
                                  EventSink* log) {
  CounterState state(std::move(config), nullptr);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto where = " (log record " + std::to_string(i + 1) + ")";
    switch (r.kind) {
      case LogKind::Reject:
        break;
      case LogKind::Accept: {
        const auto m = decode(r.payload);
        const auto* report = m ? std::get_if<Report>(&*m) : nullptr;
        if (!report) throw LogError("ACCEPT payload is not a report" + where);
        const auto reply = state.accept_report(*report, r.at_ms);
        if (!std::holds_alternative<Ack>(reply))
          throw LogError("ACCEPT record does not re-validate: " +
                         std::string(to_string(std::get<Reject>(reply).reason)) + where);
        break;
      }
      case LogKind::Survey: {
        const auto m = decode(r.payload);
        const auto* survey = m ? std::get_if<Survey>(&*m) : nullptr;
        if (!survey) throw LogError("SURVEY payload is not a survey" + where);
        state.accept_survey(*survey, r.at_ms);
        break;
      }
      case LogKind::Close: {
        const auto f = detail::split_fields(r.payload);
        const auto kind = f.size() == 3 ? parse_round_kind(f[0]) : std::nullopt;
        const auto index = f.size() == 3 ? detail::parse_int(f[1]) : std::nullopt;
        const auto count = f.size() == 3 ? detail::parse_int(f[2]) : std::nullopt;
        if (!kind || !index || !count) throw LogError("malformed CLOSE record" + where);
        const RoundRef round{*kind, static_cast<int>(*index)};
        if (!state.config_.has_round(round)) throw LogError("CLOSE for unknown round" + where);
        const auto& t = state.close_round(round, r.at_ms);
        if (t.count != *count) throw LogError("CLOSE count disagrees with ACCEPT records" + where);
        break;
      }
    }
  }
  state.log_ = log;
  return state;
}

Distribution distribution_from_log(const std::vector<LogRecord>& records,
                                   const ExperimentConfig* config) {
  if (config) {
    const auto state = CounterState::replay(*config, records);
    if (!state.all_closed()) throw LogError("log does not close every round");
    return state.distribution();
  }

  std::map<RoundRef, std::int64_t> closed;
  std::map<RoundRef, std::set<std::string>> accepted;
  for (const auto& r : records) {
    if (r.kind == LogKind::Accept) {
      const auto m = decode(r.payload);
      const auto* report = m ? std::get_if<Report>(&*m) : nullptr;
      if (!report) throw LogError("ACCEPT payload is not a report: " + r.payload);
      accepted[report->round].insert(report->nonce);
    } else if (r.kind == LogKind::Close) {
      const auto f = detail::split_fields(r.payload);
      const auto kind = f.size() == 3 ? parse_round_kind(f[0]) : std::nullopt;
      const auto index = f.size() == 3 ? detail::parse_int(f[1]) : std::nullopt;
      const auto count = f.size() == 3 ? detail::parse_int(f[2]) : std::nullopt;
      if (!kind || !index || !count || *count < 0) throw LogError("malformed CLOSE record: " + r.payload);
      const RoundRef round{*kind, static_cast<int>(*index)};
      if (!closed.emplace(round, *count).second)
        throw LogError("round " + to_string(round) + " closed twice");
    }
  }
  for (const auto& [round, nonces] : accepted) {
    const auto it = closed.find(round);
    if (it != closed.end() && it->second != static_cast<std::int64_t>(nonces.size()))
      throw LogError("CLOSE count for " + to_string(round) + " disagrees with ACCEPT records");
  }
  for (const auto& [round, count] : closed) {
    if (count != 0 && !accepted.contains(round))
      throw LogError("CLOSE count for " + to_string(round) + " disagrees with ACCEPT records");
  }

  Distribution d;
  for (const auto& [round, count] : closed) {
    if (round.is_exe()) continue;
    if (round.index != static_cast<int>(d.counts.size()))
      throw LogError("calibration round CAL " + std::to_string(d.counts.size()) + " is not closed");
    d.counts.push_back(count);
  }
  if (d.counts.size() < 2) throw LogError("log closes fewer than two calibration rounds");
  const auto exe = closed.find(RoundRef::exe());
  if (exe == closed.end()) throw LogError("execution round is not closed");
  d.n_star = exe->second;
  return d;
}

std::string CounterService::handle(std::string_view line) {
  const Millis received = clock_.now_ms();
  if (line.starts_with("SYNC ")) {
    if (auto m = decode(line); m && std::holds_alternative<SyncRequest>(*m))
      return encode(SyncReply{std::get<SyncRequest>(*m).t1, received, clock_.now_ms()});
  }
  std::lock_guard lock(mutex_);
  return state_.handle_line(line, received);
}

std::vector<RoundRef> CounterService::tick() {
  const Millis now = clock_.now_ms();
  std::lock_guard lock(mutex_);
  return state_.close_due(now);
}

std::vector<RoundTally> CounterService::tallies() const {
  std::lock_guard lock(mutex_);
  return state_.tallies();
}

Distribution CounterService::distribution() const {
  std::lock_guard lock(mutex_);
  return state_.distribution();
}

bool CounterService::all_closed() const {
  std::lock_guard lock(mutex_);
  return state_.all_closed();
}

CounterState CounterService::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

}  // namespace rollcall

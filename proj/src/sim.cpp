#include "rollcall/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <queue>
#include <random>
#include <stdexcept>
#include <thread>

namespace rollcall::sim {

std::string_view to_string(Scenario scenario) {
  return scenario == Scenario::Defense ? "DEFENSE" : "COPING";
}

std::optional<Scenario> parse_scenario(std::string_view word) {
  if (word == "DEFENSE" || word == "defense" || word == "D") return Scenario::Defense;
  if (word == "COPING" || word == "coping" || word == "C") return Scenario::Coping;
  return std::nullopt;
}

ExperimentConfig compressed_config(int n_rounds, std::string secret) {
  return ExperimentConfig::make("sim", std::move(secret), 5'000, 10'000, n_rounds, 2'000, 3'000);
}

ClientOptions sim_client_options() {
  ClientOptions o;
  o.prompt_lead_ms = 1'000;
  o.start_tolerance_ms = 500;
  o.sync_samples = 2;
  o.sync_max_attempts = 12;
  o.sync_window = 8;
  o.resync_each_round = false;
  o.initial_sync_attempts = 3;
  o.retry_interval_ms = 100;
  o.survey_max_attempts = 5;
  return o;
}

void ScenarioSpec::validate() const {
  config.validate();
  if (m_clients == 0) throw std::invalid_argument("m_clients must be positive");
  if (!(p_participate >= 0.0 && p_participate <= 1.0))
    throw std::invalid_argument("p_participate must lie in [0, 1]");
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in [0, 1]");
  if (net.latency_min_ms < 0 || net.latency_max_ms < net.latency_min_ms)
    throw std::invalid_argument("latency bounds must satisfy 0 <= min <= max");
  if (!(net.loss >= 0.0 && net.loss < 1.0)) throw std::invalid_argument("loss must lie in [0, 1)");
  if (net.asymmetry_ms < 0) throw std::invalid_argument("asymmetry must be non-negative");
  if (net.request_timeout_ms <= 2 * net.latency_max_ms + net.asymmetry_ms)
    throw std::invalid_argument("request timeout must exceed the worst round trip");
  if (max_clock_offset_ms < 0) throw std::invalid_argument("clock offset bound must be non-negative");
  if (!(alpha > 0.0 && alpha <= 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5]");
}

double ScenarioSpec::execution_probability() const {
  return scenario == Scenario::Defense ? p_participate : p_participate * (1.0 - delta);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

namespace {

enum : std::uint64_t { kBehaviourStream = 1, kNetworkStream = 2 };

struct SimClient {
  ScriptedConsent consent{false};
  ScriptedActivity activity;
  ScriptedUptime uptime;
  ScriptedSurvey survey;
  std::unique_ptr<ClientMachine> machine;
  Millis clock_offset = 0;  // local = true + clock_offset
  std::mt19937_64 net_rng;
  std::uint64_t next_req = 0;
  std::uint64_t outstanding = 0;  // 0: no request in flight
};

enum class EventType : std::uint8_t { Wake, AtCounter, AtClient, Timeout, Close };

struct Event {
  Millis at = 0;
  std::uint64_t seq = 0;
  EventType type = EventType::Wake;
  bool duplicate = false;
  std::uint32_t client = 0;
  std::uint64_t req = 0;
  std::string line;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

class Engine {
 public:
  Engine(const ScenarioSpec& spec, const FaultPlan& faults)
      : spec_(spec),
        faults_(faults),
        counter_(spec.config, spec.record_log ? &log_ : nullptr),
        loss_(std::min(1.0, spec.net.loss + faults.extra_loss)) {}

  SimOutcome run();

 private:
  void build_clients();
  void push(Event e) {
    e.seq = seq_++;
    queue_.push(std::move(e));
  }
  void apply(std::uint32_t c, const Step& step, Millis now);
  bool dropped(SimClient& c, Millis now);
  Millis latency(SimClient& c, bool upstream);
  void trace(Millis at, std::string_view what, std::uint32_t client, std::string_view line);

  const ScenarioSpec& spec_;
  const FaultPlan& faults_;
  MemoryEventLog log_;
  CounterState counter_;
  double loss_;
  std::vector<std::unique_ptr<SimClient>> clients_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t seq_ = 0;
  SimOutcome out_;
};

void Engine::build_clients() {
  const auto& cfg = spec_.config;
  const double p = spec_.p_participate;
  const double p_exe = spec_.execution_probability();
  out_.scripted.assign(static_cast<std::size_t>(cfg.n_rounds) + 1, 0);

  clients_.reserve(spec_.m_clients);
  for (std::size_t i = 0; i < spec_.m_clients; ++i) {
    auto c = std::make_unique<SimClient>();
    std::mt19937_64 behaviour(derive_seed(spec_.seed, kBehaviourStream, i));
    c->net_rng.seed(derive_seed(spec_.seed, kNetworkStream, i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int r = 0; r < cfg.n_rounds; ++r) {
      const bool yes = unit(behaviour) < p;
      c->consent.set(RoundRef::cal(r), yes);
      out_.scripted[static_cast<std::size_t>(r)] += yes;
    }
    const double u = unit(behaviour);
    const bool exe_yes = u < p_exe;
    const bool suppressed = !exe_yes && u < p;
    c->consent.set(RoundRef::exe(), exe_yes);
    out_.scripted.back() += exe_yes;
    if (exe_yes) {
      c->uptime = ScriptedUptime(std::vector<UptimeRecord>{
          {UptimeKind::Down, cfg.t_star_ms - 1'000},
          {UptimeKind::Up, cfg.t_star_ms + cfg.delta_tau_ms + 200}});
    }
    c->survey = ScriptedSurvey(suppressed ? SurveyCode::Interference : SurveyCode::Forgot, "");

    ClientOptions options = spec_.client;
    if (spec_.max_clock_offset_ms > 0) {
      std::uniform_int_distribution<Millis> offset(-spec_.max_clock_offset_ms,
                                                   spec_.max_clock_offset_ms);
      c->clock_offset = offset(c->net_rng);
    }
    for (const auto& f : faults_.clocks) {
      if (f.client == i) {
        c->clock_offset = -f.lag_ms;
        options.sync_samples = 0;
      }
    }

    char nonce[32];
    std::snprintf(nonce, sizeof nonce, "client-%06zu", i);
    c->machine = std::make_unique<ClientMachine>(
        cfg, nonce, options,
        ClientMachine::Inputs{c->consent, c->activity, c->uptime, c->survey});
    clients_.push_back(std::move(c));
  }
}

void Engine::trace(Millis at, std::string_view what, std::uint32_t client, std::string_view line) {
  if (!spec_.record_trace) return;
  std::string s = std::to_string(at);
  s += ' ';
  s += what;
  s += ' ';
  s += std::to_string(client);
  s += ' ';
  s += line;
  out_.event_trace.push_back(std::move(s));
}

bool Engine::dropped(SimClient& c, Millis now) {
  for (const auto& b : faults_.bursts)
    if (now >= b.from_ms && now <= b.to_ms) return true;
  if (loss_ <= 0.0) return false;
  return std::bernoulli_distribution(loss_)(c.net_rng);
}

Millis Engine::latency(SimClient& c, bool upstream) {
  std::uniform_int_distribution<Millis> d(spec_.net.latency_min_ms, spec_.net.latency_max_ms);
  return d(c.net_rng) + (upstream ? spec_.net.asymmetry_ms : 0);
}

void Engine::apply(std::uint32_t id, const Step& step, Millis now) {
  SimClient& c = *clients_[id];
  if (step.done) return;
  if (step.send) {
    const std::uint64_t req = ++c.next_req;
    c.outstanding = req;
    push(Event{now + spec_.net.request_timeout_ms, 0, EventType::Timeout, false, id, req, {}});
    if (dropped(c, now)) {
      trace(now, "DROP_UP", id, *step.send);
      return;
    }
    const Millis arrive = now + latency(c, true);
    trace(now, "UP", id, *step.send);
    const bool dup = faults_.duplicate_reports && step.send->starts_with("REPORT ");
    if (dup) push(Event{arrive, 0, EventType::AtCounter, true, id, req, *step.send});
    push(Event{arrive, 0, EventType::AtCounter, false, id, req, *step.send});
    return;
  }
  if (step.wake_counter_ms) {
    // wait_until: fire once local + offset_estimate >= target.
    const Millis local_target = c.machine->estimate().to_local(*step.wake_counter_ms);
    push(Event{std::max(now, local_target - c.clock_offset), 0, EventType::Wake, false, id, 0, {}});
  }
}

SimOutcome Engine::run() {
  spec_.validate();
  build_clients();
  const auto& cfg = spec_.config;

  for (const auto round : cfg.rounds())
    push(Event{cfg.window_close(round) + 1, 0, EventType::Close, false, 0,
               static_cast<std::uint64_t>(cfg.ordinal(round)), {}});
  for (std::uint32_t i = 0; i < clients_.size(); ++i) {
    const Millis local = clients_[i]->clock_offset;  // true time 0
    apply(i, clients_[i]->machine->start(local), 0);
  }

  while (!queue_.empty()) {
    Event e = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    ++out_.events_processed;
    const Millis now = e.at;

    switch (e.type) {
      case EventType::Close:
        counter_.close_round(cfg.round_at(e.req), now);
        break;

      case EventType::AtCounter: {
        std::string reply = counter_.handle_line(e.line, now);
        if (e.duplicate) {
          trace(now, "DUP", e.client, e.line);
          break;
        }
        SimClient& c = *clients_[e.client];
        if (dropped(c, now)) {
          trace(now, "DROP_DOWN", e.client, reply);
          break;
        }
        trace(now, "DOWN", e.client, reply);
        push(Event{now + latency(c, false), 0, EventType::AtClient, false, e.client, e.req,
                   std::move(reply)});
        break;
      }

      case EventType::AtClient: {
        SimClient& c = *clients_[e.client];
        if (c.outstanding != e.req) break;  // reply after timeout
        c.outstanding = 0;
        apply(e.client, c.machine->on_reply(now + c.clock_offset, e.line), now);
        break;
      }

      case EventType::Timeout: {
        SimClient& c = *clients_[e.client];
        if (c.outstanding != e.req) break;
        c.outstanding = 0;
        apply(e.client, c.machine->on_send_failed(now + c.clock_offset), now);
        break;
      }

      case EventType::Wake: {
        SimClient& c = *clients_[e.client];
        apply(e.client, c.machine->on_wake(now + c.clock_offset), now);
        break;
      }
    }
  }

  const auto dist = counter_.distribution();
  out_.counts = dist.counts;
  out_.n_star = dist.n_star.value_or(0);
  out_.surveys = counter_.surveys();
  try {
    out_.analysis = analyze(summarize(out_.counts), out_.n_star, spec_.alpha);
  } catch (const StatsError& e) {
    out_.analysis_error = e.what();
  }
  if (spec_.record_log) out_.counter_log = log_.text();
  out_.client_outcomes.reserve(clients_.size());
  for (const auto& c : clients_) out_.client_outcomes.push_back(c->machine->outcomes());
  return std::move(out_);
}

}  // namespace

SimOutcome run_scenario(const ScenarioSpec& spec) { return inject_faults(spec, FaultPlan{}); }

SimOutcome inject_faults(const ScenarioSpec& spec, const FaultPlan& faults) {
  if (!(faults.extra_loss >= 0.0 && faults.extra_loss < 1.0))
    throw std::invalid_argument("extra_loss must lie in [0, 1)");
  for (const auto& f : faults.clocks)
    if (f.client >= spec.m_clients) throw std::invalid_argument("clock fault names unknown client");
  Engine engine(spec, faults);
  return engine.run();
}

std::vector<RunSummary> monte_carlo(const ScenarioSpec& spec, std::size_t runs, unsigned threads) {
  spec.validate();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(runs, 1)));

  std::vector<RunSummary> out(runs);
  auto worker = [&](unsigned t) {
    ScenarioSpec s = spec;
    s.record_trace = false;
    s.record_log = false;
    for (std::size_t run = t; run < runs; run += threads) {
      s.seed = derive_seed(spec.seed, run);
      auto o = run_scenario(s);
      out[run] = RunSummary{std::move(o.counts), o.n_star, o.analysis};
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  }
  return out;
}

std::vector<PowerRow> power_curve(const ScenarioSpec& base, std::span<const double> deltas,
                                  std::size_t runs, double alpha, unsigned threads) {
  if (runs < 100) throw std::invalid_argument("power_curve needs at least 100 runs");
  std::vector<PowerRow> rows;
  for (const double delta : deltas) {
    ScenarioSpec s = base;
    s.scenario = Scenario::Coping;
    s.delta = delta;
    s.alpha = alpha;
    const auto results = monte_carlo(s, runs, threads);

    PowerRow row;
    row.delta = delta;
    row.runs = runs;
    std::size_t detected = 0;
    double z_sum = 0.0;
    for (const auto& r : results) {
      if (!r.analysis) continue;
      ++row.analyzed;
      z_sum += r.analysis->z;
      detected += r.analysis->verdict == Verdict::CopingEvidence;
    }
    // Runs that could not be analyzed count as not detected.
    const double n = static_cast<double>(runs);
    row.detection_rate = static_cast<double>(detected) / n;
    row.rate_stderr = std::sqrt(row.detection_rate * (1.0 - row.detection_rate) / n);
    if (row.analyzed > 0) row.mean_z = z_sum / static_cast<double>(row.analyzed);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rollcall::sim

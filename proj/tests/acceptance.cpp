// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "generators.hpp"
#include "oracles.hpp"
#include "rollcall/client.hpp"
#include "rollcall/counter.hpp"
#include "rollcall/net.hpp"
#include "rollcall/protocol.hpp"
#include "rollcall/sim.hpp"
#include "rollcall/stats.hpp"
#include "rollcall/timesync.hpp"

extern char** environ;

using namespace rollcall;
namespace fs = std::filesystem;
using Clock_ = std::chrono::steady_clock;

namespace {

// Pinned tolerances and limits.
constexpr int kRoundTripMessages = 10'000;
constexpr double kRoundTripLimitS = 5.0;
constexpr std::size_t kMinTokenGoldens = 5;
constexpr Millis kOffsetRange = 5'000;
constexpr int kStatsInputs = 1'000;
constexpr double kStatsRelTol = 1e-9;
constexpr int kCdfPoints = 1'000;
constexpr double kCdfAbsTol = 1e-7;
constexpr double kCdfZeroTol = 1e-12;
constexpr double kExampleZ = -3.1623;
constexpr double kExampleConfidence = 0.9992;
constexpr double kExampleTol = 1e-3;
constexpr std::size_t kMcClients = 1'000;
constexpr double kMcP = 0.5;
constexpr int kMcRounds = 10;
constexpr double kMcAlpha = 0.05;
constexpr std::size_t kNullRuns = 500;
constexpr double kFprLow = 0.03;
constexpr double kFprHigh = 0.13;
constexpr double kMeanZBound = 0.3;
constexpr double kMcLimitS = 120.0;
constexpr std::size_t kPowerRuns = 200;
constexpr double kPowerDetectAtSmallDelta = 0.99;
constexpr std::size_t kLoopbackClients = 50;
constexpr int kLoopbackRounds = 3;
constexpr double kLoopbackLossRate = 0.10;
constexpr double kLoopbackLimitS = 60.0;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << id << ' ' << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock_::time_point start) {
  return std::chrono::duration<double>(Clock_::now() - start).count();
}

std::string num(double x, int precision = 6) {
  std::ostringstream o;
  o.precision(precision);
  o << x;
  return o.str();
}

// --- 1 ---------------------------------------------------------------------

void protocol_round_trip() {
  const auto start = Clock_::now();
  std::mt19937_64 rng(1);
  int bad = 0;
  for (int i = 0; i < kRoundTripMessages; ++i) {
    const Message m = gen::message(rng);
    const auto back = decode(encode(m));
    if (!back || *back != m) ++bad;
  }
  const double s = seconds_since(start);
  report(1, "protocol round-trip", bad == 0 && s < kRoundTripLimitS,
         std::to_string(kRoundTripMessages) + " messages, " + std::to_string(bad) + " mismatches, " +
             num(s, 3) + " s (limit " + num(kRoundTripLimitS) + " s)");
}

// --- 2 ---------------------------------------------------------------------

void token_goldens() {
  std::size_t matched = 0;
  for (const auto& g : oracle::kTokenGoldens) matched += derive_token(g.secret, g.round) == g.token;
  const auto total = oracle::kTokenGoldens.size();
  report(2, "token goldens", total >= kMinTokenGoldens && matched == total,
         std::to_string(matched) + "/" + std::to_string(total) + " exact matches against SHA-256 oracle");
}

// --- 3 ---------------------------------------------------------------------

SyncSample exchange(Millis t1, Millis offset, Millis d1, Millis d2, Millis hold) {
  const Millis t2 = t1 + d1 + offset;
  const Millis t3 = t2 + hold;
  return {t1, t2, t3, t3 - offset + d2};
}

void time_sync() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Millis> delay(0, 500), hold(0, 20), t1(0, 2'000'000'000'000);
  int sym_bad = 0;
  for (Millis o = -kOffsetRange; o <= kOffsetRange; ++o) {
    const Millis d = delay(rng);
    const auto e = estimate(exchange(t1(rng), o, d, d, hold(rng)));
    if (!e || e->offset_ms != o) ++sym_bad;
    // Same offset through the min-delay filter with noisy companions.
    std::vector<SyncSample> s{exchange(0, o, d + 7, d + 90, 1), exchange(10, o, d, d, 2),
                              exchange(20, o, d + 40, d + 3, 0)};
    if (best_estimate(s).offset_ms != o) ++sym_bad;
  }

  // Asymmetric legs: the error is exactly half the difference. Integer
  // milliseconds make that exact for even differences; odd ones are
  // truncated toward zero by half a millisecond.
  int asym_bad = 0, asym_even = 0, asym_odd = 0;
  std::uniform_int_distribution<Millis> off(-kOffsetRange, kOffsetRange);
  for (Millis d1 = 0; d1 <= 200; d1 += 1) {
    for (Millis d2 = 0; d2 <= 200; d2 += 3) {
      const Millis o = off(rng);
      const auto e = estimate(exchange(t1(rng), o, d1, d2, hold(rng)));
      if (!e) {
        ++asym_bad;
        continue;
      }
      const double err = std::abs(static_cast<double>(e->offset_ms - o));
      const double half = std::abs(static_cast<double>(d1 - d2)) / 2.0;
      if ((d1 - d2) % 2 == 0) {
        ++asym_even;
        if (err != half) ++asym_bad;
      } else {
        ++asym_odd;
        if (std::abs(err - half) != 0.5 || e->offset_ms != (2 * o + d1 - d2) / 2) ++asym_bad;
      }
    }
  }
  report(3, "time sync", sym_bad == 0 && asym_bad == 0,
         "offsets -5000..5000 exact (" + std::to_string(sym_bad) + " misses); asymmetric error = |d1-d2|/2 on " +
             std::to_string(asym_even) + " even pairs, within integer truncation on " +
             std::to_string(asym_odd) + " odd pairs (" + std::to_string(asym_bad) + " misses)");
}

// --- 4 ---------------------------------------------------------------------

void stats_oracle() {
  std::mt19937_64 rng(4);
  double worst_rel = 0.0;
  for (int i = 0; i < kStatsInputs; ++i) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 60)(rng);
    const auto base = std::uniform_int_distribution<std::int64_t>(1, 1'000'000)(rng);
    const auto spread = std::uniform_int_distribution<std::int64_t>(1, 10'000)(rng);
    std::vector<std::int64_t> counts(n);
    for (auto& c : counts) c = base + std::uniform_int_distribution<std::int64_t>(0, spread)(rng);
    counts[0] = base;
    counts[1] = base + spread;  // never constant
    const auto n_star = std::uniform_int_distribution<std::int64_t>(0, 1'020'000)(rng);

    const auto ref = oracle::two_pass(counts);
    const long double zref = (static_cast<long double>(n_star) - ref.mean) / ref.stddev;
    const auto d = summarize(counts);
    auto rel = [](double got, long double want) {
      const double w = static_cast<double>(want);
      return std::abs(got - w) / std::max(std::abs(w), 1.0);
    };
    worst_rel = std::max({worst_rel, rel(d.mean, ref.mean), rel(d.stddev, ref.stddev),
                          rel(z_score(d, n_star), zref)});
  }

  std::uniform_real_distribution<double> zdist(-8.5, 8.5);
  double worst_abs = 0.0;
  for (int i = 0; i < kCdfPoints; ++i) {
    const double z = zdist(rng);
    worst_abs = std::max(worst_abs,
                         std::abs(normal_cdf(z) - static_cast<double>(oracle::reference_normal_cdf(z))));
  }
  for (const auto& g : oracle::kCdfGoldens) worst_abs = std::max(worst_abs, std::abs(normal_cdf(g.z) - g.phi));
  const double zero_err = std::abs(normal_cdf(0.0) - 0.5);

  report(4, "statistics oracle",
         worst_rel <= kStatsRelTol && worst_abs <= kCdfAbsTol && zero_err <= kCdfZeroTol,
         "summarize/z_score worst rel err " + num(worst_rel, 3) + " (tol 1e-9) over " +
             std::to_string(kStatsInputs) + " inputs; normal_cdf worst abs err " + num(worst_abs, 3) +
             " (tol 1e-7) over " + std::to_string(kCdfPoints) + " points + goldens; |Phi(0)-0.5| = " +
             num(zero_err, 3));
}

// --- 5 ---------------------------------------------------------------------

void decision_rule() {
  const std::vector<std::int64_t> counts{98, 102, 100, 96, 104};
  const auto r = analyze(summarize(counts), 90, kMcAlpha);
  const bool ok = std::abs(r.z - kExampleZ) <= kExampleTol &&
                  std::abs(r.confidence - kExampleConfidence) <= kExampleTol &&
                  r.verdict == Verdict::CopingEvidence;
  report(5, "decision rule example", ok,
         "z = " + num(r.z, 8) + ", confidence = " + num(r.confidence, 8) + ", " +
             std::string(to_string(r.verdict)));
}

// --- 6, 7 ------------------------------------------------------------------

sim::ScenarioSpec mc_base(std::uint64_t seed) {
  sim::ScenarioSpec s;
  s.m_clients = kMcClients;
  s.p_participate = kMcP;
  s.config = sim::compressed_config(kMcRounds);
  s.alpha = kMcAlpha;
  s.seed = seed;
  return s;
}

void null_calibration() {
  const auto start = Clock_::now();
  const auto runs = sim::monte_carlo(mc_base(6), kNullRuns);
  std::size_t positives = 0, analyzed = 0, faithful = 0;
  double z_sum = 0.0;
  for (const auto& r : runs) {
    if (!r.analysis) continue;
    ++analyzed;
    z_sum += r.analysis->z;
    positives += r.analysis->verdict == Verdict::CopingEvidence;
    faithful += r.analysis->verdict != Verdict::UnstableCalibration;
  }
  const double fpr = static_cast<double>(positives) / static_cast<double>(kNullRuns);
  const double mean_z = analyzed ? z_sum / static_cast<double>(analyzed) : NAN;
  const double s = seconds_since(start);
  report(6, "null calibration (DEFENSE)",
         analyzed == kNullRuns && fpr >= kFprLow && fpr <= kFprHigh && std::abs(mean_z) < kMeanZBound &&
             s < kMcLimitS,
         std::to_string(kNullRuns) + " runs, FPR " + num(fpr, 4) + " (range [0.03, 0.13]), mean z " +
             num(mean_z, 4) + " (bound 0.3), " + num(s, 3) + " s");
}

void power() {
  const auto start = Clock_::now();
  const double deltas[] = {0.2, 1.0};
  const auto rows = sim::power_curve(mc_base(7), deltas, kPowerRuns, kMcAlpha);

  auto full = mc_base(7);
  full.scenario = sim::Scenario::Coping;
  full.delta = 1.0;
  const auto full_runs = sim::monte_carlo(full, kPowerRuns);
  std::size_t zero_n_star = 0;
  for (const auto& r : full_runs) zero_n_star += r.n_star == 0;
  const double s = seconds_since(start);

  const bool ok = rows[0].detection_rate > kPowerDetectAtSmallDelta && rows[1].detection_rate == 1.0 &&
                  zero_n_star == kPowerRuns && s < kMcLimitS;
  report(7, "power (COPING)", ok,
         "delta 0.2 detection " + num(rows[0].detection_rate, 4) + " (> 0.99, mean z " +
             num(rows[0].mean_z, 4) + "); delta 1.0 detection " + num(rows[1].detection_rate, 4) +
             " with N* = 0 in " + std::to_string(zero_n_star) + "/" + std::to_string(kPowerRuns) +
             " runs; " + std::to_string(kPowerRuns) + " runs per delta, " + num(s, 3) + " s");
}

// --- 8 ---------------------------------------------------------------------

enum class Fault { None, Duplicate, Loss };

/// Wraps a transport with duplicated or lost deliveries. A loss drops the
/// request before it leaves or the reply after the counter processed it.
class FaultyTransport final : public Transport {
 public:
  FaultyTransport(Transport& inner, Fault fault, std::uint64_t seed)
      : inner_(inner), fault_(fault), rng_(seed) {}

  std::optional<std::string> exchange(std::string_view line) override {
    if (fault_ == Fault::Duplicate && line.starts_with("REPORT ")) {
      inner_.exchange(line);
      return inner_.exchange(line);
    }
    if (fault_ == Fault::Loss && std::bernoulli_distribution(kLoopbackLossRate)(rng_)) {
      if (std::bernoulli_distribution(0.5)(rng_)) return std::nullopt;
      inner_.exchange(line);
      return std::nullopt;
    }
    return inner_.exchange(line);
  }

 private:
  Transport& inner_;
  Fault fault_;
  std::mt19937_64 rng_;
};

struct Script {
  std::vector<ScriptedConsent> consent;
  std::vector<std::vector<ActivityEvent>> activity;
  std::vector<std::vector<UptimeRecord>> uptime;
  std::vector<std::int64_t> expected;  // per round ordinal
};

Script make_script(const ExperimentConfig& c, std::size_t clients) {
  Script s;
  std::mt19937_64 rng(8);
  std::bernoulli_distribution yes(0.7), busy(0.2), shut(0.8);
  s.expected.assign(c.rounds().size(), 0);
  for (std::size_t i = 0; i < clients; ++i) {
    ScriptedConsent consent(false);
    std::vector<ActivityEvent> events;
    std::vector<UptimeRecord> uptime;
    for (const auto round : c.rounds()) {
      const bool agree = yes(rng);
      consent.set(round, agree);
      bool complies = agree;
      if (round.is_exe()) {
        if (shut(rng)) {
          uptime = {{UptimeKind::Down, c.t_star_ms - 300}, {UptimeKind::Up, c.window_open(round) + 100}};
        } else {
          complies = false;
        }
      } else if (busy(rng)) {
        events.push_back({c.round_start(round) + 1 + static_cast<Millis>(i) * 30});
        complies = false;
      }
      s.expected[c.ordinal(round)] += complies;
    }
    s.consent.push_back(consent);
    s.activity.push_back(events);
    s.uptime.push_back(uptime);
  }
  return s;
}

std::vector<std::int64_t> loopback_run(const ExperimentConfig& config, const Script& script, Fault fault) {
  SystemClock clock;
  CounterService service(CounterState(config), clock);
  LineServer server(Endpoint{"127.0.0.1", 0}, [&](std::string_view l) { return service.handle(l); });
  server.set_ticker(20, [&] {
    service.tick();
    if (service.all_closed()) server.stop();
  });
  std::thread server_thread([&] { server.run(); });
  const Endpoint at{"127.0.0.1", server.port()};

  ClientOptions options;
  options.prompt_lead_ms = 1'000;
  options.start_tolerance_ms = 500;
  options.sync_samples = 4;
  options.retry_interval_ms = 150;
  options.initial_sync_attempts = 5;

  std::vector<std::thread> clients;
  for (std::size_t i = 0; i < script.consent.size(); ++i) {
    clients.emplace_back([&, i] {
      ScriptedConsent consent = script.consent[i];
      ScriptedActivity activity(script.activity[i]);
      ScriptedUptime uptime(script.uptime[i]);
      ScriptedSurvey survey;
      char nonce[32];
      std::snprintf(nonce, sizeof nonce, "loopback-%03zu", i);
      ClientMachine m(config, nonce, options, {consent, activity, uptime, survey});
      TcpTransport tcp(at, 500);
      FaultyTransport t(tcp, fault, sim::derive_seed(static_cast<std::uint64_t>(fault), i));
      SystemClock local;
      run_client(m, t, local);
    });
  }
  for (auto& t : clients) t.join();
  server_thread.join();

  std::vector<std::int64_t> out;
  for (const auto& t : service.tallies()) out.push_back(t.count);
  return out;
}

std::string join(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void loopback() {
  const auto start = Clock_::now();
  SystemClock clock;
  const auto config =
      ExperimentConfig::make("loopback", "e2e-secret", clock.now_ms() + 3'000, 10'000, kLoopbackRounds, 2'000, 3'000);
  const Script script = make_script(config, kLoopbackClients);

  std::vector<std::int64_t> plain, dup, lossy;
  std::thread a([&] { plain = loopback_run(config, script, Fault::None); });
  std::thread b([&] { dup = loopback_run(config, script, Fault::Duplicate); });
  std::thread c([&] { lossy = loopback_run(config, script, Fault::Loss); });
  a.join();
  b.join();
  c.join();
  const double s = seconds_since(start);

  report(8, "end-to-end loopback",
         plain == script.expected && dup == plain && lossy == plain && s < kLoopbackLimitS,
         std::to_string(kLoopbackClients) + " clients x 3 runs; scripted " + join(script.expected) +
             ", clean " + join(plain) + ", duplicate " + join(dup) + ", 10% loss " + join(lossy) + "; " +
             num(s, 3) + " s (limit 60 s)");
}

// --- 9 ---------------------------------------------------------------------

pid_t spawn_counter(const std::vector<std::string>& args, const fs::path& out) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = -1;
  if (posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ) != 0) pid = -1;
  posix_spawn_file_actions_destroy(&actions);
  return pid;
}

std::optional<Endpoint> wait_listening(const fs::path& out) {
  for (int i = 0; i < 200; ++i) {
    std::ifstream in(out);
    std::string line;
    if (std::getline(in, line) && line.starts_with("listening on ") && !in.eof())
      return parse_endpoint(line.substr(13));
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  return std::nullopt;
}

bool same_tallies_and_seen(const CounterState& a, const CounterState& b) {
  return a.tallies() == b.tallies() && a.seen() == b.seen();
}

void crash_recovery() {
  const fs::path dir = fs::temp_directory_path() / ("rollcall-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "counter.log", cfg = dir / "exp.conf", out1 = dir / "run1.out",
                 out2 = dir / "run2.out";

  // CAL 0's window is open for the whole check.
  SystemClock clock;
  const auto config = ExperimentConfig::make("crash", "k", clock.now_ms() - 2'500, 120'000, 2, 2'000, 60'000);
  std::ofstream(cfg) << format_config(config);
  const RoundRef r0 = RoundRef::cal(0);
  auto line_for = [&](int k) { return encode(Report{r0, "crash-" + std::to_string(1000 + k), derive_token("k", r0)}); };

  // Reference counter that never crashes, fed the same requests.
  CounterState twin(config);
  const Millis inside = config.window_open(r0) + 1;
  std::string detail;
  bool ok = true;

  const std::vector<std::string> args{ROLLCALL_CLI_PATH, "counter", "--listen", "127.0.0.1:0", "--config",
                                      cfg.string(), "--log", log.string(), "--tick-ms", "50"};
  pid_t pid = spawn_counter(args, out1);
  auto ep = pid > 0 ? wait_listening(out1) : std::nullopt;
  if (!ep) {
    report(9, "crash recovery", false, "counter did not start");
    return;
  }
  {
    TcpTransport t(*ep, 2'000);
    for (int k = 0; k < 40; ++k) {
      const auto reply = t.exchange(line_for(k % 30));  // 10 resends
      const auto expect = encode(twin.accept_report(std::get<Report>(*decode(line_for(k % 30))), inside));
      if (reply != expect) ok = false;
    }
    t.exchange("SURVEY crash-1000 OBSTACLE -");
    twin.accept_survey(Survey{"crash-1000", SurveyCode::Obstacle, ""}, inside);
  }
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  { std::ofstream(log, std::ios::app) << "123 ACCEPT REPORT CAL 0 cra"; }  // torn write at the kill

  const auto replayed = CounterState::replay(config, read_log_file(log));
  const bool replay_ok = same_tallies_and_seen(replayed, twin) && replayed.surveys().size() == 1;
  detail += "after SIGKILL replay count " + std::to_string(replayed.tally(r0).count) + " seen " +
            std::to_string(replayed.seen().size()) + (replay_ok ? " (identical)" : " (DIFFERS)");

  pid = spawn_counter(args, out2);
  ep = pid > 0 ? wait_listening(out2) : std::nullopt;
  bool after_ok = ep.has_value();
  if (ep) {
    TcpTransport t(*ep, 2'000);
    for (int k = 20; k < 50; ++k) {  // 10 already counted, 20 new
      const auto reply = t.exchange(line_for(k));
      const auto expect = encode(twin.accept_report(std::get<Report>(*decode(line_for(k))), inside));
      if (reply != expect) after_ok = false;
    }
    ::kill(pid, SIGTERM);
    ::waitpid(pid, nullptr, 0);
  }
  const auto final_state = CounterState::replay(config, read_log_file(log));
  after_ok = after_ok && ok && same_tallies_and_seen(final_state, twin);
  detail += "; restarted counter answered like an uncrashed twin" + std::string(after_ok ? "" : " NOT") +
            ", final count " + std::to_string(final_state.tally(r0).count) + " (twin " +
            std::to_string(twin.tally(r0).count) + ")";
  fs::remove_all(dir);
  report(9, "crash recovery", replay_ok && after_ok, detail);
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{protocol_round_trip, token_goldens, time_sync,
                                                    stats_oracle,        decision_rule, null_calibration,
                                                    power,               loopback,      crash_recovery};
  for (const auto& run : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      std::cout << "FAIL criterion threw: " << e.what() << std::endl;
      ++failures;
    }
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}

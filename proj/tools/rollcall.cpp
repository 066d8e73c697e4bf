#include <poll.h>
#include <unistd.h>

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "rollcall/client.hpp"
#include "rollcall/counter.hpp"
#include "rollcall/event_log.hpp"
#include "rollcall/net.hpp"
#include "rollcall/sim.hpp"
#include "rollcall/stats.hpp"

using namespace rollcall;

namespace {

constexpr int kExitNoCoping = 0;
constexpr int kExitError = 1;
constexpr int kExitCoping = 2;
constexpr int kExitUnstable = 3;

std::atomic<bool> g_stop = false;

extern "C" void on_signal(int) { g_stop = true; }

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Endpoint require_endpoint(const std::string& text) {
  const auto e = parse_endpoint(text);
  if (!e) throw CLI::ValidationError("address", "expected host:port, got '" + text + "'");
  return *e;
}

// --- counter -----------------------------------------------------------------

struct CounterArgs {
  std::string listen = "127.0.0.1:7070";
  std::string config;
  std::string log;
  Millis tick_ms = 250;
  bool exit_when_done = false;
  bool no_fsync = false;
};

int run_counter(const CounterArgs& a) {
  const auto config = load_config(a.config);
  const Endpoint listen = require_endpoint(a.listen);

  const bool resume = std::filesystem::exists(a.log);
  FileEventLog file(a.log, !a.no_fsync);
  auto state = resume ? CounterState::replay(config, read_log_file(a.log), &file)
                      : CounterState(config, &file);
  if (resume) {
    std::size_t seen = state.seen().size();
    std::cerr << "replayed " << a.log << ": " << seen << " accepted reports\n";
  }

  SystemClock clock;
  CounterService service(std::move(state), clock);
  LineServer server(listen, [&](std::string_view line) { return service.handle(line); });

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.set_ticker(a.tick_ms, [&] {
    for (const auto round : service.tick()) {
      const auto tallies = service.tallies();
      std::cerr << "closed " << to_string(round) << " count "
                << tallies[config.ordinal(round)].count << '\n';
    }
    if (g_stop || (a.exit_when_done && service.all_closed())) server.stop();
  });

  std::cout << "listening on " << listen.host << ':' << server.port() << std::endl;
  server.run();

  for (const auto& t : service.tallies())
    std::cout << to_string(t.round) << '\t' << t.count << '\t' << (t.closed ? "closed" : "open") << '\n';
  return 0;
}

// --- client ------------------------------------------------------------------

/// Reads y/n from the terminal; no answer before the deadline means no.
class TerminalConsent final : public ConsentSource {
 public:
  explicit TerminalConsent(Clock& clock, const ClockEstimate& estimate)
      : clock_(clock), estimate_(estimate) {}

  bool ask(RoundRef round, Millis deadline) override {
    std::cout << "Round " << to_string(round)
              << ": stay away from keyboard and mouse for the whole test window? [y/N] "
              << std::flush;
    const Millis wait = deadline - estimate_.to_counter(clock_.now_ms());
    pollfd fd{STDIN_FILENO, POLLIN, 0};
    if (wait <= 0 || ::poll(&fd, 1, static_cast<int>(std::min<Millis>(wait, 1 << 30))) <= 0) {
      std::cout << "\n(no answer, skipping)\n";
      return false;
    }
    std::string line;
    if (!std::getline(std::cin, line)) return false;
    return !line.empty() && (line[0] == 'y' || line[0] == 'Y');
  }

 private:
  Clock& clock_;
  const ClockEstimate& estimate_;
};

class TerminalSurvey final : public SurveySource {
 public:
  std::optional<SurveyAnswer> answer(SurveyCode suggested) override {
    std::cout << "Why did this host not take part in the shutdown?\n"
              << "  FORGOT OBSTACLE CHANGED_MIND INTERFERENCE OTHER (empty = "
              << to_string(suggested) << ", '-' = skip): " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line == "-") return std::nullopt;
    auto code = line.empty() ? std::optional(suggested) : parse_survey_code(line);
    if (!code) code = SurveyCode::Other;
    std::cout << "Anything else? " << std::flush;
    std::string text;
    std::getline(std::cin, text);
    return SurveyAnswer{*code, text};
  }
};

/// Re-reads the file on every query so an external monitor can keep appending.
class ActivityFile final : public ActivitySource {
 public:
  explicit ActivityFile(std::filesystem::path path) : path_(std::move(path)) {}
  std::optional<Millis> first_event_in(Millis from, Millis to) override {
    ScriptedActivity events(read_activity_file(path_));
    return events.first_event_in(from, to);
  }

 private:
  std::filesystem::path path_;
};

class UptimeFile final : public UptimeSource {
 public:
  explicit UptimeFile(std::filesystem::path path) : path_(std::move(path)) {}
  std::optional<std::vector<UptimeRecord>> records() override {
    try {
      return read_uptime_file(path_);
    } catch (const InputFileError&) {
      return std::nullopt;
    }
  }

 private:
  std::filesystem::path path_;
};

struct ClientArgs {
  std::string config;
  std::string counter;
  std::string activity;
  std::string uptime;
  std::string nonce;
  std::string consent;
  std::string survey_code;
  std::string survey_text;
  bool no_sync = false;
  Millis timeout_ms = 5'000;
  Millis prompt_lead_ms = kDefaultPromptLeadMs;
  Millis retry_ms = 5'000;
};

std::string random_nonce() {
  std::random_device rd;
  std::uniform_int_distribution<int> hex(0, 15);
  std::string s(16, '0');
  for (auto& c : s) c = "0123456789abcdef"[hex(rd)];
  return s;
}

int run_client_cmd(const ClientArgs& a) {
  const auto config = load_config(a.config);
  const Endpoint counter = require_endpoint(a.counter);
  const std::string nonce = a.nonce.empty() ? random_nonce() : a.nonce;
  if (!is_valid_nonce(nonce)) throw CLI::ValidationError("--nonce", "must be 8-64 printable characters");

  ClientOptions options;
  options.prompt_lead_ms = a.prompt_lead_ms;
  options.retry_interval_ms = a.retry_ms;
  if (a.no_sync) options.sync_samples = 0;

  SystemClock clock;
  ClockEstimate shown{};
  ScriptedConsent scripted_consent = a.consent.empty() ? ScriptedConsent{} : read_consent_file(a.consent);
  TerminalConsent terminal_consent(clock, shown);
  ConsentSource& consent = a.consent.empty() ? static_cast<ConsentSource&>(terminal_consent)
                                             : scripted_consent;

  std::optional<SurveyCode> code;
  if (!a.survey_code.empty()) {
    code = parse_survey_code(a.survey_code);
    if (!code) throw CLI::ValidationError("--survey-code", "unknown code " + a.survey_code);
  }
  ScriptedSurvey scripted_survey(code, a.survey_text);
  TerminalSurvey terminal_survey;
  const bool scripted = !a.consent.empty() || code || !a.survey_text.empty();
  SurveySource& survey = scripted ? static_cast<SurveySource&>(scripted_survey) : terminal_survey;

  ActivityFile activity(a.activity);
  UptimeFile uptime(a.uptime);
  ClientMachine machine(config, nonce, options, {consent, activity, uptime, survey});
  TcpTransport transport(counter, a.timeout_ms);

  // The terminal prompt needs the live estimate to honour deadlines.
  struct Tracking final : Transport {
    Transport& inner;
    const ClientMachine& m;
    ClockEstimate& out;
    Tracking(Transport& i, const ClientMachine& mm, ClockEstimate& o) : inner(i), m(mm), out(o) {}
    std::optional<std::string> exchange(std::string_view line) override {
      auto r = inner.exchange(line);
      out = m.estimate();
      return r;
    }
  } tracking(transport, machine, shown);

  std::cerr << "client " << nonce << " for experiment " << config.experiment_id << '\n';
  run_client(machine, tracking, clock);

  for (const auto& o : machine.outcomes()) {
    std::cout << to_string(o.round) << '\t' << to_string(o.status);
    if (o.reason) std::cout << '\t' << to_string(*o.reason);
    std::cout << '\n';
  }
  if (machine.survey_sent()) std::cout << "SURVEY\tSENT\n";
  if (machine.failed()) {
    std::cerr << "counter unreachable at " << a.counter << '\n';
    return kExitError;
  }
  return 0;
}

// --- analyze -----------------------------------------------------------------

int exit_code_for(Verdict v) {
  switch (v) {
    case Verdict::CopingEvidence: return kExitCoping;
    case Verdict::NoCopingEvidence: return kExitNoCoping;
    case Verdict::UnstableCalibration: return kExitUnstable;
  }
  return kExitError;
}

void print_counts(std::ostream& out, const std::vector<std::int64_t>& counts) {
  for (std::size_t i = 0; i < counts.size(); ++i) out << (i ? "," : "") << counts[i];
}

int run_analyze(const std::string& log, const std::string& config_path, double alpha) {
  const auto records = read_log_file(log);
  std::optional<ExperimentConfig> config;
  if (!config_path.empty()) config = load_config(config_path);
  const auto dist = distribution_from_log(records, config ? &*config : nullptr);
  if (!dist.n_star) throw LogError("execution round is not closed");

  const auto summary = summarize(dist.counts);
  const auto r = analyze(summary, *dist.n_star, alpha);
  std::cout << "counts\t";
  print_counts(std::cout, dist.counts);
  std::cout << "\nn_star\t" << r.n_star << "\nmean\t" << fmt(summary.mean) << "\nstddev\t"
            << fmt(summary.stddev) << "\nstable\t" << (summary.stable ? "yes" : "no") << "\nz\t"
            << fmt(r.z) << "\np_of_z\t" << fmt(r.p_of_z) << "\nconfidence\t" << fmt(r.confidence)
            << "\nalpha\t" << fmt(alpha) << "\nverdict\t" << to_string(r.verdict) << '\n';
  return exit_code_for(r.verdict);
}

// --- simulate / power --------------------------------------------------------

struct SimArgs {
  std::size_t clients = 1000;
  int rounds = 10;
  double p = 0.5;
  double delta = 0.0;
  std::string scenario = "DEFENSE";
  std::uint64_t seed = 1;
  std::size_t runs = 1;
  double alpha = kDefaultAlpha;
  double loss = 0.0;
  unsigned threads = 0;
  std::string log;
  std::string deltas = "0,0.05,0.1,0.2,0.5,1";
};

sim::ScenarioSpec make_spec(const SimArgs& a) {
  sim::ScenarioSpec s;
  s.m_clients = a.clients;
  s.config = sim::compressed_config(a.rounds);
  s.p_participate = a.p;
  s.delta = a.delta;
  const auto scenario = sim::parse_scenario(a.scenario);
  if (!scenario) throw CLI::ValidationError("--scenario", "expected DEFENSE or COPING");
  s.scenario = *scenario;
  s.seed = a.seed;
  s.alpha = a.alpha;
  s.net.loss = a.loss;
  return s;
}

void print_run(std::size_t run, std::uint64_t seed, const std::vector<std::int64_t>& counts,
               std::int64_t n_star, const std::optional<AnalysisResult>& r) {
  std::cout << run << '\t' << seed << '\t';
  print_counts(std::cout, counts);
  std::cout << '\t' << n_star << '\t';
  if (r) {
    std::cout << fmt(r->z) << '\t' << fmt(r->confidence) << '\t' << to_string(r->verdict);
  } else {
    std::cout << "nan\tnan\tNO_ANALYSIS";
  }
  std::cout << '\n';
}

int run_simulate(const SimArgs& a) {
  auto spec = make_spec(a);
  if (a.runs == 0) throw CLI::ValidationError("--runs", "must be positive");
  if (!a.log.empty() && a.runs != 1) throw CLI::ValidationError("--log", "needs --runs 1");

  std::cout << "run\tseed\tcounts\tn_star\tz\tconfidence\tverdict\n";
  if (a.runs == 1) {
    spec.record_log = !a.log.empty();
    const auto o = sim::run_scenario(spec);
    print_run(0, spec.seed, o.counts, o.n_star, o.analysis);
    if (!a.log.empty()) {
      std::ofstream out(a.log, std::ios::binary | std::ios::trunc);
      out << o.counter_log;
      if (!out) throw LogError("cannot write " + a.log);
    }
    return 0;
  }

  const auto results = sim::monte_carlo(spec, a.runs, a.threads);
  std::size_t coping = 0, analyzed = 0;
  double z_sum = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    print_run(i, sim::derive_seed(spec.seed, i), r.counts, r.n_star, r.analysis);
    if (r.analysis) {
      ++analyzed;
      z_sum += r.analysis->z;
      coping += r.analysis->verdict == Verdict::CopingEvidence;
    }
  }
  std::cerr << "runs " << a.runs << " analyzed " << analyzed << " coping_rate "
            << fmt(static_cast<double>(coping) / static_cast<double>(a.runs)) << " mean_z "
            << fmt(analyzed ? z_sum / static_cast<double>(analyzed) : 0.0) << '\n';
  return 0;
}

int run_power(const SimArgs& a) {
  std::vector<double> deltas;
  std::stringstream in(a.deltas);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty()) throw CLI::ValidationError("--deltas", "bad number '" + item + "'");
    deltas.push_back(d);
  }
  const auto rows = sim::power_curve(make_spec(a), deltas, a.runs, a.alpha, a.threads);
  std::cout << "delta\truns\tanalyzed\tdetection_rate\tstderr\tmean_z\n";
  for (const auto& r : rows)
    std::cout << fmt(r.delta) << '\t' << r.runs << '\t' << r.analyzed << '\t' << fmt(r.detection_rate)
              << '\t' << fmt(r.rate_stderr) << '\t' << fmt(r.mean_z) << '\n';
  return 0;
}

void add_sim_options(CLI::App* cmd, SimArgs& a) {
  cmd->add_option("--clients", a.clients, "Simulated clients M")->check(CLI::PositiveNumber);
  cmd->add_option("--rounds", a.rounds, "Calibration rounds n")->check(CLI::Range(2, 100'000));
  cmd->add_option("--p", a.p, "Participation probability")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--seed", a.seed, "Base seed");
  cmd->add_option("--alpha", a.alpha, "Significance level")->check(CLI::Range(1e-12, 0.5));
  cmd->add_option("--loss", a.loss, "Per-message loss probability")->check(CLI::Range(0.0, 0.99));
  cmd->add_option("--threads", a.threads, "Worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rollcall: synchronized no-interaction experiment counter, client and analysis"};
  app.require_subcommand(1);

  CounterArgs counter;
  auto* c = app.add_subcommand("counter", "Run the tally service");
  c->add_option("--listen", counter.listen, "host:port to listen on (port 0 picks one)");
  c->add_option("--config", counter.config, "Experiment config")->required()->check(CLI::ExistingFile);
  c->add_option("--log", counter.log, "Append-only event log (replayed if present)")->required();
  c->add_option("--tick-ms", counter.tick_ms, "Round-closing interval")->check(CLI::Range(1, 60'000));
  c->add_flag("--exit-when-done", counter.exit_when_done, "Stop once every round has closed");
  c->add_flag("--no-fsync", counter.no_fsync, "Skip fsync after each log record");

  ClientArgs client;
  auto* cl = app.add_subcommand("client", "Take part in an experiment");
  cl->add_option("--config", client.config, "Experiment config")->required()->check(CLI::ExistingFile);
  cl->add_option("--counter", client.counter, "Counter host:port")->required();
  cl->add_option("--activity", client.activity, "Input-event file, one ms timestamp per line")
      ->required()->check(CLI::ExistingFile);
  cl->add_option("--uptime", client.uptime, "Power records, `DOWN <ms>` / `UP <ms>` per line")
      ->required()->check(CLI::ExistingFile);
  cl->add_option("--nonce", client.nonce, "Client identifier (random if omitted)");
  cl->add_option("--consent", client.consent, "Scripted answers, `<CAL|EXE> <index> <yes|no>` per line")
      ->check(CLI::ExistingFile);
  cl->add_option("--survey-code", client.survey_code, "Questionnaire answer code");
  cl->add_option("--survey-text", client.survey_text, "Questionnaire free text");
  cl->add_flag("--no-sync", client.no_sync, "Trust the local clock");
  cl->add_option("--timeout-ms", client.timeout_ms, "Per-exchange network timeout")->check(CLI::PositiveNumber);
  cl->add_option("--prompt-lead-ms", client.prompt_lead_ms, "Ask this long before each round")
      ->check(CLI::NonNegativeNumber);
  cl->add_option("--retry-ms", client.retry_ms, "Delay between report retries")->check(CLI::PositiveNumber);

  std::string log, config_path;
  double alpha = kDefaultAlpha;
  auto* an = app.add_subcommand("analyze", "Decide from a counter log");
  an->add_option("--log", log, "Counter event log")->required()->check(CLI::ExistingFile);
  an->add_option("--config", config_path, "Config to replay the log against")->check(CLI::ExistingFile);
  an->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(1e-12, 0.5));

  SimArgs sim_args;
  auto* sm = app.add_subcommand("simulate", "Run simulated experiments");
  add_sim_options(sm, sim_args);
  sm->add_option("--delta", sim_args.delta, "Coping strength")->check(CLI::Range(0.0, 1.0));
  sm->add_option("--scenario", sim_args.scenario, "DEFENSE or COPING");
  sm->add_option("--runs", sim_args.runs, "Independent runs");
  sm->add_option("--log", sim_args.log, "Write the counter log of a single run");

  SimArgs power_args;
  power_args.runs = 200;
  auto* pw = app.add_subcommand("power", "Detection rate versus coping strength");
  add_sim_options(pw, power_args);
  pw->add_option("--deltas", power_args.deltas, "Comma-separated coping strengths");
  pw->add_option("--runs", power_args.runs, "Runs per delta (>= 100)")->check(CLI::Range(100, 10'000'000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c) return run_counter(counter);
    if (*cl) return run_client_cmd(client);
    if (*an) return run_analyze(log, config_path, alpha);
    if (*sm) return run_simulate(sim_args);
    if (*pw) return run_power(power_args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "rollcall: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

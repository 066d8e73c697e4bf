#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rollcall/client.hpp"
#include "rollcall/counter.hpp"
#include "rollcall/experiment.hpp"
#include "rollcall/stats.hpp"

namespace rollcall::sim {

/// DEFENSE: execution participation probability p. COPING: p * (1 - delta).
enum class Scenario { Defense, Coping };

std::string_view to_string(Scenario scenario);
std::optional<Scenario> parse_scenario(std::string_view word);

struct NetworkModel {
  Millis latency_min_ms = 5;
  Millis latency_max_ms = 50;
  /// Independent drop probability per message and direction.
  double loss = 0.0;
  /// Extra one-way delay on the client-to-counter path.
  Millis asymmetry_ms = 0;
  /// Driver-side wait for a reply before reporting a send failure.
  Millis request_timeout_ms = 250;
};

/// Desk-scale schedule: delta_tau 2 s, delta_t 10 s, grace 3 s, epoch 5 s.
ExperimentConfig compressed_config(int n_rounds, std::string secret = "sim-secret");

/// Client options scaled to the compressed schedule. Virtual clocks do not
/// drift, so one initial sync per client suffices.
ClientOptions sim_client_options();

struct ScenarioSpec {
  std::size_t m_clients = 1000;
  double p_participate = 0.5;
  double delta = 0.0;
  Scenario scenario = Scenario::Defense;
  std::uint64_t seed = 1;
  NetworkModel net;
  ExperimentConfig config = compressed_config(10);
  ClientOptions client = sim_client_options();
  /// Raw client clock offsets are drawn uniformly from +/- this bound; sync
  /// removes them.
  Millis max_clock_offset_ms = 30'000;
  double alpha = kDefaultAlpha;
  bool record_trace = false;
  bool record_log = false;

  /// Throws std::invalid_argument.
  void validate() const;
  double execution_probability() const;
};

/// All messages in a window are dropped.
struct LossBurst {
  Millis from_ms = 0;
  Millis to_ms = 0;
};

/// A client whose local clock runs `lag_ms` behind the counter and which
/// skips synchronization, so it acts late by lag_ms (early when negative).
struct ClockFault {
  std::size_t client = 0;
  Millis lag_ms = 0;
};

struct FaultPlan {
  bool duplicate_reports = false;
  /// Added to the network loss probability.
  double extra_loss = 0.0;
  std::vector<LossBurst> bursts;
  std::vector<ClockFault> clocks;
};

struct SimOutcome {
  std::vector<std::int64_t> counts;
  std::int64_t n_star = 0;
  std::optional<AnalysisResult> analysis;
  std::string analysis_error;
  /// Number of clients scripted to comply per round (CAL..., EXE).
  std::vector<std::int64_t> scripted;
  std::vector<SurveyRecord> surveys;
  /// `<t> <UP|DOWN|DROP_UP|DROP_DOWN|DUP> <client> <line>` per message.
  std::vector<std::string> event_trace;
  /// Counter log in the persisted format (when record_log).
  std::string counter_log;
  std::vector<std::vector<RoundOutcome>> client_outcomes;
  std::uint64_t events_processed = 0;
};

SimOutcome run_scenario(const ScenarioSpec& spec);
SimOutcome inject_faults(const ScenarioSpec& spec, const FaultPlan& faults);

/// Independent stream seed for (seed, a, b); SplitMix64 finalizer chain.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

struct RunSummary {
  std::vector<std::int64_t> counts;
  std::int64_t n_star = 0;
  std::optional<AnalysisResult> analysis;
};

/// `runs` independent scenarios with seeds derive_seed(spec.seed, run).
/// Runs are spread over `threads` workers (0 = hardware concurrency); the
/// result does not depend on the thread count.
std::vector<RunSummary> monte_carlo(const ScenarioSpec& spec, std::size_t runs,
                                    unsigned threads = 0);

struct PowerRow {
  double delta = 0.0;
  double detection_rate = 0.0;
  double mean_z = 0.0;
  std::size_t runs = 0;
  std::size_t analyzed = 0;
  double rate_stderr = 0.0;
};

/// For each delta, the COPING scenario is run `runs` (>= 100) times and the
/// fraction of COPING_EVIDENCE verdicts at alpha is reported.
std::vector<PowerRow> power_curve(const ScenarioSpec& base, std::span<const double> deltas,
                                  std::size_t runs, double alpha, unsigned threads = 0);

}  // namespace rollcall::sim

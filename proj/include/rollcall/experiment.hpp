#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rollcall {

/// Integer milliseconds. Absolute values are counter time since the Unix
/// epoch (or since virtual epoch 0 inside the simulator).
using Millis = std::int64_t;

enum class RoundKind : std::uint8_t { Cal, Exe };

std::string_view to_string(RoundKind kind);
std::optional<RoundKind> parse_round_kind(std::string_view word);

/// A calibration round (0-based index) or the single execution round.
/// The execution round always carries index 0.
struct RoundRef {
  RoundKind kind = RoundKind::Cal;
  int index = 0;

  static constexpr RoundRef cal(int i) { return {RoundKind::Cal, i}; }
  static constexpr RoundRef exe() { return {RoundKind::Exe, 0}; }

  bool is_exe() const { return kind == RoundKind::Exe; }

  friend auto operator<=>(const RoundRef&, const RoundRef&) = default;
};

std::string to_string(RoundRef round);

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, int line = 0);

  /// 1-based line of the offending config entry, 0 when not line-specific.
  int line() const { return line_; }

 private:
  int line_;
};

inline constexpr Millis kDefaultDeltaTauMs = 15 * 60 * 1000;
inline constexpr Millis kDefaultGraceMs = 5 * 60 * 1000;

/// Shared schedule and secret. Round i starts at epoch_ms + i*delta_t_ms;
/// the execution round starts at t_star_ms = epoch_ms + n_rounds*delta_t_ms.
struct ExperimentConfig {
  std::string experiment_id;
  std::string secret;
  Millis epoch_ms = 0;
  Millis delta_t_ms = 0;
  int n_rounds = 0;
  Millis delta_tau_ms = kDefaultDeltaTauMs;
  Millis t_star_ms = 0;
  Millis grace_ms = kDefaultGraceMs;

  /// Builds a config with t_star_ms derived from the schedule and validates it.
  static ExperimentConfig make(std::string experiment_id, std::string secret, Millis epoch_ms,
                               Millis delta_t_ms, int n_rounds,
                               Millis delta_tau_ms = kDefaultDeltaTauMs,
                               Millis grace_ms = kDefaultGraceMs);

  /// Throws ConfigError naming the violated invariant.
  void validate() const;

  bool has_round(RoundRef round) const;

  /// t_i for calibration rounds, t* for the execution round.
  Millis round_start(RoundRef round) const;
  Millis window_open(RoundRef round) const { return round_start(round) + delta_tau_ms; }
  Millis window_close(RoundRef round) const { return window_open(round) + grace_ms; }

  /// CAL 0 .. CAL n-1 followed by EXE.
  std::vector<RoundRef> rounds() const;

  /// Position of a round in rounds(); EXE maps to n_rounds.
  std::size_t ordinal(RoundRef round) const;
  RoundRef round_at(std::size_t ordinal) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown, duplicate or
/// malformed keys raise ConfigError carrying the line number.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Emits every field, suitable for parse_config.
std::string format_config(const ExperimentConfig& config);

}  // namespace rollcall

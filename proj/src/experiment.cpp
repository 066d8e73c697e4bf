#include "rollcall/experiment.hpp"

#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "rollcall/detail/text.hpp"

namespace rollcall {

std::string_view to_string(RoundKind kind) { return kind == RoundKind::Cal ? "CAL" : "EXE"; }

std::optional<RoundKind> parse_round_kind(std::string_view word) {
  if (word == "CAL") return RoundKind::Cal;
  if (word == "EXE") return RoundKind::Exe;
  return std::nullopt;
}

std::string to_string(RoundRef round) {
  return std::string(to_string(round.kind)) + " " + std::to_string(round.index);
}

ConfigError::ConfigError(const std::string& what, int line)
    : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

ExperimentConfig ExperimentConfig::make(std::string experiment_id, std::string secret,
                                        Millis epoch_ms, Millis delta_t_ms, int n_rounds,
                                        Millis delta_tau_ms, Millis grace_ms) {
  ExperimentConfig c;
  c.experiment_id = std::move(experiment_id);
  c.secret = std::move(secret);
  c.epoch_ms = epoch_ms;
  c.delta_t_ms = delta_t_ms;
  c.n_rounds = n_rounds;
  c.delta_tau_ms = delta_tau_ms;
  c.grace_ms = grace_ms;
  c.t_star_ms = epoch_ms + static_cast<Millis>(n_rounds) * delta_t_ms;
  c.validate();
  return c;
}

namespace {

bool has_whitespace(std::string_view s) {
  for (char c : s)
    if (detail::is_space(c)) return true;
  return false;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (experiment_id.empty() || has_whitespace(experiment_id))
    throw ConfigError("experiment_id must be non-empty without whitespace");
  if (secret.empty() || has_whitespace(secret))
    throw ConfigError("secret must be non-empty without whitespace");
  if (n_rounds < 2) throw ConfigError("n_rounds must be at least 2");
  if (delta_tau_ms <= 0) throw ConfigError("delta_tau_ms must be positive");
  if (delta_t_ms <= delta_tau_ms) throw ConfigError("delta_t_ms must exceed delta_tau_ms");
  if (grace_ms <= 0) throw ConfigError("grace_ms must be positive");
  if (delta_tau_ms + grace_ms >= delta_t_ms)
    throw ConfigError("delta_tau_ms + grace_ms must be below delta_t_ms");
  if (t_star_ms != epoch_ms + static_cast<Millis>(n_rounds) * delta_t_ms)
    throw ConfigError("t_star_ms must equal epoch_ms + n_rounds * delta_t_ms");
}

bool ExperimentConfig::has_round(RoundRef round) const {
  if (round.is_exe()) return round.index == 0;
  return round.index >= 0 && round.index < n_rounds;
}

Millis ExperimentConfig::round_start(RoundRef round) const {
  if (round.is_exe()) return t_star_ms;
  return epoch_ms + static_cast<Millis>(round.index) * delta_t_ms;
}

std::vector<RoundRef> ExperimentConfig::rounds() const {
  std::vector<RoundRef> out;
  out.reserve(static_cast<std::size_t>(n_rounds) + 1);
  for (int i = 0; i < n_rounds; ++i) out.push_back(RoundRef::cal(i));
  out.push_back(RoundRef::exe());
  return out;
}

std::size_t ExperimentConfig::ordinal(RoundRef round) const {
  return round.is_exe() ? static_cast<std::size_t>(n_rounds) : static_cast<std::size_t>(round.index);
}

RoundRef ExperimentConfig::round_at(std::size_t ordinal) const {
  return ordinal >= static_cast<std::size_t>(n_rounds) ? RoundRef::exe()
                                                       : RoundRef::cal(static_cast<int>(ordinal));
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::set<std::string, std::less<>> seen;
  bool have_t_star = false;
  std::string raw;
  int line_no = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected `key = value`", line_no);
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key", line_no);
    if (value.empty()) throw ConfigError("missing value for " + std::string(key), line_no);
    if (!seen.emplace(key).second) throw ConfigError("duplicate key " + std::string(key), line_no);

    auto integer = [&]() {
      const auto v = detail::parse_int(value);
      if (!v) throw ConfigError("value of " + std::string(key) + " is not an integer", line_no);
      return *v;
    };
    auto word = [&]() {
      if (has_whitespace(value))
        throw ConfigError("value of " + std::string(key) + " contains whitespace", line_no);
      return std::string(value);
    };

    if (key == "experiment_id") {
      c.experiment_id = word();
    } else if (key == "secret") {
      c.secret = word();
    } else if (key == "epoch_ms") {
      c.epoch_ms = integer();
    } else if (key == "delta_t_ms") {
      c.delta_t_ms = integer();
    } else if (key == "n_rounds") {
      const auto n = integer();
      if (n < 0 || n > 1'000'000) throw ConfigError("n_rounds out of range", line_no);
      c.n_rounds = static_cast<int>(n);
    } else if (key == "delta_tau_ms") {
      c.delta_tau_ms = integer();
    } else if (key == "t_star_ms") {
      c.t_star_ms = integer();
      have_t_star = true;
    } else if (key == "grace_ms") {
      c.grace_ms = integer();
    } else {
      throw ConfigError("unknown key " + std::string(key), line_no);
    }
  }

  for (const char* required : {"experiment_id", "secret", "epoch_ms", "delta_t_ms", "n_rounds"})
    if (!seen.contains(std::string_view(required)))
      throw ConfigError(std::string("missing key ") + required);
  if (!have_t_star) c.t_star_ms = c.epoch_ms + static_cast<Millis>(c.n_rounds) * c.delta_t_ms;
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_config(in);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in);
}

std::string format_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "experiment_id = " << c.experiment_id << '\n'
      << "secret = " << c.secret << '\n'
      << "epoch_ms = " << c.epoch_ms << '\n'
      << "delta_t_ms = " << c.delta_t_ms << '\n'
      << "n_rounds = " << c.n_rounds << '\n'
      << "delta_tau_ms = " << c.delta_tau_ms << '\n'
      << "t_star_ms = " << c.t_star_ms << '\n'
      << "grace_ms = " << c.grace_ms << '\n';
  return out.str();
}

}  // namespace rollcall

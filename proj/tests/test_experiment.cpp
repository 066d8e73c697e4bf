#include <gtest/gtest.h>

#include "rollcall/experiment.hpp"

using namespace rollcall;

namespace {

constexpr const char* kMinimal =
    "experiment_id = exp-1\n"
    "secret = s3cr3t\n"
    "epoch_ms = 1000\n"
    "delta_t_ms = 86400000\n"
    "n_rounds = 5\n";

int error_line(std::string_view text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST(Config, DefaultsAndDerivedTStar) {
  const auto c = parse_config_text(kMinimal);
  EXPECT_EQ(c.experiment_id, "exp-1");
  EXPECT_EQ(c.secret, "s3cr3t");
  EXPECT_EQ(c.delta_tau_ms, 900'000);
  EXPECT_EQ(c.grace_ms, 300'000);
  EXPECT_EQ(c.t_star_ms, 1000 + 5 * 86'400'000LL);
  EXPECT_EQ(c.round_start(RoundRef::cal(2)), 1000 + 2 * 86'400'000LL);
  EXPECT_EQ(c.round_start(RoundRef::exe()), c.t_star_ms);
  EXPECT_EQ(c.window_open(RoundRef::cal(0)), 1000 + 900'000);
  EXPECT_EQ(c.window_close(RoundRef::cal(0)), 1000 + 1'200'000);
}

TEST(Config, RoundsAndOrdinals) {
  const auto c = parse_config_text(kMinimal);
  const auto rounds = c.rounds();
  ASSERT_EQ(rounds.size(), 6u);
  EXPECT_EQ(rounds.back(), RoundRef::exe());
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    EXPECT_EQ(c.ordinal(rounds[i]), i);
    EXPECT_EQ(c.round_at(i), rounds[i]);
  }
  EXPECT_TRUE(c.has_round(RoundRef::cal(4)));
  EXPECT_FALSE(c.has_round(RoundRef::cal(5)));
  EXPECT_FALSE(c.has_round(RoundRef::cal(-1)));
  EXPECT_FALSE(c.has_round(RoundRef{RoundKind::Exe, 1}));
}

TEST(Config, CommentsAndWhitespace) {
  const auto c = parse_config_text(std::string("# header\n\n") + kMinimal + "grace_ms = 1000   # short\n");
  EXPECT_EQ(c.grace_ms, 1000);
}

TEST(Config, FormatRoundTrips) {
  auto c = ExperimentConfig::make("e", "k", 5, 10'000, 3, 2'000, 3'000);
  EXPECT_EQ(parse_config_text(format_config(c)), c);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line(std::string(kMinimal) + "bogus = 1\n"), 6);
  EXPECT_EQ(error_line(std::string(kMinimal) + "secret = again\n"), 6);
  EXPECT_EQ(error_line("experiment_id = e\nsecret = k\nepoch_ms = soon\n"), 3);
  EXPECT_EQ(error_line("experiment_id e\n"), 1);
}

TEST(Config, MissingKeyIsRejected) {
  EXPECT_THROW(parse_config_text("experiment_id = e\nsecret = k\n"), ConfigError);
}

TEST(Config, InvariantsAreEnforced) {
  EXPECT_THROW(ExperimentConfig::make("e", "k", 0, 10'000, 0), ConfigError);
  EXPECT_THROW(ExperimentConfig::make("e", "k", 0, 0, 3, 0, 0), ConfigError);
  // Windows of consecutive rounds must not overlap.
  EXPECT_THROW(ExperimentConfig::make("e", "k", 0, 10'000, 3, 8'000, 2'000), ConfigError);
  EXPECT_THROW(ExperimentConfig::make("e", "", 0, 10'000, 3, 2'000, 3'000), ConfigError);
  EXPECT_THROW(parse_config_text(std::string(kMinimal) + "t_star_ms = 5\n"), ConfigError);
  EXPECT_NO_THROW(parse_config_text(std::string(kMinimal) + "t_star_ms = 432001000\n"));
}

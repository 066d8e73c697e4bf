#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace rollcall {

class StatsError : public std::runtime_error {
 public:
  enum class Code { TooFewRounds, NegativeCount, AllZero, DegenerateCalibration, InvalidAlpha };

  StatsError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

inline constexpr double kDefaultAlpha = 0.05;
inline constexpr std::int64_t kStabilityRatio = 10;

/// Calibration counts with their sample mean and (n-1) standard deviation.
/// stable holds when min > 0 and max/min <= 10.
struct CalibrationDistribution {
  std::vector<std::int64_t> counts;
  double mean = 0.0;
  double stddev = 0.0;
  bool stable = false;
};

enum class Verdict { CopingEvidence, NoCopingEvidence, UnstableCalibration };

std::string_view to_string(Verdict verdict);

struct AnalysisResult {
  std::int64_t n_star = 0;
  double z = 0.0;
  double p_of_z = 0.0;
  double confidence = 0.0;  // 1 - P(z)
  Verdict verdict = Verdict::NoCopingEvidence;
  double alpha = kDefaultAlpha;
};

CalibrationDistribution summarize(std::span<const std::int64_t> counts);

/// (n_star - mean) / stddev. Throws DegenerateCalibration when stddev is 0.
double z_score(const CalibrationDistribution& dist, std::int64_t n_star);

/// Standard normal CDF.
double normal_cdf(double z);

/// One-sided test. COPING_EVIDENCE iff P(z) < alpha (equivalently
/// z < -z_alpha); an unstable calibration always yields
/// UNSTABLE_CALIBRATION. alpha must lie in (0, 0.5].
AnalysisResult analyze(const CalibrationDistribution& dist, std::int64_t n_star,
                       double alpha = kDefaultAlpha);

}  // namespace rollcall

#include "rollcall/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace rollcall {

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::CopingEvidence: return "COPING_EVIDENCE";
    case Verdict::NoCopingEvidence: return "NO_COPING_EVIDENCE";
    case Verdict::UnstableCalibration: return "UNSTABLE_CALIBRATION";
  }
  return "NO_COPING_EVIDENCE";
}

CalibrationDistribution summarize(std::span<const std::int64_t> counts) {
  using Code = StatsError::Code;
  if (counts.size() < 2)
    throw StatsError(Code::TooFewRounds, "at least two calibration rounds are required");
  if (std::any_of(counts.begin(), counts.end(), [](auto c) { return c < 0; }))
    throw StatsError(Code::NegativeCount, "calibration counts must be non-negative");
  if (std::all_of(counts.begin(), counts.end(), [](auto c) { return c == 0; }))
    throw StatsError(Code::AllZero, "all calibration counts are zero");

  // Welford's update.
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t k = 0;
  for (const auto c : counts) {
    ++k;
    const double x = static_cast<double>(c);
    const double d = x - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (x - mean);
  }

  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  CalibrationDistribution out;
  out.counts.assign(counts.begin(), counts.end());
  out.mean = mean;
  out.stddev = std::sqrt(std::max(0.0, m2 / static_cast<double>(counts.size() - 1)));
  out.stable = *lo > 0 && *hi <= kStabilityRatio * *lo;
  return out;
}

double z_score(const CalibrationDistribution& dist, std::int64_t n_star) {
  if (!(dist.stddev > 0.0))
    throw StatsError(StatsError::Code::DegenerateCalibration,
                     "calibration counts do not fluctuate (stddev = 0)");
  return (static_cast<double>(n_star) - dist.mean) / dist.stddev;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

AnalysisResult analyze(const CalibrationDistribution& dist, std::int64_t n_star, double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5))
    throw StatsError(StatsError::Code::InvalidAlpha, "alpha must lie in (0, 0.5]");

  AnalysisResult r;
  r.n_star = n_star;
  r.alpha = alpha;
  r.z = z_score(dist, n_star);
  r.p_of_z = normal_cdf(r.z);
  r.confidence = 1.0 - r.p_of_z;
  if (!dist.stable)
    r.verdict = Verdict::UnstableCalibration;
  else
    r.verdict = r.p_of_z < alpha ? Verdict::CopingEvidence : Verdict::NoCopingEvidence;
  return r;
}

}  // namespace rollcall

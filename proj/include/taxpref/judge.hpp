#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "taxpref/gateway.hpp"
#include "taxpref/prompt_forge.hpp"
#include "taxpref/response_pool.hpp"
#include "taxpref/templates.hpp"

namespace taxpref {

struct JudgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Integer scores in [1,10] on the four annotation dimensions.
struct DimensionScores {
  int relevance = 0;
  int correctness = 0;
  int clarity = 0;
  int completeness = 0;
};

struct CalibratedScores {
  double relevance = 0.0;
  double correctness = 0.0;
  double clarity = 0.0;
  double completeness = 0.0;

  bool operator==(const CalibratedScores&) const = default;
};

/// Raw scores from one positioned comparison (first/second as presented).
struct PositionedJudgment {
  std::string prompt_id;
  std::string first_response_id;
  std::string second_response_id;
  DimensionScores scores_first;
  DimensionScores scores_second;
  std::string annotator_model_id;
};

enum class ComparisonOutcome { a_preferred, b_preferred, tie };

/// Position-calibrated result: per-dimension scores averaged over both
/// presentation orders, overall as the weighted dimension mean.
struct CalibratedComparison {
  std::string prompt_id;
  std::string response_a_id;
  std::string response_b_id;
  CalibratedScores calibrated_a;
  CalibratedScores calibrated_b;
  double overall_a = 0.0;
  double overall_b = 0.0;
  ComparisonOutcome outcome = ComparisonOutcome::tie;
  std::string annotator_model_id;
};

struct AnnotationWeights {
  double relevance = 0.25;
  double correctness = 0.25;
  double clarity = 0.25;
  double completeness = 0.25;

  void validate() const;  // non-negative, sum to 1 within 1e-12
};

struct PreferenceLabel {
  std::string chosen_id;
  std::string rejected_id;
};

class Judge {
 public:
  Judge(Gateway& gateway, ForgeOptions options) : gateway_(gateway), options_(options) {}

  /// One annotator call; both score blocks parsed strictly (four integer
  /// dimensions each, range [1,10]). Parse retries bump the seed.
  PositionedJudgment judge_once(const std::string& prompt_id, std::string_view prompt_text,
                                const Response& first, const Response& second,
                                const std::string& annotator, const PromptTemplate& tpl,
                                std::uint64_t seed);

  /// Balanced Position Calibration: judge (a,b) and (b,a), average each
  /// response's dimension scores across the two positions. Each positioned
  /// call derives its seed from the presentation order, so swapping the
  /// arguments replays the identical pair of calls. If either positioned
  /// call fails the whole comparison fails.
  CalibratedComparison judge_calibrated(const std::string& prompt_id,
                                        std::string_view prompt_text, const Response& a,
                                        const Response& b, const std::string& annotator,
                                        const PromptTemplate& tpl, std::uint64_t seed,
                                        const AnnotationWeights& weights = {});

 private:
  Gateway& gateway_;
  ForgeOptions options_;
};

/// Higher overall wins; exact equality is a tie and yields no label.
std::optional<PreferenceLabel> derive_label(const CalibratedComparison& c);

}  // namespace taxpref
